"""Linearized radial power flow over an assembled network.

Flows come from a post-order walk (each edge carries the total demand behind
it), voltages from a pre-order walk down from the substations at 1.0 pu.
Losses are ignored, so conservation holds exactly. Per-unit drops use a
voltage base per edge kind; the HV feeder is modelled lossless.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ValidationError
from .network import DistributionNetwork, NetEdge
from .primary import (
    DEFAULT_FEEDER_CAP_KW,
    DEFAULT_PRIMARY_CAP_KW,
    DEFAULT_PRIMARY_V_BASE_V,
    DEFAULT_SECONDARY_V_BASE_V,
    DEFAULT_V_MIN_PU,
)
from .secondary import DEFAULT_SECONDARY_CAP_KW

DEFAULT_V_BASE_V = {
    "feeder": DEFAULT_PRIMARY_V_BASE_V,
    "primary": DEFAULT_PRIMARY_V_BASE_V,
    "secondary": DEFAULT_SECONDARY_V_BASE_V,
}
DEFAULT_CAPACITY_KW = {
    "feeder": DEFAULT_FEEDER_CAP_KW,
    "primary": DEFAULT_PRIMARY_CAP_KW,
    "secondary": DEFAULT_SECONDARY_CAP_KW,
}


@dataclass
class FlowSolution:
    voltage_pu: dict[str, float]
    flow_kw: dict[str, float]
    loading: dict[str, float]


def _drop_pu(resistance_ohm: float, flow_kw: float, v_base_v: float) -> float:
    # ohms times watts over volts squared is dimensionless (pu)
    return resistance_ohm * flow_kw * 1000.0 / v_base_v**2


def run_ldf(
    net: DistributionNetwork,
    v_base_v: dict[str, float] | None = None,
    capacity_kw: dict[str, float] | None = None,
) -> FlowSolution:
    """Solve flows and voltages on a forest rooted at its substations."""
    bases = dict(DEFAULT_V_BASE_V, **(v_base_v or {}))
    caps = dict(DEFAULT_CAPACITY_KW, **(capacity_kw or {}))

    subs = sorted(nid for nid, n in net.nodes.items() if n.kind == "substation")
    voltage: dict[str, float] = {}
    flow: dict[str, float] = {}
    parent_edge: dict[str, tuple[str, NetEdge]] = {}
    subtree: dict[str, float] = {}
    visited: set[str] = set()

    for sub in subs:
        order = [sub]
        visited.add(sub)
        stack = [sub]
        while stack:
            n = stack.pop()
            skip = parent_edge[n][1] if n in parent_edge else None
            for nbr, e in net.adjacency[n]:
                if e is skip:
                    skip = None  # a parallel copy of the parent edge is a cycle
                    continue
                if nbr in visited:
                    raise ValidationError(f"network is not radial near node {nbr!r}")
                visited.add(nbr)
                parent_edge[nbr] = (n, e)
                order.append(nbr)
                stack.append(nbr)
        # accumulate demand leaf-first, then push voltages root-first
        for n in reversed(order):
            subtree[n] = net.nodes[n].demand_kw + sum(
                subtree[c]
                for c, _ in net.adjacency[n]
                if c in parent_edge and parent_edge[c][0] == n
            )
        voltage[sub] = 1.0
        for n in order[1:]:
            parent, e = parent_edge[n]
            flow[e.edge_id] = subtree[n] if e.v == n else -subtree[n]
            voltage[n] = voltage[parent] - _drop_pu(e.resistance_ohm, subtree[n], bases[e.kind])

    missing = sorted(set(net.nodes) - visited)
    if missing:
        raise ValidationError(
            f"{len(missing)} node(s) unreachable from any substation: {missing[:10]}"
        )

    kind_of = {e.edge_id: e.kind for e in net.edges}
    loading = {eid: abs(kw) / caps[kind_of[eid]] for eid, kw in flow.items()}
    return FlowSolution(voltage, flow, loading)


@dataclass
class OperationalReport:
    violations: list[str]
    min_voltage_pu: float
    max_voltage_pu: float
    max_loading: float
    voltage_monotone: bool

    @property
    def ok(self) -> bool:
        return not self.violations


def check_operational(
    net: DistributionNetwork,
    solution: FlowSolution,
    v_min: float = DEFAULT_V_MIN_PU,
    v_max: float = 1.0,
) -> OperationalReport:
    """Band and loading checks plus a sanity flag for voltage monotonicity."""
    violations: list[str] = []
    for nid in sorted(solution.voltage_pu):
        v = solution.voltage_pu[nid]
        if v < v_min - 1e-12:
            violations.append(f"node {nid}: voltage {v:.4f} pu below {v_min}")
        elif v > v_max + 1e-12:
            violations.append(f"node {nid}: voltage {v:.4f} pu above {v_max}")
    for eid in sorted(solution.loading):
        if solution.loading[eid] > 1.0 + 1e-12:
            violations.append(f"edge {eid}: loading {solution.loading[eid]:.3f} over capacity")

    monotone = True
    for e in net.edges:
        # power leaves from the higher-voltage end, so the drop across the
        # edge must carry the same sign as the flow
        drop_to_v = solution.voltage_pu[e.u] - solution.voltage_pu[e.v]
        if drop_to_v * solution.flow_kw[e.edge_id] < -1e-12:
            monotone = False

    voltages = list(solution.voltage_pu.values())
    return OperationalReport(
        violations,
        min(voltages),
        max(voltages),
        max(solution.loading.values(), default=0.0),
        monotone,
    )


@dataclass
class FlowHistogram:
    bin_edges_kw: list[float]
    counts: list[int]
    zeros: int = 0

    def total(self) -> int:
        return self.zeros + sum(self.counts)


def _log_bins(lo: float, hi: float, n: int) -> list[float]:
    if hi <= lo:
        hi = lo * 1.000001
    ratio = (hi / lo) ** (1.0 / n)
    return [lo * ratio**i for i in range(n + 1)]


def flow_histogram(flows: list[float], bin_edges: list[float]) -> FlowHistogram:
    counts = [0] * (len(bin_edges) - 1)
    zeros = 0
    for f in flows:
        mag = abs(f)
        if mag <= 0.0:
            zeros += 1
            continue
        # place on the last bin whose left edge is not above the value
        k = len(bin_edges) - 2
        for i in range(len(bin_edges) - 1):
            if mag < bin_edges[i + 1]:
                k = i
                break
        counts[k] += 1
    return FlowHistogram(list(bin_edges), counts, zeros)


def flow_spectrum(flows: list[float], num_bins: int = 16) -> FlowHistogram:
    """Log-binned magnitude histogram for one network's edge flows."""
    positive = [abs(f) for f in flows if abs(f) > 0.0]
    if positive:
        edges = _log_bins(min(positive), max(positive), num_bins)
    else:
        edges = _log_bins(1.0, 10.0, num_bins)
    return flow_histogram(flows, edges)


@dataclass
class ComparisonReport:
    deviation_pu: dict[str, float]
    fraction_within_1pct: float
    histogram_a: FlowHistogram
    histogram_b: FlowHistogram
    total_length_m_a: float
    total_length_m_b: float
    solution_a: FlowSolution | None = field(repr=False, default=None)
    solution_b: FlowSolution | None = field(repr=False, default=None)


def compare(
    net_a: DistributionNetwork,
    net_b: DistributionNetwork,
    num_bins: int = 16,
) -> ComparisonReport:
    """Residence voltage deviations and flow spectra for two networks.

    Both networks must serve the same residence ids; deviations are
    a minus b. The histograms share log-spaced bins so they overlay.
    """
    res_a = {n.node_id for n in net_a.residences()}
    res_b = {n.node_id for n in net_b.residences()}
    if res_a != res_b:
        only_a = sorted(res_a - res_b)[:5]
        only_b = sorted(res_b - res_a)[:5]
        raise ValidationError(
            f"residence sets differ (only in first: {only_a}, only in second: {only_b})"
        )

    sol_a = run_ldf(net_a)
    sol_b = run_ldf(net_b)
    deviation = {
        rid: sol_a.voltage_pu[rid] - sol_b.voltage_pu[rid] for rid in sorted(res_a)
    }
    within = sum(1 for d in deviation.values() if abs(d) <= 0.01)
    fraction = within / len(deviation) if deviation else 1.0

    magnitudes = [abs(f) for f in list(sol_a.flow_kw.values()) + list(sol_b.flow_kw.values())]
    positive = [m for m in magnitudes if m > 0.0]
    if positive:
        edges = _log_bins(min(positive), max(positive), num_bins)
    else:
        edges = _log_bins(1.0, 10.0, num_bins)
    hist_a = flow_histogram(list(sol_a.flow_kw.values()), edges)
    hist_b = flow_histogram(list(sol_b.flow_kw.values()), edges)

    return ComparisonReport(
        deviation,
        fraction,
        hist_a,
        hist_b,
        net_a.total_length_m(),
        net_b.total_length_m(),
        sol_a,
        sol_b,
    )
