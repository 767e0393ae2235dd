"""Embedded linear and mixed-integer optimization.

A dense bounded-variable tableau simplex underneath a branch-and-bound
loop over binary variables. Variable bounds live in the pricing and ratio
rules instead of materializing as tableau rows, so branching never grows
the matrix: a child node reuses its parent's optimal basis and repairs the
bound changes with a few dual pivots instead of a cold two-phase solve.
Integer candidates can be screened by a lazy-cut oracle, which returns
violated constraints to add on the fly; this is how cycle elimination is
wired in without enumerating every cycle up front.

Everything is deterministic: pivot selection, branching (most fractional,
ties to the lowest variable index), and node ordering (best bound, ties to
insertion order).
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InternalError, ValidationError

CONTINUOUS = "continuous"
BINARY = "binary"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NODE_LIMIT = "node_limit"

LESS_EQUAL = "<="
GREATER_EQUAL = ">="
EQUAL = "="

_PIVOT_TOL = 1e-9
_FEAS_TOL = 1e-7
_DUAL_TOL = 1e-6
_DEGENERATE_PIVOT_LIMIT = 1000
_MAX_ITERATIONS = 200_000
_REFACTOR_INTERVAL = 300


@dataclass
class Variable:
    name: str
    kind: str = CONTINUOUS
    lower: float = 0.0
    upper: float = math.inf


@dataclass
class Constraint:
    coeffs: dict[int, float]
    sense: str
    rhs: float
    name: str = ""


@dataclass
class Solution:
    status: str
    values: np.ndarray | None = None
    objective: float | None = None
    nodes_explored: int = 0
    cuts_added: int = 0

    def value(self, index: int) -> float:
        assert self.values is not None
        return float(self.values[index])


class LinearModel:
    """A minimization model over continuous and binary variables."""

    def __init__(self, name: str = "model") -> None:
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective: dict[int, float] = {}

    def add_variable(
        self,
        name: str,
        kind: str = CONTINUOUS,
        lower: float = 0.0,
        upper: float = math.inf,
    ) -> int:
        if kind not in (CONTINUOUS, BINARY):
            raise ValidationError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lower, upper = max(lower, 0.0), min(upper, 1.0)
        self.variables.append(Variable(name, kind, lower, upper))
        return len(self.variables) - 1

    def add_constraint(self, coeffs: dict[int, float], sense: str, rhs: float, name: str = "") -> int:
        if sense not in (LESS_EQUAL, GREATER_EQUAL, EQUAL):
            raise ValidationError(f"unknown constraint sense {sense!r}")
        self.constraints.append(Constraint(dict(coeffs), sense, rhs, name))
        return len(self.constraints) - 1

    def set_objective(self, coeffs: dict[int, float]) -> None:
        self.objective = dict(coeffs)

    def validate(self) -> None:
        n = len(self.variables)
        for var in self.variables:
            if var.lower > var.upper:
                raise ValidationError(f"variable {var.name}: empty bound box [{var.lower}, {var.upper}]")
            for bound in (var.lower, var.upper):
                if math.isnan(bound):
                    raise ValidationError(f"variable {var.name}: NaN bound")
        for where, coeffs in itertools.chain(
            [("objective", self.objective)],
            ((c.name or f"constraint {i}", c.coeffs) for i, c in enumerate(self.constraints)),
        ):
            for idx, coef in coeffs.items():
                if not 0 <= idx < n:
                    raise ValidationError(f"{where}: variable index {idx} out of range")
                if not math.isfinite(coef):
                    raise ValidationError(f"{where}: non-finite coefficient on index {idx}")
        for i, con in enumerate(self.constraints):
            if not math.isfinite(con.rhs):
                raise ValidationError(f"{con.name or f'constraint {i}'}: non-finite rhs")

    def evaluate_objective(self, values: np.ndarray) -> float:
        return float(sum(coef * values[idx] for idx, coef in self.objective.items()))

    def to_lp_text(self) -> str:
        """Dump in lp-format text (min: ...; rows; bounds; bin section)."""

        def terms(coeffs: dict[int, float]) -> str:
            if not coeffs:
                return "0"
            parts = []
            for idx in sorted(coeffs):
                coef = coeffs[idx]
                if coef == 0:
                    continue
                name = self.variables[idx].name
                if not parts:
                    parts.append(f"{_fmt(coef)} {name}" if coef >= 0 else f"-{_fmt(-coef)} {name}")
                elif coef >= 0:
                    parts.append(f"+ {_fmt(coef)} {name}")
                else:
                    parts.append(f"- {_fmt(-coef)} {name}")
            return " ".join(parts) if parts else "0"

        def _fmt(x: float) -> str:
            return repr(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(x)

        lines = [f"/* {self.name} */", f"min: {terms(self.objective)};"]
        for i, con in enumerate(self.constraints):
            label = con.name or f"r{i}"
            lines.append(f"{label}: {terms(con.coeffs)} {con.sense} {_fmt(con.rhs)};")
        for var in self.variables:
            if var.kind == BINARY:
                continue
            if var.lower != 0.0 and math.isfinite(var.lower):
                lines.append(f"{var.name} >= {_fmt(var.lower)};")
            elif var.lower == -math.inf:
                lines.append(f"{var.name} >= -1e30;  /* free below */")
            if math.isfinite(var.upper):
                lines.append(f"{var.name} <= {_fmt(var.upper)};")
        binaries = [v.name for v in self.variables if v.kind == BINARY]
        if binaries:
            lines.append("bin " + ", ".join(binaries) + ";")
        return "\n".join(lines) + "\n"


# --- simplex -------------------------------------------------------------


@dataclass
class _Geometry:
    """Equality standard form A x = b shared by every node of one search.

    Columns are the model variables followed by one slack per row. A >=
    row is negated at build time so every slack keeps bounds [0, inf);
    equality rows pin their slack to [0, 0]. Bound arrays here are the
    base box; nodes apply their branching pins to copies.
    """

    A: np.ndarray
    b: np.ndarray
    cost: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n: int

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def width(self) -> int:
        return self.A.shape[1]


def _build_geometry(model: LinearModel, extra_constraints: tuple[Constraint, ...]) -> _Geometry:
    cons = list(model.constraints) + list(extra_constraints)
    n = len(model.variables)
    m = len(cons)
    width = n + m
    A = np.zeros((m, width))
    b = np.zeros(m)
    lower = np.empty(width)
    upper = np.empty(width)
    for j, var in enumerate(model.variables):
        lower[j] = var.lower
        upper[j] = var.upper
    for i, con in enumerate(cons):
        sign = -1.0 if con.sense == GREATER_EQUAL else 1.0
        for idx, coef in con.coeffs.items():
            A[i, idx] += sign * coef
        b[i] = sign * con.rhs
        A[i, n + i] = 1.0
        lower[n + i] = 0.0
        upper[n + i] = 0.0 if con.sense == EQUAL else math.inf
    cost = np.zeros(width)
    for idx, coef in model.objective.items():
        cost[idx] += coef
    return _Geometry(A, b, cost, lower, upper, n)


@dataclass
class _State:
    """Live tableau: T[:m] is B^-1 A with current basic values in the last
    column, T[-1] is the reduced-cost row for `cost`. Nonbasic columns
    rest at a bound recorded by `at_upper` (free columns rest at zero).
    `age` counts pivots since the last rebuild from pristine data; verdicts
    reached at age zero need no further confirmation."""

    geo: _Geometry
    lo: np.ndarray
    hi: np.ndarray
    cost: np.ndarray
    T: np.ndarray
    basis: list[int]
    at_upper: np.ndarray
    age: int = 0
    scratch: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.scratch = np.empty_like(self.T)


def _placement_values(lo: np.ndarray, hi: np.ndarray, at_upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nonbasic resting values plus normalized at-upper flags.

    A column whose recorded side no longer exists (an infinite bound)
    falls back to the finite side, or to zero when both bounds are open.
    """
    up = (at_upper & np.isfinite(hi)) | (~np.isfinite(lo) & np.isfinite(hi))
    vals = np.where(up, hi, np.where(np.isfinite(lo), lo, 0.0))
    return vals, up


def _basis_array(state: _State) -> np.ndarray:
    return np.asarray(state.basis, dtype=int)


def _current_values(state: _State) -> np.ndarray:
    vals, _ = _placement_values(state.lo, state.hi, state.at_upper)
    out = vals.copy()
    out[_basis_array(state)] = state.T[: len(state.basis), -1]
    return out


def _objective(state: _State) -> float:
    return float(state.cost @ _current_values(state))


def _refactor(state: _State) -> bool:
    """Rebuild the tableau from pristine data and the recorded basis.

    Dense outer-product pivots accumulate roundoff, and one pivot on a
    tiny element can amplify it by the coefficient spread of the model.
    Solving B X = [A | b_effective] against the untouched arrays restores
    the representation to machine precision. Returns False if the
    recorded basis is singular.
    """
    geo = state.geo
    m = len(state.basis)
    vals, up = _placement_values(state.lo, state.hi, state.at_upper)
    state.at_upper = up
    nonbasic = vals.copy()
    nonbasic[_basis_array(state)] = 0.0
    rhs = geo.b - geo.A @ nonbasic
    try:
        sol = np.linalg.solve(geo.A[:, state.basis], np.hstack([geo.A, rhs[:, None]]))
    except np.linalg.LinAlgError:
        return False
    if not np.all(np.isfinite(sol)):
        return False
    state.T[:m, :] = sol
    reduced = state.cost - state.cost[_basis_array(state)] @ sol[:, :-1]
    reduced[_basis_array(state)] = 0.0
    state.T[-1, :-1] = reduced
    state.T[-1, -1] = 0.0
    state.age = 0
    return True


def _confirm_costs(state: _State) -> np.ndarray | None:
    """Reduced costs recomputed from pristine data via one dual solve.

    Far cheaper than a full refactorization (one right-hand side instead
    of the whole tableau), which makes it affordable at every optimal
    exit. Returns None if the recorded basis is singular.
    """
    geo = state.geo
    basis_arr = _basis_array(state)
    try:
        y = np.linalg.solve(geo.A[:, state.basis].T, state.cost[basis_arr])
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(y)):
        return None
    reduced = state.cost - y @ geo.A
    reduced[basis_arr] = 0.0
    return reduced


def _pivot(T: np.ndarray, row: int, col: int, scratch: np.ndarray) -> None:
    T[row] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    np.multiply(factors[:, None], T[row][None, :], out=scratch)
    np.subtract(T, scratch, out=T)


class _SimplexDistress(Exception):
    """Numerical corruption the current pass cannot repair in place."""


def _column_masks(state: _State) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    basic = np.zeros(state.geo.width, dtype=bool)
    basic[_basis_array(state)] = True
    fixed = state.lo == state.hi
    free = np.isneginf(state.lo) & np.isposinf(state.hi)
    return basic, fixed, free


def _resting_value(state: _State, j: int) -> float:
    if state.at_upper[j]:
        return float(state.hi[j])
    if math.isfinite(state.lo[j]):
        return float(state.lo[j])
    return 0.0


def _primal_violation(state: _State) -> float:
    m = len(state.basis)
    if m == 0:
        return 0.0
    basis_arr = _basis_array(state)
    v = state.T[:m, -1]
    lo_b = state.lo[basis_arr]
    hi_b = state.hi[basis_arr]
    below = np.where(np.isfinite(lo_b), lo_b - v, -math.inf)
    above = np.where(np.isfinite(hi_b), v - hi_b, -math.inf)
    scale = np.maximum(
        1.0,
        np.maximum(
            np.where(np.isfinite(lo_b), np.abs(lo_b), 0.0),
            np.where(np.isfinite(hi_b), np.abs(hi_b), 0.0),
        ),
    )
    return float((np.maximum(below, above) / scale).max())


def _dual_violation(state: _State) -> float:
    basic, fixed, free = _column_masks(state)
    d = state.T[-1, : state.geo.width]
    eff = np.where(state.at_upper, d, -d)
    eff = np.where(free, np.abs(d), eff)
    eff = np.where(basic | fixed, -math.inf, eff)
    worst = float(eff.max()) if eff.size else -math.inf
    return max(worst, 0.0)


def _primal(state: _State, paranoid: bool) -> tuple[str, bool]:
    """Minimize `state.cost` from a primal-feasible point.

    Dantzig-style pricing adapted to bounds (a column enters from
    whichever bound its reduced cost improves), with a permanent switch to
    Bland's rule after a run of degenerate steps. When the entering
    column's own box is the binding limit the step is a bound flip: the
    column jumps to its other bound and the basis stays put. The tableau
    is refactorized at a fixed cadence, whenever the objective moves the
    wrong way (impossible in exact arithmetic, so it proves roundoff), and
    before optimal or unbounded is accepted. Returns the status plus a
    taint flag; a tainted verdict may have walked a wrong path, so callers
    must not trust tainted claims without a paranoid rerun.
    """
    geo = state.geo
    T = state.T
    m = len(state.basis)
    width = geo.width
    basic, fixed, free = _column_masks(state)
    interval = 20 if paranoid else _REFACTOR_INTERVAL
    degenerate = 0
    bland = False
    tainted = False
    obj = _objective(state)
    for _ in range(_MAX_ITERATIONS):
        d = T[-1, :width]
        eff = np.where(state.at_upper, -d, d)
        eff = np.where(free, -np.abs(d), eff)
        eff = np.where(basic | fixed, 0.0, eff)
        if bland:
            open_cols = np.flatnonzero(eff < -_PIVOT_TOL)
            entering = int(open_cols[0]) if open_cols.size else -1
        else:
            entering = int(np.argmin(eff)) if width else -1
            if entering >= 0 and eff[entering] >= -_PIVOT_TOL:
                entering = -1
        if entering < 0:
            if state.age == 0:
                return OPTIMAL, tainted
            pristine = _confirm_costs(state)
            if pristine is None:
                raise _SimplexDistress
            T[-1, :width] = pristine
            check = np.where(state.at_upper, -pristine, pristine)
            check = np.where(free, -np.abs(pristine), check)
            check = np.where(basic | fixed, 0.0, check)
            if not (check < -_PIVOT_TOL).any():
                return OPTIMAL, tainted
            # the drifted cost row hid an improving column
            tainted = True
            if not _refactor(state):
                raise _SimplexDistress
            obj = _objective(state)
            continue
        if free[entering]:
            t = -1.0 if d[entering] > 0 else 1.0
        else:
            t = -1.0 if state.at_upper[entering] else 1.0
        col = T[:m, entering]
        w = t * col
        v = T[:m, -1]
        basis_arr = _basis_array(state)
        lo_b = state.lo[basis_arr]
        hi_b = state.hi[basis_arr]
        # drifted out-of-bound basics count as sitting on the bound, so the
        # ratio never goes negative
        ratios = np.full(m, math.inf)
        np.divide(
            np.maximum(v - lo_b, 0.0), w, out=ratios, where=(w > _PIVOT_TOL) & np.isfinite(lo_b)
        )
        alt = np.full(m, math.inf)
        np.divide(
            np.maximum(hi_b - v, 0.0), -w, out=alt, where=(w < -_PIVOT_TOL) & np.isfinite(hi_b)
        )
        np.minimum(ratios, alt, out=ratios)
        theta_rows = float(ratios.min()) if m else math.inf
        gap = state.hi[entering] - state.lo[entering]
        theta = min(theta_rows, gap)
        if math.isinf(theta):
            if state.age == 0:
                return UNBOUNDED, tainted
            if not _refactor(state):
                raise _SimplexDistress
            obj = _objective(state)
            continue
        prev = obj
        if gap <= theta_rows:
            # the entering column crosses its own box first: flip it to the
            # other bound without touching the basis
            T[:m, -1] = v - (t * gap) * col
            state.at_upper[entering] = not state.at_upper[entering]
        else:
            if bland:
                ties = np.flatnonzero(ratios <= theta_rows)
                r = int(ties[np.argmin(basis_arr[ties])])
            else:
                limit = theta_rows + 1e-9 + 1e-7 * abs(theta_rows)
                near = np.flatnonzero(ratios <= limit)
                strength = np.abs(col[near])
                cand = near[strength == strength.max()]
                r = int(cand[np.argmin(basis_arr[cand])])
            leaving = state.basis[r]
            to_upper = w[r] < 0
            start = _resting_value(state, entering)
            newvals = v - (t * theta_rows) * col
            _pivot(T, r, entering, state.scratch)
            T[:m, -1] = newvals
            T[r, -1] = start + t * theta_rows
            T[-1, entering] = 0.0
            state.basis[r] = entering
            basic[leaving] = False
            basic[entering] = True
            state.at_upper[leaving] = to_upper
        since_refactor += 1
        obj = _objective(state)
        scale = max(1.0, abs(prev))
        if obj > prev + 1e-7 * scale:
            tainted = True
            if not _refactor(state):
                raise _SimplexDistress
            since_refactor = 0
            obj = _objective(state)
        elif since_refactor >= interval:
            if not _refactor(state):
                raise _SimplexDistress
            since_refactor = 0
            obj = _objective(state)
        if obj >= prev - 1e-12 * scale:
            degenerate += 1
            if degenerate >= _DEGENERATE_PIVOT_LIMIT:
                bland = True
        else:
            degenerate = 0
    raise InternalError("simplex iteration limit exceeded")


def _dual(state: _State, paranoid: bool) -> tuple[str, bool]:
    """Drive out bound violations while keeping reduced costs feasible.

    The entering choice keeps every nonbasic reduced cost on its feasible
    side, so when no column qualifies the violated row certifies primal
    infeasibility outright. A step that would push the entering column
    past its own opposite bound is taken as a bound flip instead, which
    shrinks the violation and retries the row. Same refactorization,
    Bland-switch, and taint discipline as the primal loop; here the
    objective must not decrease.
    """
    geo = state.geo
    T = state.T
    m = len(state.basis)
    width = geo.width
    basic, fixed, free = _column_masks(state)
    interval = 20 if paranoid else _REFACTOR_INTERVAL
    since_refactor = 0
    degenerate = 0
    bland = False
    tainted = False
    obj = _objective(state)
    for _ in range(_MAX_ITERATIONS):
        basis_arr = _basis_array(state)
        v = T[:m, -1]
        lo_b = state.lo[basis_arr]
        hi_b = state.hi[basis_arr]
        below = np.where(np.isfinite(lo_b), lo_b - v, -math.inf)
        above = np.where(np.isfinite(hi_b), v - hi_b, -math.inf)
        scale_b = np.maximum(
            1.0,
            np.maximum(
                np.where(np.isfinite(lo_b), np.abs(lo_b), 0.0),
                np.where(np.isfinite(hi_b), np.abs(hi_b), 0.0),
            ),
        )
        rel = np.maximum(below, above) / scale_b
        if bland:
            rows = np.flatnonzero(rel > _FEAS_TOL)
            r = int(rows[np.argmin(basis_arr[rows])]) if rows.size else -1
        else:
            r = int(np.argmax(rel)) if m else -1
            if r >= 0 and rel[r] <= _FEAS_TOL:
                r = -1
        if r < 0:
            if since_refactor == 0:
                return OPTIMAL, tainted
            if not _refactor(state):
                raise _SimplexDistress
            since_refactor = 0
            obj = _objective(state)
            continue
        to_upper = above[r] > below[r]
        alpha = T[r, :width]
        d = T[-1, :width]
        low_side = ~basic & ~fixed & (~state.at_upper | free)
        up_side = ~basic & ~fixed & (state.at_upper | free)
        if to_upper:
            eligible = (low_side & (alpha > _PIVOT_TOL)) | (up_side & (alpha < -_PIVOT_TOL))
            raw = d
        else:
            eligible = (low_side & (alpha < -_PIVOT_TOL)) | (up_side & (alpha > _PIVOT_TOL))
            raw = -d
        if not eligible.any():
            # every movable column would push the row further out, so the
            # box plus this row is empty: primal infeasible
            if since_refactor == 0:
                return INFEASIBLE, tainted
            if not _refactor(state):
                raise _SimplexDistress
            since_refactor = 0
            obj = _objective(state)
            continue
        ratios = np.full(width, math.inf)
        np.divide(raw, alpha, out=ratios, where=eligible)
        np.maximum(ratios, 0.0, out=ratios)
        theta = float(ratios.min())
        if bland:
            ties = np.flatnonzero(ratios <= theta)
            entering = int(ties[0])
        else:
            limit = theta + 1e-9 + 1e-7 * abs(theta)
            near = np.flatnonzero(ratios <= limit)
            strength = np.abs(alpha[near])
            cand = near[strength == strength.max()]
            entering = int(cand[0])
        target = float(hi_b[r]) if to_upper else float(lo_b[r])
        delta = (float(v[r]) - target) / float(alpha[entering])
        prev = obj
        gap = state.hi[entering] - state.lo[entering]
        overshoot = math.isfinite(gap) and abs(delta) > gap + 1e-9 * max(1.0, gap)
        if overshoot and ratios[entering] > 1e-12:
            # long step: the entering column saturates its own box before
            # the row is repaired; flip it and rescan. Only taken when the
            # reduced cost is nonzero, so the objective strictly advances
            # and flips cannot cycle. A degenerate overshoot pivots
            # instead: the column enters out of its box and a later
            # iteration repairs it, with Bland's rule covering cycling.
            step = math.copysign(gap, delta)
            T[:m, -1] = v - step * T[:m, entering]
            state.at_upper[entering] = not state.at_upper[entering]
        else:
            leaving = state.basis[r]
            start = _resting_value(state, entering)
            newvals = v - delta * T[:m, entering]
            _pivot(T, r, entering, state.scratch)
            T[:m, -1] = newvals
            T[r, -1] = start + delta
            T[-1, entering] = 0.0
            state.basis[r] = entering
            basic[leaving] = False
            basic[entering] = True
            state.at_upper[leaving] = to_upper
        since_refactor += 1
        obj = _objective(state)
        scale = max(1.0, abs(prev))
        if obj < prev - 1e-7 * scale:
            tainted = True
            if not _refactor(state):
                raise _SimplexDistress
            since_refactor = 0
            obj = _objective(state)
        elif since_refactor >= interval:
            if not _refactor(state):
                raise _SimplexDistress
            since_refactor = 0
            obj = _objective(state)
        if obj <= prev + 1e-12 * scale:
            degenerate += 1
            if degenerate >= _DEGENERATE_PIVOT_LIMIT:
                bland = True
        else:
            degenerate = 0
    raise InternalError("simplex iteration limit exceeded")


def _phase1_cost(geo: _Geometry, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """An objective that is dual-feasible at the all-slack basis.

    Columns resting at a lower bound get +1, columns forced to an upper
    bound get -1, free and pinned columns get 0. Running the dual loop
    under this cost is a pure feasibility search with nondegenerate
    ratios; the real objective is installed afterwards.
    """
    at_upper = np.zeros(geo.width, dtype=bool)
    _, up = _placement_values(lo, hi, at_upper)
    cost = np.where(up, -1.0, 1.0)
    cost[np.isneginf(lo) & np.isposinf(hi)] = 0.0
    cost[lo == hi] = 0.0
    cost[geo.n :] = 0.0
    return cost


def _attempt(
    geo: _Geometry,
    lo: np.ndarray,
    hi: np.ndarray,
    warm: tuple[tuple[int, ...], np.ndarray] | None,
    paranoid: bool,
) -> tuple[str, _State, bool]:
    """One full solve try; raises _SimplexDistress on numerical trouble."""
    m = geo.m
    if warm is not None:
        basis, at_upper = warm
        if len(basis) != m:
            raise _SimplexDistress
        state = _State(
            geo,
            lo,
            hi,
            cost=geo.cost,
            T=np.empty((m + 1, geo.width + 1)),
            basis=list(basis),
            at_upper=np.array(at_upper, dtype=bool),
        )
        if not _refactor(state):
            raise _SimplexDistress
        tainted = False
        if _primal_violation(state) > _FEAS_TOL:
            if _dual_violation(state) > _DUAL_TOL:
                # the stored basis lost both feasibilities; not worth repairing
                raise _SimplexDistress
            status, t = _dual(state, paranoid)
            tainted |= t
            if status == INFEASIBLE:
                return INFEASIBLE, state, tainted
        status, t = _primal(state, paranoid)
        tainted |= t
        return status, state, tainted

    state = _State(
        geo,
        lo,
        hi,
        cost=_phase1_cost(geo, lo, hi),
        T=np.empty((m + 1, geo.width + 1)),
        basis=list(range(geo.n, geo.n + m)),
        at_upper=np.zeros(geo.width, dtype=bool),
    )
    if not _refactor(state):
        raise _SimplexDistress
    tainted = False
    if _primal_violation(state) > _FEAS_TOL:
        status, t = _dual(state, paranoid)
        tainted |= t
        if status == INFEASIBLE:
            return INFEASIBLE, state, tainted
    state.cost = geo.cost
    if not _refactor(state):
        raise _SimplexDistress
    status, t = _primal(state, paranoid)
    tainted |= t
    return status, state, tainted


def _check_solution(
    model: LinearModel,
    overrides: dict[int, tuple[float, float]],
    extra_constraints: tuple[Constraint, ...],
    values: np.ndarray,
) -> bool:
    """Residuals of a claimed optimum against the original data."""
    for i, var in enumerate(model.variables):
        lo, hi = overrides.get(i, (var.lower, var.upper))
        v = values[i]
        if v < lo - 1e-6 * max(1.0, abs(lo)) or v > hi + 1e-6 * max(1.0, abs(hi)):
            return False
    for con in itertools.chain(model.constraints, extra_constraints):
        lhs = 0.0
        scale = max(1.0, abs(con.rhs))
        for idx, coef in con.coeffs.items():
            term = coef * values[idx]
            lhs += term
            scale = max(scale, abs(term))
        tol = 1e-6 * scale
        if con.sense == LESS_EQUAL and lhs > con.rhs + tol:
            return False
        if con.sense == GREATER_EQUAL and lhs < con.rhs - tol:
            return False
        if con.sense == EQUAL and abs(lhs - con.rhs) > tol:
            return False
    return True


_Warm = tuple[tuple[int, ...], np.ndarray]


def _lp_bounded(
    model: LinearModel,
    geo: _Geometry,
    bound_overrides: dict[int, tuple[float, float]] | None,
    extra_constraints: tuple[Constraint, ...],
    warm: _Warm | None = None,
) -> tuple[Solution, _State | None]:
    """Solve one LP over the shared geometry, warm-started when possible.

    Escalation mirrors the solver's general distress policy: a warm basis
    that misbehaves falls back to a cold solve, a cold solve that
    misbehaves is retried in paranoid mode (refactorizing every few
    pivots), and only then does the solver give up. Tainted infeasibility
    or unboundedness claims are never trusted without that escalation.
    Returns the final state alongside an optimal solution so the caller
    can keep iterating on it in place.
    """
    overrides = bound_overrides or {}
    lo = geo.lower.copy()
    hi = geo.upper.copy()
    for idx, (a, b) in overrides.items():
        lo[idx] = a
        hi[idx] = b
    if np.any(lo > hi + 1e-12):
        return Solution(INFEASIBLE), None

    plans: list[tuple[_Warm | None, bool]] = []
    if warm is not None:
        plans.append((warm, False))
    plans.append((None, False))
    plans.append((None, True))
    for start, paranoid in plans:
        try:
            status, state, tainted = _attempt(geo, lo, hi, start, paranoid)
        except _SimplexDistress:
            continue
        if tainted and not paranoid and status in (INFEASIBLE, UNBOUNDED):
            continue
        if status == INFEASIBLE:
            return Solution(INFEASIBLE), None
        if status == UNBOUNDED:
            return Solution(UNBOUNDED), None
        values = _current_values(state)[: geo.n]
        if not _check_solution(model, overrides, extra_constraints, values):
            if paranoid:
                raise InternalError("simplex accepted an optimum that fails the residual check")
            continue
        return Solution(OPTIMAL, values, model.evaluate_objective(values)), state
    raise InternalError("simplex failed numerically even in paranoid mode")


def _reoptimize(
    model: LinearModel,
    geo: _Geometry,
    bound_overrides: dict[int, tuple[float, float]],
    extra_constraints: tuple[Constraint, ...],
    state: _State,
) -> tuple[Solution, _State | None]:
    """Re-optimize a live state whose bounds were changed in place.

    The tableau matrix does not depend on bounds, so no refactorization is
    needed up front: the dual loop repairs the basics the new box pushed
    out. Any distress falls back to the full escalation ladder, warm from
    the current basis.
    """
    try:
        tainted = False
        if _primal_violation(state) > _FEAS_TOL:
            if _dual_violation(state) > _DUAL_TOL:
                raise _SimplexDistress
            status, t = _dual(state, paranoid=False)
            tainted |= t
            if status == INFEASIBLE:
                if tainted:
                    raise _SimplexDistress
                return Solution(INFEASIBLE), None
        status, t = _primal(state, paranoid=False)
        tainted |= t
        if status == UNBOUNDED:
            if tainted:
                raise _SimplexDistress
            return Solution(UNBOUNDED), None
        values = _current_values(state)[: geo.n]
        if not _check_solution(model, bound_overrides, extra_constraints, values):
            raise _SimplexDistress
        return Solution(OPTIMAL, values, model.evaluate_objective(values)), state
    except _SimplexDistress:
        warm = (tuple(state.basis), state.at_upper.copy())
        return _lp_bounded(model, geo, bound_overrides, extra_constraints, warm)


def _solve_lp_raw(
    model: LinearModel,
    bound_overrides: dict[int, tuple[float, float]] | None = None,
    extra_constraints: tuple[Constraint, ...] = (),
) -> Solution:
    geo = _build_geometry(model, tuple(extra_constraints))
    sol, _ = _lp_bounded(model, geo, bound_overrides, tuple(extra_constraints))
    return sol


def solve_lp(model: LinearModel) -> Solution:
    """Optimal basic solution of the continuous relaxation (bounds kept)."""
    model.validate()
    return _solve_lp_raw(model)


# --- branch and bound ----------------------------------------------------


def _gap_threshold(incumbent: float, gap_tol: float) -> float:
    return incumbent - gap_tol * max(1.0, abs(incumbent))


def solve_milp(
    model: LinearModel,
    oracle=None,
    node_limit: int = 1_000_000,
    gap_tol: float = 1e-6,
    int_tol: float = 1e-6,
    branch_priority: dict[int, float] | None = None,
) -> Solution:
    """Branch and bound over the model's binary variables.

    `oracle(values)` is called on every integer candidate and may return a
    list of Constraint cuts; each returned cut must be violated by the
    candidate (checked) and valid for every feasible integer point. The
    candidate is only accepted once the oracle returns no cuts.

    `branch_priority` biases the branching variable choice: among the
    fractional binaries the highest priority wins (default 0.0), with
    fractionality as the tiebreak. Callers use it to put structural
    decisions ahead of consequence variables.

    After branching, the search dives straight into the rounded-toward
    child by pinning the bound on the live tableau and re-running the dual
    loop: the matrix never changes, so dive steps skip refactorization
    entirely and reach integer candidates (incumbents) early. The other
    child goes on the best-bound heap carrying the parent's basis, which
    stays dual-feasible because branching only moves a bound; lazy cuts
    append rows whose slacks extend any recorded basis directly.
    """
    model.validate()
    binaries = [i for i, v in enumerate(model.variables) if v.kind == BINARY]
    priority = branch_priority or {}
    cuts: list[Constraint] = []
    cuts_added = 0
    counter = itertools.count()
    best_obj = math.inf
    best_x: np.ndarray | None = None
    nodes = 0

    geo = _build_geometry(model, ())
    geo_epoch = 0

    def current_geometry() -> _Geometry:
        nonlocal geo, geo_epoch
        if geo_epoch != len(cuts):
            geo = _build_geometry(model, tuple(cuts))
            geo_epoch = len(cuts)
        return geo

    def adapt(warm: tuple[_Warm, int] | None) -> _Warm | None:
        # a basis recorded before some cuts existed extends with the new
        # rows' slacks, which enter the basis as the rows' own pivots
        if warm is None:
            return None
        (basis, at_upper), epoch = warm
        if epoch == len(cuts):
            return basis, at_upper
        base = geo.n + len(model.constraints)
        extended = list(basis) + [base + k for k in range(epoch, len(cuts))]
        flags = np.zeros(geo.width, dtype=bool)
        flags[: at_upper.size] = at_upper
        return tuple(extended), flags

    heap: list[tuple[float, int, dict[int, tuple[float, float]], tuple[_Warm, int] | None]] = []
    heapq.heappush(heap, (-math.inf, next(counter), {}, None))

    while heap:
        bound, _, fixed, inherited = heapq.heappop(heap)
        if best_x is not None and bound >= _gap_threshold(best_obj, gap_tol):
            continue
        state: _State | None = None
        pending = True  # the current subproblem still needs an LP solve
        sol = Solution(INFEASIBLE)
        while True:
            if pending:
                nodes += 1
                if nodes > node_limit:
                    return Solution(
                        NODE_LIMIT,
                        best_x,
                        best_obj if best_x is not None else None,
                        nodes_explored=nodes - 1,
                        cuts_added=cuts_added,
                    )
                if state is not None and geo_epoch == len(cuts):
                    sol, state = _reoptimize(model, geo, fixed, tuple(cuts), state)
                else:
                    current_geometry()
                    warm = adapt(inherited)
                    sol, state = _lp_bounded(model, geo, fixed, tuple(cuts), warm)
                pending = False
            if sol.status == UNBOUNDED:
                return Solution(UNBOUNDED, nodes_explored=nodes, cuts_added=cuts_added)
            if sol.status != OPTIMAL:
                break
            assert sol.values is not None and sol.objective is not None
            if best_x is not None and sol.objective >= _gap_threshold(best_obj, gap_tol):
                break
            fractional = {
                i: float(sol.values[i])
                for i in binaries
                if min(abs(sol.values[i]), abs(1.0 - sol.values[i])) > int_tol
            }
            if not fractional:
                if oracle is not None:
                    new_cuts = list(oracle(sol.values))
                    if new_cuts:
                        for cut in new_cuts:
                            lhs = sum(coef * sol.values[idx] for idx, coef in cut.coeffs.items())
                            violated = (
                                (cut.sense == LESS_EQUAL and lhs > cut.rhs + _FEAS_TOL)
                                or (cut.sense == GREATER_EQUAL and lhs < cut.rhs - _FEAS_TOL)
                                or (cut.sense == EQUAL and abs(lhs - cut.rhs) > _FEAS_TOL)
                            )
                            if not violated:
                                raise InternalError(
                                    f"lazy cut {cut.name or cut.coeffs} is not violated by the candidate"
                                )
                        if state is not None:
                            inherited = ((tuple(state.basis), state.at_upper.copy()), geo_epoch)
                        cuts.extend(new_cuts)
                        cuts_added += len(new_cuts)
                        pending = True
                        continue
                if sol.objective < best_obj:
                    best_obj = sol.objective
                    best_x = sol.values
                break
            _, _, neg_idx = max(
                (priority.get(i, 0.0), min(v, 1.0 - v), -i) for i, v in fractional.items()
            )
            branch_var = -neg_idx
            snapshot = (
                ((tuple(state.basis), state.at_upper.copy()), geo_epoch)
                if state is not None
                else None
            )
            dive_to = 1.0 if fractional[branch_var] >= 0.5 else 0.0
            other = dict(fixed)
            other[branch_var] = (1.0 - dive_to, 1.0 - dive_to)
            heapq.heappush(heap, (sol.objective, next(counter), other, snapshot))
            fixed = dict(fixed)
            fixed[branch_var] = (dive_to, dive_to)
            if state is not None:
                state.lo[branch_var] = dive_to
                state.hi[branch_var] = dive_to
            inherited = snapshot
            pending = True

    if best_x is None:
        return Solution(INFEASIBLE, nodes_explored=nodes, cuts_added=cuts_added)
    return Solution(OPTIMAL, best_x, best_obj, nodes_explored=nodes, cuts_added=cuts_added)
