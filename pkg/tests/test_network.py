import json

import pytest

from gridsynth.errors import InternalError, ValidationError
from gridsynth.geo import GeoPoint
from gridsynth.network import (
    DistributionNetwork,
    NetEdge,
    NetNode,
    from_geojson,
    load_geojson,
    to_geojson,
    validate_network,
    write_geojson,
)


def _pt(x_m, y_m=0.0):
    return GeoPoint(x_m * 1e-5, y_m * 1e-5)


def _sample_nodes():
    return [
        NetNode("sub0", "substation", _pt(0.0)),
        NetNode("r0", "root", _pt(100.0), voltage_pu=1.0),
        NetNode("x0", "transfer", _pt(200.0), voltage_pu=0.999),
        NetNode("t0", "transformer", _pt(300.0), voltage_pu=0.998),
        NetNode("h0", "residence", _pt(350.0), demand_kw=3.0, voltage_pu=0.997),
        NetNode("h1", "residence", _pt(400.0), demand_kw=4.0, voltage_pu=0.996),
    ]


def _sample_edges():
    return [
        NetEdge("hv_r0", "feeder", "sub0", "r0", 100.0, 0.0, 7.0),
        NetEdge("p0", "primary", "r0", "x0", 100.0, 0.033, 7.0),
        NetEdge("p1", "primary", "x0", "t0", 100.0, 0.033, 7.0),
        NetEdge("s0", "secondary", "t0", "h0", 50.0, 0.026, 7.0),
        NetEdge("s1", "secondary", "h0", "h1", 50.0, 0.026, 4.0),
    ]


def _sample_network():
    return DistributionNetwork({n.node_id: n for n in _sample_nodes()}, _sample_edges())


def test_sample_network_is_valid():
    net = _sample_network()
    validate_network(net)
    assert net.total_length_m() == pytest.approx(400.0)
    assert net.total_length_m("secondary") == pytest.approx(100.0)
    assert [n.node_id for n in net.residences()] == ["h0", "h1"]
    # adjacency is symmetric and sorted
    assert [nbr for nbr, _ in net.adjacency["t0"]] == ["h0", "x0"]


def test_geojson_round_trip_preserves_everything():
    net = _sample_network()
    back = from_geojson(to_geojson(net))
    assert sorted(back.nodes) == sorted(net.nodes)
    for nid, node in net.nodes.items():
        twin = back.nodes[nid]
        assert twin.kind == node.kind
        assert twin.demand_kw == node.demand_kw
        assert twin.voltage_pu == node.voltage_pu
        assert twin.point.lon == pytest.approx(node.point.lon, abs=1e-12)
    assert len(back.edges) == len(net.edges)
    by_id = {e.edge_id: e for e in back.edges}
    for e in net.edges:
        twin = by_id[e.edge_id]
        assert (twin.u, twin.v, twin.kind) == (e.u, e.v, e.kind)
        assert twin.flow_kw == e.flow_kw
        assert twin.resistance_ohm == e.resistance_ohm
    validate_network(back)


def test_written_file_is_byte_deterministic(tmp_path):
    nodes = _sample_nodes()
    edges = _sample_edges()
    a = DistributionNetwork({n.node_id: n for n in nodes}, edges)
    b = DistributionNetwork({n.node_id: n for n in reversed(nodes)}, list(reversed(edges)))
    pa, pb = tmp_path / "a.geojson", tmp_path / "b.geojson"
    write_geojson(a, pa)
    write_geojson(b, pb)
    assert pa.read_bytes() == pb.read_bytes()
    # and a round trip through disk writes the same bytes again
    write_geojson(load_geojson(pa), pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_validation_rejects_broken_networks():
    def broken(mutate):
        nodes = {n.node_id: n for n in _sample_nodes()}
        edges = _sample_edges()
        mutate(nodes, edges)
        return DistributionNetwork(nodes, edges)

    def dup_edge(nodes, edges):
        edges.append(NetEdge("p0", "primary", "x0", "t0", 1.0, 0.0, 0.0))

    def self_loop(nodes, edges):
        edges[1] = NetEdge("p0", "primary", "x0", "x0", 1.0, 0.0, 0.0)

    def bad_pairing(nodes, edges):
        edges[0] = NetEdge("hv_r0", "feeder", "sub0", "t0", 100.0, 0.0, 0.0)

    def negative_length(nodes, edges):
        edges[1] = NetEdge("p0", "primary", "r0", "x0", -5.0, 0.033, 0.0)

    def free_loading_residence(nodes, edges):
        nodes["h0"] = NetNode("h0", "residence", _pt(350.0), demand_kw=0.0)

    def demand_on_road(nodes, edges):
        nodes["x0"] = NetNode("x0", "transfer", _pt(200.0), demand_kw=1.0)

    def cycle(nodes, edges):
        edges.append(NetEdge("p2", "primary", "r0", "t0", 280.0, 0.09, 0.0))

    def second_substation(nodes, edges):
        nodes["sub1"] = NetNode("sub1", "substation", _pt(-100.0))
        edges.append(NetEdge("hv2", "feeder", "sub1", "r0", 200.0, 0.0, 0.0))

    def stranded_transformer(nodes, edges):
        nodes["t9"] = NetNode("t9", "transformer", _pt(900.0))

    def leaf_transfer(nodes, edges):
        nodes["x1"] = NetNode("x1", "transfer", _pt(250.0))
        edges.append(NetEdge("p9", "primary", "t0", "x1", 60.0, 0.02, 0.0))

    for mutate in (
        dup_edge,
        self_loop,
        bad_pairing,
        negative_length,
        free_loading_residence,
        demand_on_road,
        cycle,
        second_substation,
        stranded_transformer,
        leaf_transfer,
    ):
        with pytest.raises(InternalError):
            validate_network(broken(mutate))


def test_from_geojson_rejects_malformed_input():
    good = to_geojson(_sample_network())

    with pytest.raises(ValidationError, match="FeatureCollection"):
        from_geojson({"type": "GeometryCollection"})

    dup = json.loads(json.dumps(good))
    dup["features"].append(dup["features"][0])
    with pytest.raises(ValidationError, match="duplicate node id"):
        from_geojson(dup)

    missing = json.loads(json.dumps(good))
    del missing["features"][0]["properties"]["kind"]
    with pytest.raises(ValidationError, match="bad node feature"):
        from_geojson(missing)

    weird_kind = json.loads(json.dumps(good))
    weird_kind["features"][0]["properties"]["kind"] = "windmill"
    with pytest.raises(ValidationError, match="unknown node kind"):
        from_geojson(weird_kind)

    polygon = json.loads(json.dumps(good))
    polygon["features"][0]["geometry"]["type"] = "Polygon"
    with pytest.raises(ValidationError, match="unsupported geometry"):
        from_geojson(polygon)

    orphan = json.loads(json.dumps(good))
    orphan["features"] = [f for f in orphan["features"] if f["properties"]["id"] != "h1"]
    with pytest.raises(ValidationError, match="unknown node"):
        from_geojson(orphan)


def test_load_geojson_errors(tmp_path):
    with pytest.raises(ValidationError, match="no such file"):
        load_geojson(tmp_path / "missing.geojson")
    bad = tmp_path / "bad.geojson"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ValidationError, match="not valid JSON"):
        load_geojson(bad)
