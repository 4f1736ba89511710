import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays

from labelcorr.annot import Polyline, buffer_rasterize
from labelcorr.vectorize import (LineGraph, extract_nodes, graph_from_polylines, graph_to_geojson,
                                 link_edges, skeletonize, vectorize_mask)


def kinds(nodes):
    return sorted(n.kind for n in nodes)


def eight_degree(skel):
    p = np.pad(skel, 1).astype(int)
    h, w = skel.shape
    s = sum(p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w] for dr in (-1, 0, 1) for dc in (-1, 0, 1)
            if dr or dc)
    return np.where(skel, s, 0)


def test_empty_mask():
    assert not skeletonize(np.zeros((10, 10), bool)).any()
    g = vectorize_mask(np.zeros((10, 10), bool))
    assert g.is_empty() and g.total_length == 0


def test_band_thins_to_path():
    m = np.zeros((9, 15), bool)
    m[3:6, 3:12] = True
    s = skeletonize(m, 0)
    assert not np.any(s & ~m)
    assert s.any(axis=1).sum() == 1          # a single row
    assert 5 <= s.sum() <= 9
    assert eight_degree(s).max() <= 2


def test_straight_line_nodes_and_edge():
    skel = np.zeros((10, 60), bool)
    skel[5, 5:55] = True
    nodes = extract_nodes(skel)
    assert kinds(nodes) == ["end", "end"]
    g = link_edges(skel, nodes)
    assert len(g.edges) == 1
    assert g.edges[0].length == pytest.approx(49, abs=0.01)


def test_l_shape():
    skel = np.zeros((40, 40), bool)
    skel[10, 10:30] = True
    skel[10:30, 29] = True
    nodes = extract_nodes(skel)
    assert kinds(nodes) == ["end", "end", "turning"]
    turn = [n for n in nodes if n.kind == "turning"][0]
    assert abs(turn.x - 29) <= 2 and abs(turn.y - 10) <= 2
    g = link_edges(skel, nodes)
    assert len(g.edges) == 2
    assert all(turn.id in (e.a, e.b) for e in g.edges)


def test_t_shape():
    skel = np.zeros((40, 40), bool)
    skel[10, 5:35] = True
    skel[11:30, 20] = True
    nodes = extract_nodes(skel)
    assert kinds(nodes) == ["end", "end", "end", "junction"]
    assert len(link_edges(skel, nodes).edges) == 3


def test_node_free_cycle_gets_synthetic_node():
    yy, xx = np.mgrid[:21, :21]
    skel = np.abs(yy - 10) + np.abs(xx - 10) == 6          # diamond ring, all steps diagonal
    g = link_edges(skel, [])
    assert len(g.nodes) == 1 and len(g.edges) == 1
    n = g.nodes[0]
    assert (n.y, n.x) == (4.0, 10.0)
    assert g.edges[0].a == g.edges[0].b == n.id
    assert g.total_length == pytest.approx(24 * np.sqrt(2), abs=0.01)


def test_empty_skeleton_graph():
    assert link_edges(np.zeros((5, 5), bool), []).is_empty()


def test_small_components_removed():
    m = np.zeros((20, 20), bool)
    m[2, 2] = True
    m[10, 3:15] = True
    s = skeletonize(m, min_component_px=4)
    assert not s[2, 2] and s[10].any()


@settings(max_examples=40, deadline=None)
@given(arrays(bool, (16, 16)))
def test_skeleton_idempotent_and_contained(mask):
    s = skeletonize(mask, 0)
    assert not np.any(s & ~mask)
    assert np.array_equal(skeletonize(s, 0), s)


@settings(max_examples=20, deadline=None)
@given(arrays(bool, (18, 18)))
def test_skeleton_keeps_components(mask):
    from scipy import ndimage
    lab, n = ndimage.label(mask, structure=np.ones((3, 3)))
    s = skeletonize(mask, 0)
    assert ndimage.label(s, structure=np.ones((3, 3)))[1] == n


@pytest.mark.parametrize("seed", range(4))
def test_round_trip_length(seed):
    rng = np.random.default_rng(seed)
    pts = [rng.uniform(40, 60, 2)]
    heading = rng.uniform(0, 2 * np.pi)
    for k in range(3):
        if k:
            heading += rng.choice([-1, 1]) * rng.uniform(np.radians(20), np.radians(60))
        pts.append(pts[-1] + 35 * np.array([np.cos(heading), np.sin(heading)]))
    pts = np.array(pts) + 60
    line = Polyline(pts)
    g = vectorize_mask(buffer_rasterize([line], 3, (220, 220)))
    assert abs(g.total_length - line.length) / line.length <= 0.05


def test_extend_restores_stroke_ends():
    line = Polyline(np.array([[10.0, 20.0], [70.0, 20.0]]))
    m = buffer_rasterize([line], 3, (40, 80))
    short = vectorize_mask(m, extend=False)
    full = vectorize_mask(m)
    assert short.total_length < full.total_length
    assert abs(full.total_length - 60) <= 1.5


def test_graph_from_polylines_merges_shared_ends():
    a = Polyline(np.array([[0.0, 0.0], [10.0, 0.0]]))
    b = Polyline(np.array([[10.0, 0.0], [10.0, 10.0]]))
    c = Polyline(np.array([[10.0, 0.0], [20.0, 0.0]]))
    g = graph_from_polylines([a, b, c])
    assert len(g.nodes) == 4
    assert kinds(g.nodes) == ["end", "end", "end", "junction"]
    assert g.total_length == pytest.approx(30)


def test_geojson_export():
    g = graph_from_polylines([Polyline(np.array([[0.0, 0.0], [3.0, 4.0]]))])
    doc = graph_to_geojson(g)
    assert doc["type"] == "FeatureCollection"
    f = doc["features"][0]
    assert f["geometry"]["coordinates"] == [[0.0, 0.0], [3.0, 4.0]]
    assert f["properties"]["length"] == pytest.approx(5.0)
    assert graph_to_geojson(LineGraph()) == {"type": "FeatureCollection", "features": []}


@pytest.mark.parametrize("seed", range(6))
def test_length_and_degree_bookkeeping(seed):
    rng = np.random.default_rng(seed)
    lines = [Polyline(rng.uniform(20, 140, (3, 2))) for _ in range(3)]
    skel = skeletonize(buffer_rasterize(lines, 2, (160, 160)))
    g = link_edges(skel, extract_nodes(skel))
    assert g.total_length <= skel.sum() * np.sqrt(2)
    degree = {}
    for e in g.edges:
        for n in {e.a, e.b} if e.a != e.b else (e.a, e.a):
            degree[n] = degree.get(n, 0) + 1
    for n in g.nodes:
        if n.kind == "end":
            assert degree.get(n.id) == 1
        elif n.kind == "junction":
            assert degree.get(n.id, 0) >= 3
