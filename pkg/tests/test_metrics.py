import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labelcorr.annot import Polyline
from labelcorr.metrics import apls, correctness_completeness, evaluate, line_scores, pixel_prf
from labelcorr.vectorize import LineGraph, graph_from_polylines


def graph(*polylines):
    return graph_from_polylines([Polyline(np.asarray(p, dtype=float)) for p in polylines])


def floyd_warshall(n, edges):
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for i, j, w in edges:
        d[i, j] = d[j, i] = min(d[i, j], w)
    for k in range(n):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return d


def collinear_oracle(src_pieces, dst_pieces, spacing, tol):
    """One-way APLS for graphs made of intervals on the x axis.

    Control points sit at k*L/n on each source interval; each is matched to
    the nearest point of the destination intervals if within ``tol``. Path
    lengths come from Floyd-Warshall on explicit point graphs.
    """
    src_pts, src_edges = [], []
    for a, b in src_pieces:
        n = max(1, round((b - a) / spacing))
        xs = [a + k * (b - a) / n for k in range(n + 1)]
        base = len(src_pts)
        src_pts += xs
        src_edges += [(base + k, base + k + 1, xs[k + 1] - xs[k]) for k in range(n)]
    d_src = floyd_warshall(len(src_pts), src_edges)

    snapped = []
    for x in src_pts:
        best = None
        for pi, (a, b) in enumerate(dst_pieces):
            q = min(max(x, a), b)
            if abs(q - x) <= tol and (best is None or abs(q - x) < best[0]):
                best = (abs(q - x), pi, q)
        snapped.append(best)
    # destination graph: piece ends plus every snapped point, joined in order
    dst_pts, dst_edges, where = [], [], {}
    for pi, (a, b) in enumerate(dst_pieces):
        xs = sorted({a, b} | {s[2] for s in snapped if s and s[1] == pi})
        base = len(dst_pts)
        dst_pts += xs
        for k, x in enumerate(xs):
            where[(pi, x)] = base + k
        dst_edges += [(base + k, base + k + 1, xs[k + 1] - xs[k]) for k in range(len(xs) - 1)]
    d_dst = floyd_warshall(len(dst_pts), dst_edges)

    diffs = []
    for i, j in itertools.combinations(range(len(src_pts)), 2):
        l_src = d_src[i, j]
        if not np.isfinite(l_src) or l_src <= 0:
            continue
        si, sj = snapped[i], snapped[j]
        if si is None or sj is None:
            diffs.append(1.0)
            continue
        l_dst = d_dst[where[(si[1], si[2])], where[(sj[1], sj[2])]]
        diffs.append(1.0 if not np.isfinite(l_dst) else min(1.0, abs(l_src - l_dst) / l_src))
    return 1.0 - float(np.mean(diffs)) if diffs else 1.0


# -- pixel -------------------------------------------------------------------

def test_pixel_identical():
    m = np.zeros((5, 5), bool)
    m[1:3] = True
    s = pixel_prf(m, m)
    assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)


def test_pixel_half():
    gt = np.zeros((4, 4), bool)
    gt[:2] = True
    pred = np.zeros((4, 4), bool)
    pred[0] = True
    s = pixel_prf(pred, gt)
    assert s.precision == 1.0 and s.recall == 0.5 and s.f1 == pytest.approx(2 / 3)


def test_pixel_empty_prediction_flagged():
    gt = np.ones((3, 3), bool)
    s = pixel_prf(np.zeros((3, 3), bool), gt)
    assert (s.precision, s.recall, s.f1) == (0.0, 0.0, 0.0)
    assert "precision_undefined" in s.flags


def test_pixel_shape_mismatch():
    with pytest.raises(ValueError):
        pixel_prf(np.zeros((2, 2)), np.zeros((3, 3)))


# -- correctness / completeness -----------------------------------------------------

LINE = [[0, 50], [200, 50]]


def test_identical_graphs():
    g = graph(LINE, [[100, 50], [100, 150]])
    corr, comp, _ = correctness_completeness(g, g)
    assert corr == 1.0 and comp == 1.0


def test_translated_beyond_tol():
    gt = graph(LINE, [[0, 0], [0, 30]])
    pred = graph([[7, 57], [207, 57]], [[7, 7], [7, 37]])
    corr, comp, _ = correctness_completeness(pred, gt, tol=5)
    assert corr == 0.0 and comp == 0.0


def test_half_line():
    gt = graph([[0, 50], [1000, 50]])
    pred = graph([[0, 50], [500, 50]])
    corr, comp, _ = correctness_completeness(pred, gt, tol=5)
    assert corr == 1.0
    assert comp == pytest.approx(0.5, abs=0.01)


def test_empty_gt_flagged():
    corr, comp, det = correctness_completeness(graph(LINE), LineGraph())
    assert comp == 0.0 and "gt_empty" in det["flags"]


def test_bad_tol():
    with pytest.raises(ValueError):
        correctness_completeness(graph(LINE), graph(LINE), tol=0)


segments = st.lists(st.tuples(st.floats(0, 60), st.floats(0, 60), st.floats(0, 60), st.floats(0, 60))
                    .filter(lambda t: abs(t[0] - t[2]) + abs(t[1] - t[3]) > 1), min_size=1, max_size=3)


@settings(max_examples=40, deadline=None)
@given(segments, segments, st.floats(0.5, 8))
def test_correctness_is_reversed_completeness(a, b, tol):
    ga = graph(*[[[x0, y0], [x1, y1]] for x0, y0, x1, y1 in a])
    gb = graph(*[[[x0, y0], [x1, y1]] for x0, y0, x1, y1 in b])
    c1, m1, _ = correctness_completeness(ga, gb, tol)
    c2, m2, _ = correctness_completeness(gb, ga, tol)
    assert c1 == pytest.approx(m2) and m1 == pytest.approx(c2)
    assert 0 <= c1 <= 1 and 0 <= m1 <= 1


# -- APLS ------------------------------------------------------------------------------

def test_apls_identity():
    g = graph(LINE, [[100, 50], [100, 150]], [[0, 50], [0, 0]])
    assert apls(g, g) == 1.0


def test_t_junction_is_noded():
    g = graph(LINE, [[100, 50], [100, 150]])
    assert len(g.edges) == 3 and len(g.nodes) == 4
    assert sorted(n.kind for n in g.nodes).count("junction") == 1


def test_apls_empty_cases():
    assert apls(LineGraph(), graph(LINE)) == 0.0
    assert apls(LineGraph(), LineGraph()) == 1.0


def test_apls_gap_matches_oracle():
    gt = graph(LINE)
    pred = graph([[0, 50], [90, 50]], [[110, 50], [200, 50]])
    expect = 0.5 * (collinear_oracle([(0, 200)], [(0, 90), (110, 200)], 50, 5)
                    + collinear_oracle([(0, 90), (110, 200)], [(0, 200)], 50, 5))
    assert apls(pred, gt) == pytest.approx(expect, abs=1e-6)
    assert expect == pytest.approx(0.6)


@pytest.mark.parametrize("gap", [(40, 60), (95, 105), (20, 130)])
@pytest.mark.parametrize("spacing", [20, 50])
def test_apls_gaps_match_oracle(gap, spacing):
    gt = graph(LINE)
    pred = graph([[0, 50], [gap[0], 50]], [[gap[1], 50], [200, 50]])
    pieces = [(0, gap[0]), (gap[1], 200)]
    expect = 0.5 * (collinear_oracle([(0, 200)], pieces, spacing, 5)
                    + collinear_oracle(pieces, [(0, 200)], spacing, 5))
    assert apls(pred, gt, control_spacing=spacing) == pytest.approx(expect, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(1, 199), min_size=1, max_size=4, unique=True), st.randoms())
def test_apls_ignores_edge_splits_and_order(cuts, rnd):
    xs = [0.0] + sorted(cuts) + [200.0]
    pieces = [[[a, 50.0], [b, 50.0]] for a, b in zip(xs[:-1], xs[1:]) if b - a > 1e-6]
    rnd.shuffle(pieces)
    split = graph(*pieces)
    whole = graph(LINE)
    other = graph([[0, 52], [120, 52]], [[130, 52], [200, 52]])
    assert apls(split, whole) == pytest.approx(1.0)
    assert apls(split, other) == pytest.approx(apls(whole, other), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(segments, segments)
def test_scores_in_unit_interval(a, b):
    ga = graph(*[[[x0, y0], [x1, y1]] for x0, y0, x1, y1 in a])
    gb = graph(*[[[x0, y0], [x1, y1]] for x0, y0, x1, y1 in b])
    s = line_scores(ga, gb)
    for v in (s.correctness, s.completeness, s.apls):
        assert 0.0 <= v <= 1.0


def test_evaluate_report_echoes_params():
    g = graph(LINE)
    m = np.ones((3, 3), bool)
    rep = evaluate(g, g, m, m, tol=3, control_spacing=25)
    assert rep["params"] == {"tol": 3, "control_spacing": 25}
    assert rep["pixel"]["f1"] == 1.0
    assert rep["lines"]["apls"] == 1.0 and rep["lines"]["correctness"] == 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.tuples(st.integers(0, 800), st.integers(0, 800)), min_size=2, max_size=4,
                         unique=True), min_size=1, max_size=4))
def test_identical_graphs_score_exactly_one(lines):
    # overlapping geometry (a line folding back on itself or two lines sharing
    # a stretch) has no unique snap; lines may still cross at points. A 0.25 px
    # lattice keeps the simplicity check exact (no sub-resolution hairpins).
    lines = [[(x / 4, y / 4) for x, y in p] for p in lines]
    import shapely
    from labelcorr.annot import clean_points
    polys = [clean_points(p) for p in lines]
    polys = [p for p in polys if len(p) >= 2 and Polyline(p).length > 1e-3]
    geoms = [shapely.LineString(p) for p in polys]
    if not polys or not all(g.is_simple for g in geoms):
        return
    for a, b in itertools.combinations(geoms, 2):
        if a.intersection(b).length > 0:
            return
    g = graph(*polys)
    corr, comp, _ = correctness_completeness(g, g)
    assert (corr, comp, apls(g, g)) == (1.0, 1.0, 1.0)
