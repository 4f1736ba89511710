"""Evaluation measures: pixel P/R/F1, line correctness/completeness, APLS."""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import networkx as nx
import numpy as np
import shapely

from .vectorize import LineGraph

RESAMPLE_STEP = 0.5
# relative path-length differences below this are floating-point noise
APLS_RTOL = 1e-9


@dataclass
class PixelScore:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    flags: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


@dataclass
class LineScore:
    correctness: float
    completeness: float
    apls: float
    matched_pred_len: float
    total_pred_len: float
    matched_gt_len: float
    total_gt_len: float
    flags: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def pixel_prf(pred, gt) -> PixelScore:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.sum(pred & gt))
    fp = int(np.sum(pred & ~gt))
    fn = int(np.sum(~pred & gt))
    flags = []
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        flags.append("precision_undefined")
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        flags.append("recall_undefined")
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PixelScore(precision, recall, f1, tp, fp, fn, flags)


# -- correctness / completeness -----------------------------------------------

def _geometries(graph: LineGraph):
    return [shapely.LineString(e.geometry.points) for e in graph.edges]


def _samples(graph: LineGraph, step: float = RESAMPLE_STEP):
    """Midpoints of ~``step``-long pieces of every edge, with the piece lengths."""
    pts, wts = [], []
    for e in graph.edges:
        line = shapely.LineString(e.geometry.points)
        n = max(int(np.ceil(e.length / step)), 1)
        piece = e.length / n
        d = (np.arange(n) + 0.5) * piece
        pts.append(shapely.get_coordinates(shapely.line_interpolate_point(line, d)))
        wts.append(np.full(n, piece))
    if not pts:
        return np.zeros((0, 2)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(wts)


def _matched_length(src: LineGraph, ref: LineGraph, tol: float) -> tuple[float, float]:
    pts, wts = _samples(src)
    total = float(wts.sum())
    if not len(pts) or ref.is_empty():
        return 0.0, total
    target = shapely.MultiLineString(_geometries(ref))
    dist = shapely.distance(shapely.points(pts), target)
    return float(wts[dist <= tol].sum()), total


def correctness_completeness(pred: LineGraph, gt: LineGraph, tol: float = 5.0):
    """Matched/total length ratios of prediction (correctness) and truth (completeness).

    Returns ``(correctness, completeness, details)``; ``details`` holds the four
    lengths and a list of flags for undefined ratios.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    mp, tp_len = _matched_length(pred, gt, tol)
    mg, tg_len = _matched_length(gt, pred, tol)
    flags = []
    if tp_len > 0:
        corr = mp / tp_len
    else:
        corr = 0.0
        flags.append("pred_empty")
    if tg_len > 0:
        comp = mg / tg_len
    else:
        comp = 0.0
        flags.append("gt_empty")
    details = {"matched_pred_len": mp, "total_pred_len": tp_len,
               "matched_gt_len": mg, "total_gt_len": tg_len, "flags": flags}
    return min(corr, 1.0), min(comp, 1.0), details


# -- APLS -------------------------------------------------------------------------

def _merge_chains(graph: LineGraph) -> list[np.ndarray]:
    """Edge geometries with every degree-2 node dissolved.

    Makes the control-point layout independent of how a path was split into
    edges or in which order the edges are listed.
    """
    g = nx.MultiGraph()
    for k, e in enumerate(graph.edges):
        g.add_edge(e.a, e.b, key=k, pts=e.geometry.points)
    chains = []
    done = set()

    def oriented(k, start):
        e = graph.edges[k]
        return e.geometry.points if e.a == start else e.geometry.points[::-1]

    stops = {n for n in g.nodes if g.degree(n) != 2}
    for start in sorted(stops, key=str):
        for _, nxt, k in sorted(g.edges(start, keys=True), key=lambda t: t[2]):
            if k in done:
                continue
            done.add(k)
            parts = [oriented(k, start)]
            cur = nxt
            while cur not in stops:
                cand = [kk for _, _, kk in g.edges(cur, keys=True) if kk not in done]
                if not cand:
                    break
                kk = min(cand)
                done.add(kk)
                parts.append(oriented(kk, cur))
                e = graph.edges[kk]
                cur = e.b if e.a == cur else e.a
            chains.append(np.concatenate([parts[0]] + [p[1:] for p in parts[1:]]))
    # pure cycles of degree-2 nodes
    for k in range(len(graph.edges)):
        if k in done:
            continue
        e = graph.edges[k]
        start = e.a
        done.add(k)
        parts = [oriented(k, start)]
        cur = e.b
        while cur != start:
            cand = [kk for _, _, kk in g.edges(cur, keys=True) if kk not in done]
            if not cand:
                break
            kk = min(cand)
            done.add(kk)
            parts.append(oriented(kk, cur))
            ee = graph.edges[kk]
            cur = ee.b if ee.a == cur else ee.a
        chains.append(np.concatenate([parts[0]] + [p[1:] for p in parts[1:]]))
    return chains


def _control_graph(chains, spacing: float):
    """Graph with control nodes every ~``spacing`` along each chain.

    Chain ends are shared nodes (matched by exact coordinates); interior
    control points sit at ``k * L / n`` with ``n = max(1, round(L / spacing))``.
    Returns ``(graph, {node: (x, y)})``.
    """
    g = nx.Graph()
    where = {}
    ends = {}

    def end_node(pt):
        key = (float(pt[0]), float(pt[1]))
        if key not in ends:
            ends[key] = ("e", len(ends))
            where[ends[key]] = key
            g.add_node(ends[key])
        return ends[key]

    for ci, pts in enumerate(chains):
        line = shapely.LineString(pts)
        length = line.length
        if length <= 0:
            continue
        n = max(1, int(round(length / spacing)))
        a = end_node(pts[0])
        b = end_node(pts[-1])
        prev, prev_d = a, 0.0
        for k in range(1, n):
            d = k * length / n
            node = ("c", ci, k)
            where[node] = tuple(shapely.get_coordinates(line.interpolate(d))[0])
            _add_edge(g, prev, node, d - prev_d)
            prev, prev_d = node, d
        _add_edge(g, prev, b, length - prev_d)
    return g, where


def _add_edge(g, u, v, w):
    if u == v:
        return
    w = max(float(w), 0.0)
    if g.has_edge(u, v):
        w = min(w, g[u][v]["weight"])
    g.add_edge(u, v, weight=w)


def _snap_graph(graph: LineGraph, points, tol: float):
    """Network of ``graph`` with each point within ``tol`` spliced onto its nearest edge.

    Returns ``(network, snapped)`` where ``snapped[i]`` is the node for point ``i``
    or ``None`` when the point is farther than ``tol`` from every edge.
    """
    g = nx.Graph()
    lines = _geometries(graph)
    for n in graph.nodes:
        g.add_node(("n", n.id))
    snapped = [None] * len(points)
    cuts = {k: [] for k in range(len(lines))}
    if lines and len(points):
        tree = shapely.STRtree(lines)
        geoms = shapely.points(np.asarray(points, dtype=float))
        idx = tree.query_nearest(geoms, max_distance=tol, all_matches=False, return_distance=False)
        for pi, li in zip(*idx):
            li = int(li)
            d = min(max(float(lines[li].project(geoms[pi])), 0.0), graph.edges[li].length)
            cuts[li].append((d, int(pi)))
    for k, e in enumerate(graph.edges):
        a, b = ("n", e.a), ("n", e.b)
        prev, prev_d = a, 0.0
        for d, pi in sorted(cuts[k]):
            node = ("s", pi)
            snapped[pi] = node
            _add_edge(g, prev, node, d - prev_d)
            prev, prev_d = node, d
        _add_edge(g, prev, b, e.length - prev_d)
    return g, snapped


def _one_way(src: LineGraph, dst: LineGraph, spacing: float, tol: float) -> float:
    """1 - mean path-length discrepancy of ``src`` control pairs measured on ``dst``."""
    g_src, where = _control_graph(_merge_chains(src), spacing)
    nodes = sorted(g_src.nodes, key=str)
    pts = [where[n] for n in nodes]
    g_dst, snapped = _snap_graph(dst, pts, tol)
    d_src = dict(nx.all_pairs_dijkstra_path_length(g_src, weight="weight"))
    diffs = []
    for i, j in itertools.combinations(range(len(nodes)), 2):
        l_src = d_src[nodes[i]].get(nodes[j])
        if l_src is None or l_src <= 0:
            continue                        # no path in the source graph: pair not scored
        si, sj = snapped[i], snapped[j]
        if si is None or sj is None:
            diffs.append(1.0)
            continue
        try:
            l_dst = nx.dijkstra_path_length(g_dst, si, sj, weight="weight")
        except nx.NetworkXNoPath:
            diffs.append(1.0)
            continue
        rel = abs(l_src - l_dst) / l_src
        diffs.append(0.0 if rel <= APLS_RTOL else min(1.0, rel))
    if not diffs:
        return 1.0
    return 1.0 - float(np.mean(diffs))


def apls(pred: LineGraph, gt: LineGraph, control_spacing: float = 50.0, snap: float = 5.0) -> float:
    """Average Path Length Similarity, symmetrised as the mean of both directions."""
    if control_spacing <= 0:
        raise ValueError("control_spacing must be > 0")
    if gt.is_empty() and pred.is_empty():
        return 1.0
    if gt.is_empty() or pred.is_empty():
        return 0.0
    return 0.5 * (_one_way(gt, pred, control_spacing, snap) + _one_way(pred, gt, control_spacing, snap))


def line_scores(pred: LineGraph, gt: LineGraph, tol: float = 5.0,
                control_spacing: float = 50.0) -> LineScore:
    corr, comp, det = correctness_completeness(pred, gt, tol)
    score = apls(pred, gt, control_spacing, snap=tol)
    return LineScore(corr, comp, score, det["matched_pred_len"], det["total_pred_len"],
                     det["matched_gt_len"], det["total_gt_len"], det["flags"])


def evaluate(pred_graph=None, gt_graph=None, pred_mask=None, gt_mask=None, tol: float = 5.0,
             control_spacing: float = 50.0) -> dict:
    """JSON-ready report ``{pixel: ..., lines: ..., params: ...}``."""
    report = {"params": {"tol": tol, "control_spacing": control_spacing}}
    if pred_mask is not None and gt_mask is not None:
        report["pixel"] = pixel_prf(pred_mask, gt_mask).to_dict()
    if pred_graph is not None and gt_graph is not None:
        report["lines"] = line_scores(pred_graph, gt_graph, tol, control_spacing).to_dict()
    return report
