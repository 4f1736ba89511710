"""Mask to line-graph vectorization: thinning, node detection, edge tracing.

Pixel ``(row=j, col=i)`` maps to the point ``(x=i, y=j)``. Skeletons are
8-connected. Edge geometry is the traced pixel chain simplified with a 1-px
Douglas-Peucker tolerance, so that staircase artefacts of oblique lines do
not inflate the measured length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy import ndimage
from shapely.ops import substring

from .annot import Polyline, clean_points

EIGHT = np.ones((3, 3), dtype=bool)
# ring order N, NE, E, SE, S, SW, W, NW as (drow, dcol)
RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
SIMPLIFY_TOL = 1.0


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float
    kind: str                       # end | turning | junction


@dataclass
class Edge:
    a: int
    b: int
    geometry: Polyline
    length: float


@dataclass
class LineGraph:
    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)

    @property
    def total_length(self) -> float:
        return float(sum(e.length for e in self.edges))

    def is_empty(self) -> bool:
        return not self.edges

    def node(self, nid: int) -> Node:
        for n in self.nodes:
            if n.id == nid:
                return n
        raise KeyError(nid)


# -- thinning ------------------------------------------------------------------

def remove_small_components(mask, min_px: int = 4) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if min_px <= 1 or not mask.any():
        return mask.copy()
    lab, n = ndimage.label(mask, structure=EIGHT)
    sizes = np.bincount(lab.ravel())
    keep = sizes >= min_px
    keep[0] = False
    return keep[lab]


def _neighbours(img):
    """Stack of the 8 ring neighbours (N, NE, ... NW) for every pixel."""
    p = np.pad(img, 1)
    h, w = img.shape
    return np.stack([p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w] for dr, dc in RING])


def _zhang_suen(img: np.ndarray) -> np.ndarray:
    img = img.astype(np.uint8)
    while True:
        changed = False
        for sub in (0, 1):
            n = _neighbours(img)
            b = n.sum(axis=0)
            a = ((n == 0) & (np.roll(n, -1, axis=0) == 1)).sum(axis=0)
            p2, p4, p6, p8 = n[0], n[2], n[4], n[6]
            if sub == 0:
                c = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                c = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            kill = (img == 1) & (b >= 2) & (b <= 6) & (a == 1) & c
            if kill.any():
                img[kill] = 0
                changed = True
        if not changed:
            return img.astype(bool)


def _ring_connected(bits) -> bool:
    """Whether the set ring positions form one 8-connected group (centre excluded)."""
    idx = [k for k in range(8) if bits[k]]
    if not idx:
        return False
    pos = {k: RING[k] for k in idx}
    seen = {idx[0]}
    stack = [idx[0]]
    while stack:
        k = stack.pop()
        for m in idx:
            if m not in seen and max(abs(pos[k][0] - pos[m][0]), abs(pos[k][1] - pos[m][1])) == 1:
                seen.add(m)
                stack.append(m)
    return len(seen) == len(idx)


def _drop_corners(img: np.ndarray) -> bool:
    """Remove staircase corner pixels in raster order; True if any were removed."""
    h, w = img.shape
    changed = False
    for r, c in zip(*np.nonzero(img)):
        bits = [0 <= r + dr < h and 0 <= c + dc < w and img[r + dr, c + dc] for dr, dc in RING]
        if sum(bits) < 2:
            continue
        n, e, s, wst = bits[0], bits[2], bits[4], bits[6]
        corner = (n and e) or (e and s) or (s and wst) or (wst and n)
        if corner and _ring_connected(bits):
            img[r, c] = False
            changed = True
    return changed


def _thin(skeleton) -> np.ndarray:
    """Copy of ``skeleton`` without redundant staircase corners (8-minimal)."""
    img = np.array(skeleton, dtype=bool)
    while _drop_corners(img):
        pass
    return img


def skeletonize(mask, min_component_px: int = 4) -> np.ndarray:
    """1-px wide 8-connected centreline of ``mask`` (Zhang-Suen thinning).

    Components smaller than ``min_component_px`` are discarded first. Thinning
    and staircase-corner removal alternate until neither changes the result.
    """
    img = remove_small_components(mask, min_component_px)
    while True:
        img = _zhang_suen(img)
        if not _drop_corners(img):
            return img


# -- nodes -----------------------------------------------------------------------

def _degree(skel: np.ndarray) -> np.ndarray:
    return np.where(skel, _neighbours(skel.astype(np.uint8)).sum(axis=0), 0)


def _pixel_neighbours(skel, r, c):
    h, w = skel.shape
    out = []
    for dr, dc in RING:
        rr, cc = r + dr, c + dc
        if 0 <= rr < h and 0 <= cc < w and skel[rr, cc]:
            out.append((rr, cc))
    return out


def _degree_nodes(skel):
    """End pixels and clustered junction pixels -> (list of (kind, pixels), owner map)."""
    deg = _degree(skel)
    groups = []
    for r, c in zip(*np.nonzero(skel & (deg <= 1))):
        groups.append(("end", [(int(r), int(c))]))
    lab, n = ndimage.label(skel & (deg >= 3), structure=EIGHT)
    if n:
        objs = ndimage.find_objects(lab)
        order = []
        for k in range(1, n + 1):
            rs, cs = np.nonzero(lab[objs[k - 1]] == k)
            pix = sorted((int(r + objs[k - 1][0].start), int(c + objs[k - 1][1].start))
                         for r, c in zip(rs, cs))
            order.append(pix)
        for pix in sorted(order):
            groups.append(("junction", pix))
    groups.sort(key=lambda g: g[1][0])
    return groups


def _representative(pixels):
    """Cluster pixel closest to the cluster centroid (ties: first in raster order)."""
    arr = np.array(pixels, dtype=float)
    d = np.hypot(*(arr - arr.mean(axis=0)).T)
    return pixels[int(np.argmin(d))]


def _walk(skel, start, first, owner, used):
    """Follow a chain from node pixel ``start`` through ``first`` until a node pixel."""
    path = [start, first]
    prev, cur = start, first
    while cur not in owner:
        used.add(cur)
        nbrs = [q for q in _pixel_neighbours(skel, *cur) if q != prev and q not in path[-3:]]
        if not nbrs:
            break
        nodes = [q for q in nbrs if q in owner]
        fresh = [q for q in nbrs if q not in used]
        pool = nodes or fresh or nbrs
        # prefer 4-neighbours so chains do not cut corners
        pool.sort(key=lambda q: (abs(q[0] - cur[0]) + abs(q[1] - cur[1]), q))
        prev, cur = cur, pool[0]
        if cur == start and cur in owner:
            path.append(cur)
            break
        path.append(cur)
    return path


def _trace(skel, owner):
    """All chains between node pixels, plus node-free cycles.

    ``owner`` maps node pixels to node keys. Returns ``(chains, cycles)`` where a
    chain is ``(key_a, key_b, pixels)`` and a cycle is a closed pixel list.
    """
    used = set()
    chains = []
    seen_steps = set()
    for start in sorted(owner):
        for nb in sorted(_pixel_neighbours(skel, *start)):
            if owner.get(nb) == owner[start]:
                continue                        # inside the same junction cluster
            if nb in used:
                continue
            if nb in owner:
                key = frozenset((start, nb))
                if key in seen_steps:
                    continue
                seen_steps.add(key)
                chains.append((owner[start], owner[nb], [start, nb]))
                continue
            path = _walk(skel, start, nb, owner, used)
            end = path[-1]
            if end in owner:
                seen_steps.add(frozenset((path[-2], end)))
                chains.append((owner[start], owner[end], path))
            else:
                chains.append((owner[start], None, path))
    cycles = []
    rest = skel.copy()
    for p in list(owner) + list(used):
        rest[p] = False
    lab, n = ndimage.label(rest, structure=EIGHT)
    for k in range(1, n + 1):
        rs, cs = np.nonzero(lab == k)
        start = min(zip(rs.tolist(), cs.tolist()))
        comp = rest & (lab == k)
        loop = [start]
        prev, cur = None, start
        while True:
            nbrs = sorted(q for q in _pixel_neighbours(comp, *cur) if q != prev and q not in loop[1:])
            if not nbrs:
                break
            nbrs.sort(key=lambda q: (abs(q[0] - cur[0]) + abs(q[1] - cur[1]), q))
            nxt = nbrs[0]
            if nxt == start:
                break
            prev, cur = cur, nxt
            loop.append(cur)
        cycles.append(loop)
    return chains, cycles


def _turn_angles(pts: np.ndarray, chord: int, closed: bool) -> np.ndarray:
    n = len(pts)
    ang = np.zeros(n)
    for k in range(n):
        if closed:
            a, b = pts[(k - chord) % n], pts[(k + chord) % n]
        else:
            if k - chord < 0 or k + chord >= n:
                continue
            a, b = pts[k - chord], pts[k + chord]
        v1 = pts[k] - a
        v2 = b - pts[k]
        n1, n2 = np.hypot(*v1), np.hypot(*v2)
        if n1 == 0 or n2 == 0:
            continue
        ang[k] = math.degrees(math.acos(np.clip(np.dot(v1, v2) / (n1 * n2), -1.0, 1.0)))
    return ang


def _turn_peaks(ang: np.ndarray, threshold: float, closed: bool) -> list[int]:
    """Index of the sharpest pixel in every run of angles above ``threshold``."""
    hot = ang > threshold
    if not hot.any():
        return []
    n = len(ang)
    idx = np.arange(n)
    if closed and hot.all():
        return [int(np.argmax(ang))]
    if closed:
        shift = int(np.argmin(hot))         # start scanning at a cold pixel
        idx = np.roll(idx, -shift)
    peaks, run = [], []
    for k in idx:
        if hot[k]:
            run.append(k)
        elif run:
            peaks.append(max(run, key=lambda j: (ang[j], -j)))
            run = []
    if run:
        peaks.append(max(run, key=lambda j: (ang[j], -j)))
    return sorted(int(p) for p in peaks)


def extract_nodes(skeleton, turn_angle_min: float = 30.0, chord: int = 5) -> list[Node]:
    """End, junction and turning nodes of a skeleton.

    Ends have one 8-neighbour, junctions three or more (adjacent junction
    pixels form one node). Turning nodes sit where the direction between the
    pixels ``chord`` steps behind and ahead changes by more than
    ``turn_angle_min`` degrees; one node per run of such pixels. Redundant
    corner pixels are dropped first, so hand-drawn paths need no thinning.
    """
    skel = _thin(skeleton)
    groups = _degree_nodes(skel)
    owner = {}
    for gi, (_, pix) in enumerate(groups):
        for q in pix:
            owner[q] = gi
    chains, cycles = _trace(skel, owner)

    nodes = []
    for kind, pix in groups:
        r, c = _representative(pix)
        nodes.append((r, c, kind))
    for _, _, path in chains:
        pts = np.array(path, dtype=float)
        for k in _turn_peaks(_turn_angles(pts, chord, False), turn_angle_min, False):
            if path[k] not in owner:
                nodes.append((path[k][0], path[k][1], "turning"))
    for loop in cycles:
        pts = np.array(loop, dtype=float)
        for k in _turn_peaks(_turn_angles(pts, chord, True), turn_angle_min, True):
            nodes.append((loop[k][0], loop[k][1], "turning"))
    nodes.sort()
    return [Node(i, float(c), float(r), kind) for i, (r, c, kind) in enumerate(nodes)]


# -- edges -------------------------------------------------------------------------

def _edge(a: int, b: int, pixels, anchor_a=None, anchor_b=None) -> Edge | None:
    pts = [(float(c), float(r)) for r, c in pixels]
    if anchor_a is not None and pts[0] != anchor_a:
        pts.insert(0, anchor_a)
    if anchor_b is not None and pts[-1] != anchor_b:
        pts.append(anchor_b)
    arr = np.array(pts)
    keep = np.r_[True, np.any(np.diff(arr, axis=0) != 0, axis=1)]
    arr = arr[keep]
    if len(arr) < 2:
        return None
    closed = a == b and np.all(arr[0] == arr[-1])
    simple = shapely.simplify(shapely.LineString(arr), SIMPLIFY_TOL, preserve_topology=closed)
    coords = np.asarray(simple.coords)
    if len(coords) < 2 or (closed and len(coords) < 4):
        coords = arr
    line = Polyline(coords)
    if line.length <= 0:
        return None
    return Edge(a, b, line, line.length)


def link_edges(skeleton, nodes) -> LineGraph:
    """Trace skeleton chains between adjacent nodes into a :class:`LineGraph`.

    Junction nodes own their whole pixel cluster. A closed component without
    any node gets a synthetic node at its top-most, left-most pixel and one
    self-loop edge.
    """
    skel = _thin(skeleton)
    nodes = list(nodes)
    if not skel.any():
        return LineGraph(nodes, [])
    owner = {}
    for n in nodes:
        owner[(int(round(n.y)), int(round(n.x)))] = n.id
    # junction clusters: every deg>=3 pixel belongs to the node in its cluster
    deg = _degree(skel)
    lab, _ = ndimage.label(skel & (deg >= 3), structure=EIGHT)
    for n in nodes:
        r, c = int(round(n.y)), int(round(n.x))
        if n.kind == "junction" and lab[r, c]:
            for q in zip(*np.nonzero(lab == lab[r, c])):
                owner[(int(q[0]), int(q[1]))] = n.id
    where = {n.id: (n.x, n.y) for n in nodes}

    chains, cycles = _trace(skel, owner)
    edges = []
    for a, b, path in chains:
        if b is None:
            b = a                                   # dead end inside a cluster walk
        e = _edge(a, b, path, where[a], where[b])
        if e is not None:
            edges.append(e)
    next_id = max((n.id for n in nodes), default=-1) + 1
    for loop in cycles:
        r, c = loop[0]
        nodes.append(Node(next_id, float(c), float(r), "turning"))
        e = _edge(next_id, next_id, loop + [loop[0]])
        if e is not None:
            edges.append(e)
        next_id += 1
    return LineGraph(nodes, edges)


def _point_back(points: np.ndarray, dist: float) -> np.ndarray:
    """Point ``dist`` along the polyline measured from its last vertex."""
    rev = points[::-1]
    seg = np.hypot(*np.diff(rev, axis=0).T)
    acc = 0.0
    for k, ln in enumerate(seg):
        if acc + ln >= dist:
            t = (dist - acc) / ln
            return rev[k] + t * (rev[k + 1] - rev[k])
        acc += ln
    return rev[-1]


def extend_ends(graph: LineGraph, mask, lookback: float = 5.0) -> LineGraph:
    """Push free ends back out to where the original stroke ends.

    Thinning stops short of rounded stroke ends by roughly the half width. Each
    end is marched along its terminal direction to the mask boundary and then
    pulled back by the local half width (distance transform along the edge).
    """
    mask = np.asarray(mask, dtype=bool)
    if graph.is_empty():
        return graph
    h, w = mask.shape
    edt = ndimage.distance_transform_edt(mask)
    degree = {}
    for e in graph.edges:
        degree[e.a] = degree.get(e.a, 0) + 1
        degree[e.b] = degree.get(e.b, 0) + 1
    moved = {}
    new_edges = []
    for e in graph.edges:
        pts = e.geometry.points.copy()
        samples = shapely.line_interpolate_point(
            shapely.LineString(pts), np.arange(0.0, e.length + 1e-9, 1.0))
        xy = np.round(shapely.get_coordinates(samples)).astype(int)
        half = max(float(np.median(edt[xy[:, 1].clip(0, h - 1), xy[:, 0].clip(0, w - 1)])) - 1.0, 0.0)
        for end in (0, 1):
            nid = e.a if end == 0 else e.b
            if e.a == e.b or degree.get(nid) != 1 or graph.node(nid).kind != "end":
                continue
            line = pts if end == 1 else pts[::-1]
            tip = line[-1]
            d = tip - _point_back(line, min(lookback, e.length))
            norm = math.hypot(*d)
            if norm == 0:
                continue
            d /= norm
            reach = 0.0
            t = 0.5
            while t <= 4 * half + 6:
                x, y = tip + t * d
                c, r = int(round(x)), int(round(y))
                if not (0 <= r < h and 0 <= c < w and mask[r, c]):
                    break
                reach = t
                t += 0.5
            ext = reach - half - 0.5     # nearest-pixel lookup reaches half a pixel past the edge
            if ext <= 0:
                continue
            new_tip = tip + ext * d
            if end == 1:
                pts[-1] = new_tip
            else:
                pts[0] = new_tip
            moved[nid] = new_tip
        line = Polyline(pts)
        new_edges.append(Edge(e.a, e.b, line, line.length))
    nodes = [Node(n.id, float(moved[n.id][0]), float(moved[n.id][1]), n.kind) if n.id in moved else n
             for n in graph.nodes]
    return LineGraph(nodes, new_edges)


def vectorize_mask(mask, min_component_px: int = 4, turn_angle_min: float = 30.0,
                   extend: bool = True) -> LineGraph:
    """Skeletonize, find nodes, link edges and (optionally) restore stroke ends."""
    skel = skeletonize(mask, min_component_px)
    graph = link_edges(skel, extract_nodes(skel, turn_angle_min))
    return extend_ends(graph, mask) if extend else graph


# -- conversions -----------------------------------------------------------------

def _split_at_ends(polylines, snap: float) -> list[Polyline]:
    """Split lines where another line's endpoint touches their interior (T-junctions)."""
    if not polylines:
        return []
    geoms = [shapely.LineString(p.points) for p in polylines]
    ends = shapely.points(np.array([pt for p in polylines for pt in (p.points[0], p.points[-1])]))
    out = []
    for pl, g in zip(polylines, geoms):
        near = ends[shapely.distance(ends, g) <= snap]
        cuts = sorted({float(d) for d in shapely.line_locate_point(g, near)
                       if snap < d < g.length - snap})
        if not cuts:
            out.append(pl)
            continue
        bounds = [0.0] + cuts + [g.length]
        for d0, d1 in zip(bounds[:-1], bounds[1:]):
            piece = clean_points(shapely.get_coordinates(substring(g, d0, d1)))
            if len(piece) >= 2:
                out.append(Polyline(piece, id=pl.id, properties=dict(pl.properties)))
    return out


def graph_from_polylines(lines, snap: float = 1e-6) -> LineGraph:
    """Line graph whose nodes are polyline endpoints (coincident ends merged).

    A line whose endpoint lies on another line's interior splits that line
    there, so T-junctions become shared nodes. Crossings are left alone.
    """
    nodes, edges = [], []
    index = {}
    lines = _split_at_ends([ln if isinstance(ln, Polyline) else Polyline(np.asarray(ln, dtype=float))
                            for ln in lines], snap)

    def node_at(pt):
        key = (round(pt[0] / snap), round(pt[1] / snap)) if snap > 0 else tuple(pt)
        if key not in index:
            index[key] = len(nodes)
            nodes.append(Node(len(nodes), float(pt[0]), float(pt[1]), "end"))
        return index[key]

    for pl in lines:
        a = node_at(pl.points[0])
        b = node_at(pl.points[-1])
        edges.append(Edge(a, b, pl, pl.length))
    degree = np.zeros(len(nodes), dtype=int)
    for e in edges:
        degree[e.a] += 1
        degree[e.b] += 1
    nodes = [Node(n.id, n.x, n.y, "junction" if degree[n.id] >= 3
                  else "end" if degree[n.id] == 1 else "turning") for n in nodes]
    return LineGraph(nodes, edges)


def graph_to_geojson(graph: LineGraph) -> dict:
    feats = []
    for k, e in enumerate(graph.edges):
        feats.append({
            "type": "Feature",
            "geometry": {"type": "LineString",
                         "coordinates": [[float(x), float(y)] for x, y in e.geometry.points]},
            "properties": {"id": k, "node_a": e.a, "node_b": e.b, "length": e.length},
        })
    return {"type": "FeatureCollection", "features": feats}
