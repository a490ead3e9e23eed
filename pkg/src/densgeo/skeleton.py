"""Skeletonization baseline.

Pipeline: Zhang-Suen thinning -> branch/junction graph -> exact Euclidean
distance transform -> constant thickness per branch (mean of sampled local
diameters, floored at the 5th percentile over branches) -> straight members.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .mmc import T_MAX, T_MIN, Component, ComponentSet
from .raster import DensityGrid, GridSpec, PathLike, atomic_write

JUNCTION_RADIUS = 2
MIN_BRANCH_LENGTH = 3.0
DEFAULT_NUM_POINTS = 10

_EIGHT = np.ones((3, 3), dtype=bool)

# ring offsets (dj, di) clockwise from north: P2..P9 in Zhang-Suen notation
_RING = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


@dataclass
class Node:
    """Endpoint, junction cluster or isolated pixel of a skeleton graph."""

    i: int
    j: int
    kind: str
    pixels: list = field(default_factory=list)
    degree: int = 0


@dataclass
class Branch:
    """Pixel polyline between two nodes.

    ``points`` are ``(i, j)`` pixel coordinates (column, row) ordered from node
    ``start`` to node ``end``; ``pixels`` are the skeleton pixels it owns.
    """

    points: np.ndarray
    start: int
    end: int
    pixels: list = field(default_factory=list)

    @property
    def length(self) -> float:
        if len(self.points) < 2:
            return 0.0
        return float(np.hypot(*np.diff(self.points, axis=0).T).sum())


@dataclass
class Skeleton:
    spec: GridSpec
    pixels: np.ndarray
    nodes: list
    branches: list
    thicknesses: np.ndarray | None = None


@dataclass(frozen=True)
class DistanceField:
    spec: GridSpec
    dist: np.ndarray


def _require_binary(grid: DensityGrid) -> np.ndarray:
    if not grid.is_binary():
        raise ValueError("expected a binary grid with values in {0, 1}; binarize it first")
    return grid.values > 0.5


# --------------------------------------------------------------------------
# thinning
# --------------------------------------------------------------------------

def _neighbours(img: np.ndarray) -> list[np.ndarray]:
    p = np.pad(img, 1)
    ny, nx = img.shape
    return [p[1 + dj:1 + dj + ny, 1 + di:1 + di + nx] for dj, di in _RING]


def _zhang_suen(img: np.ndarray) -> np.ndarray:
    img = img.copy()
    while True:
        changed = False
        for step in (0, 1):
            P = [n.astype(np.int8) for n in _neighbours(img)]
            B = sum(P)
            seq = P + [P[0]]
            A = sum(((seq[k] == 0) & (seq[k + 1] == 1)).astype(np.int8) for k in range(8))
            p2, p4, p6, p8 = P[0], P[2], P[4], P[6]
            if step == 0:
                c1 = p2 * p4 * p6 == 0
                c2 = p4 * p6 * p8 == 0
            else:
                c1 = p2 * p4 * p8 == 0
                c2 = p2 * p6 * p8 == 0
            kill = img & (B >= 2) & (B <= 6) & (A == 1) & c1 & c2
            if kill.any():
                img[kill] = False
                changed = True
        if not changed:
            return img


def _simple_point_table() -> np.ndarray:
    """Lookup over the 8-bit neighbour ring: may the centre pixel be deleted?

    True when the pixel is 8-simple (one 8-connected foreground arc, one
    4-connected background component touching the centre) and is not an
    endpoint, i.e. deleting it keeps topology and leaves the curve thinner.
    """
    offs = [(dj, di) for dj, di in _RING]
    table = np.zeros(256, dtype=bool)
    four = {0, 2, 4, 6}
    for code in range(256):
        fg = [k for k in range(8) if code >> k & 1]
        bg = [k for k in range(8) if not code >> k & 1]
        if len(fg) < 2:
            continue

        def count(members, adjacent, seeds=None):
            left = set(members)
            n = 0
            while left:
                stack = [left.pop()]
                comp = set(stack)
                while stack:
                    a = stack.pop()
                    for b in list(left):
                        if adjacent(offs[a], offs[b]):
                            left.remove(b)
                            comp.add(b)
                            stack.append(b)
                if seeds is None or comp & seeds:
                    n += 1
            return n

        cheb = lambda a, b: max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1
        manh = lambda a, b: abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1
        if count(fg, cheb) == 1 and count(bg, manh, four) == 1:
            table[code] = True
    return table


_DELETABLE = _simple_point_table()


def _make_minimal(img: np.ndarray) -> np.ndarray:
    """Sequentially delete redundant staircase pixels so curves are 8-minimal."""
    img = img.copy()
    ny, nx = img.shape
    pad = np.pad(img, 1)
    changed = True
    while changed:
        changed = False
        for j, i in zip(*np.nonzero(pad[1:-1, 1:-1])):
            code = 0
            for k, (dj, di) in enumerate(_RING):
                if pad[j + 1 + dj, i + 1 + di]:
                    code |= 1 << k
            if _DELETABLE[code]:
                pad[j + 1, i + 1] = False
                changed = True
    return pad[1:-1, 1:-1]


def thin(binary: DensityGrid) -> np.ndarray:
    """One-pixel-wide 8-connected skeleton mask of a binary grid.

    Zhang-Suen thinning followed by removal of redundant staircase pixels.
    Components that Zhang-Suen erases entirely (2x2 blocks, two-pixel
    diagonals) keep their most interior pixel so the component count is
    preserved.
    """
    img = _require_binary(binary)
    if not img.any():
        return np.zeros_like(img)
    sk = _make_minimal(_zhang_suen(img))
    labels, n = ndimage.label(img, structure=_EIGHT)
    if n:
        hit = np.zeros(n + 1, dtype=bool)
        hit[np.unique(labels[sk])] = True
        missing = [k for k in range(1, n + 1) if not hit[k]]
        if missing:
            dist = _edt(img)
            for k in missing:
                flat = np.where(labels == k, dist, -1.0)
                sk[np.unravel_index(int(np.argmax(flat)), img.shape)] = True
    return sk


# --------------------------------------------------------------------------
# distance transform
# --------------------------------------------------------------------------

def _edt(mask: np.ndarray) -> np.ndarray:
    # the region outside the grid counts as void
    padded = np.pad(mask, 1)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def distance_transform(binary: DensityGrid) -> DistanceField:
    """Exact Euclidean distance (pixels) from each pixel centre to the nearest void.

    Pixels just outside the grid are treated as void, so material touching the
    border has distance 1 there.
    """
    return DistanceField(binary.spec, _edt(_require_binary(binary)))


# --------------------------------------------------------------------------
# graph extraction
# --------------------------------------------------------------------------

def _degree(mask: np.ndarray) -> np.ndarray:
    k = np.ones((3, 3), dtype=np.int32)
    k[1, 1] = 0
    return ndimage.convolve(mask.astype(np.int32), k, mode="constant") * mask


def _order_chain(pix: list[tuple[int, int]]) -> list[tuple[int, int]] | None:
    """Order the pixels of a simple 8-connected chain; None for a cycle."""
    pset = set(pix)

    def nbrs(p):
        j, i = p
        return [(j + dj, i + di) for dj, di in _RING if (j + dj, i + di) in pset]

    ends = [p for p in pix if len(nbrs(p)) <= 1]
    if not ends:
        return None
    order = [min(ends)]
    seen = {order[0]}
    while True:
        nxt = [q for q in nbrs(order[-1]) if q not in seen]
        if not nxt:
            break
        order.append(nxt[0])
        seen.add(nxt[0])
    return order


def extract_graph(skeleton_pixels: np.ndarray, spec: GridSpec | None = None) -> Skeleton:
    """Nodes and branches of a thin skeleton mask (rows x columns)."""
    mask = np.asarray(skeleton_pixels, dtype=bool).copy()
    if spec is None:
        spec = GridSpec.unit_scaled(mask.shape[1], mask.shape[0])
    deg = _degree(mask)
    node_of = -np.ones(mask.shape, dtype=np.int64)
    nodes: list[Node] = []

    junc = np.argwhere(mask & (deg >= 3))
    if len(junc):
        parent = list(range(len(junc)))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for a, b in cKDTree(junc).query_pairs(JUNCTION_RADIUS, p=np.inf):
            parent[find(a)] = find(b)
        groups: dict[int, list] = {}
        for k in range(len(junc)):
            groups.setdefault(find(k), []).append(k)
        for root in sorted(groups, key=lambda r: tuple(junc[min(groups[r])])):
            pts = junc[groups[root]]
            c = pts.mean(axis=0)
            rep = pts[np.argmin(((pts - c) ** 2).sum(axis=1))]
            nid = len(nodes)
            nodes.append(Node(int(rep[1]), int(rep[0]), "junction", [tuple(map(int, p)) for p in pts]))
            node_of[pts[:, 0], pts[:, 1]] = nid
    for kind, sel in (("end", deg == 1), ("isolated", deg == 0)):
        for j, i in np.argwhere(mask & sel):
            node_of[j, i] = len(nodes)
            nodes.append(Node(int(i), int(j), kind, [(int(j), int(i))]))

    branches: list[Branch] = []

    def rep(nid):
        return (nodes[nid].i, nodes[nid].j)

    def attached(p):
        j, i = p
        out = []
        for dj, di in _RING:
            jj, ii = j + dj, i + di
            if 0 <= jj < mask.shape[0] and 0 <= ii < mask.shape[1] and node_of[jj, ii] >= 0:
                out.append(int(node_of[jj, ii]))
        return out

    path = mask & (node_of < 0)
    labels, n = ndimage.label(path, structure=_EIGHT)
    slices = ndimage.find_objects(labels)
    for k in range(1, n + 1):
        sl = slices[k - 1]
        local = np.argwhere(labels[sl] == k)
        pix = [(int(j + sl[0].start), int(i + sl[1].start)) for j, i in local]
        order = _order_chain(pix)
        if order is None:
            # closed loop without nodes: cut it into two branches at opposite pixels
            order = _order_chain(pix[1:]) or pix
            a = Node(pix[0][1], pix[0][0], "loop", [])
            nodes.append(a)
            na = len(nodes) - 1
            half = len(order) // 2
            first = [(pix[0][1], pix[0][0])] + [(i, j) for j, i in order[:half + 1]]
            second = [(i, j) for j, i in order[half:]] + [(pix[0][1], pix[0][0])]
            branches.append(Branch(np.array(first, dtype=float), na, na, [pix[0]] + order[:half]))
            branches.append(Branch(np.array(second, dtype=float), na, na, order[half:]))
            continue
        head = attached(order[0])
        tail = attached(order[-1])
        if len(order) == 1:
            ends = sorted(set(head))
            a, b = (ends[0], ends[-1]) if ends else (-1, -1)
        else:
            a = min(head) if head else -1
            b = min(tail) if tail else -1
        pts = [(i, j) for j, i in order]
        if a >= 0:
            pts = [rep(a)] + pts
        if b >= 0:
            pts = pts + [rep(b)]
        branches.append(Branch(np.array(pts, dtype=float), a, b, list(order)))

    # nodes touching other nodes directly (no path pixels in between)
    linked = set()
    for nid, node in enumerate(nodes):
        for p in node.pixels:
            for other in attached(p):
                if other != nid and (min(nid, other), max(nid, other)) not in linked:
                    linked.add((min(nid, other), max(nid, other)))
    for a, b in sorted(linked):
        if not any({br.start, br.end} == {a, b} for br in branches):
            branches.append(Branch(np.array([rep(a), rep(b)], dtype=float), a, b, []))

    return _prune_graph(Skeleton(spec, mask, nodes, branches))


def _prune_graph(sk: Skeleton) -> Skeleton:
    """Drop short spurs and merge the branches meeting at degree-2 nodes."""
    nodes, branches = sk.nodes, sk.branches
    mask = sk.pixels

    def degrees():
        d = [0] * len(nodes)
        for br in branches:
            for e in (br.start, br.end):
                if e >= 0:
                    d[e] += 1
        return d

    deg = degrees()
    keep = []
    for br in branches:
        free_a = br.start < 0 or deg[br.start] <= 1
        free_b = br.end < 0 or deg[br.end] <= 1
        # a short branch that is a whole component on its own is kept
        if br.length < MIN_BRANCH_LENGTH and (free_a or free_b) and not (free_a and free_b):
            for j, i in br.pixels:
                mask[j, i] = False
            continue
        keep.append(br)
    branches = keep
    deg = degrees()
    for nid, node in enumerate(nodes):
        if node.kind == "end" and deg[nid] == 0:
            for j, i in node.pixels:
                mask[j, i] = False
            node.pixels = []

    # merge through junctions left with exactly two distinct branches
    merged = True
    while merged:
        merged = False
        deg = degrees()
        for nid, node in enumerate(nodes):
            if node.kind not in ("junction", "loop") or deg[nid] != 2:
                continue
            touching = [b for b in branches if nid in (b.start, b.end)]
            if len(touching) != 2 or touching[0] is touching[1]:
                continue
            b1, b2 = touching
            p1 = b1.points if b1.end == nid else b1.points[::-1]
            s1 = b1.start if b1.end == nid else b1.end
            p2 = b2.points if b2.start == nid else b2.points[::-1]
            e2 = b2.end if b2.start == nid else b2.start
            new = Branch(np.vstack([p1, p2[1:]]), s1, e2, b1.pixels + node.pixels + b2.pixels)
            node.pixels = []
            node.kind = "merged"
            branches = [b for b in branches if b is not b1 and b is not b2] + [new]
            merged = True
            break

    # renumber surviving nodes
    deg = degrees()
    alive = [k for k, nd in enumerate(nodes) if nd.pixels or deg[k] > 0]
    alive = [k for k in alive if nodes[k].kind != "merged"]
    remap = {old: new for new, old in enumerate(alive)}
    new_nodes = []
    for k in alive:
        nd = nodes[k]
        nd.degree = deg[k]
        new_nodes.append(nd)
    for br in branches:
        br.start = remap.get(br.start, -1)
        br.end = remap.get(br.end, -1)
    branches.sort(key=lambda b: tuple(b.points[0]) + tuple(b.points[-1]))
    return Skeleton(sk.spec, mask, new_nodes, branches)


# --------------------------------------------------------------------------
# thickness and conversion
# --------------------------------------------------------------------------

def _sample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    if len(points) == 1:
        return np.repeat(points, n, axis=0)
    seg = np.hypot(*np.diff(points, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], n)
    return np.column_stack([np.interp(targets, s, points[:, 0]), np.interp(targets, s, points[:, 1])])


def estimate_branch_thickness(skel: Skeleton, dist: DistanceField,
                              num_points: int = DEFAULT_NUM_POINTS) -> np.ndarray:
    """Constant diameter (pixels) per branch.

    Each branch is sampled at ``num_points`` equally spaced points (ends
    included); the local diameter is twice the largest distance value in the
    3x3 neighbourhood of the sample and the branch gets the mean.  Results
    are floored at the 5th percentile (linear interpolation) over branches.
    """
    if num_points < 1:
        raise ValueError("num_points must be >= 1")
    if not skel.branches:
        return np.zeros(0)
    d = np.pad(dist.dist, 1)
    ny, nx = dist.dist.shape
    out = np.empty(len(skel.branches))
    for k, br in enumerate(skel.branches):
        pts = _sample_polyline(br.points, num_points)
        ii = np.clip(np.rint(pts[:, 0]).astype(int), 0, nx - 1)
        jj = np.clip(np.rint(pts[:, 1]).astype(int), 0, ny - 1)
        win = np.stack([d[jj + 1 + dj, ii + 1 + di] for dj in (-1, 0, 1) for di in (-1, 0, 1)])
        out[k] = np.mean(2.0 * win.max(axis=0))
    floor = np.percentile(out, 5, method="linear")
    return np.maximum(out, floor)


def skeletonize(binary: DensityGrid, num_points: int = DEFAULT_NUM_POINTS) -> Skeleton:
    """Thin, extract the graph and estimate branch thicknesses in one call."""
    sk = extract_graph(thin(binary), binary.spec)
    th = estimate_branch_thickness(sk, distance_transform(binary), num_points)
    return replace(sk, thicknesses=th)


def _pixel_to_phys(spec: GridSpec, pt) -> tuple[float, float]:
    x, y = spec.pixel_center(pt[0], pt[1])
    return float(x), float(y)


def skeleton_to_components(skel: Skeleton) -> ComponentSet:
    """One straight component per branch: chord between its end points.

    Closed branches (coincident ends) are split at their farthest point.
    """
    if skel.thicknesses is None and skel.branches:
        raise ValueError("estimate branch thicknesses first")
    spec = skel.spec
    comps = []
    for br, th in zip(skel.branches, skel.thicknesses if skel.thicknesses is not None else []):
        t = float(np.clip(0.5 * th * spec.pitch, T_MIN, T_MAX))
        pts = br.points
        chords = [(pts[0], pts[-1])]
        if np.hypot(*(pts[-1] - pts[0])) < 1.0:
            far = int(np.argmax(np.hypot(*(pts - pts[0]).T)))
            if far == 0:
                continue
            chords = [(pts[0], pts[far]), (pts[far], pts[-1])]
        for a, b in chords:
            (ax, ay), (bx, by) = _pixel_to_phys(spec, a), _pixel_to_phys(spec, b)
            if np.hypot(bx - ax, by - ay) < 1e-6:
                continue
            comps.append(Component(ax, ay, bx, by, t))
    return ComponentSet(tuple(comps), spec)


def _segment_distance(px, py, a, b):
    d = b - a
    dd = float(d @ d)
    if dd == 0.0:
        return np.hypot(px - a[0], py - a[1])
    s = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / dd, 0.0, 1.0)
    return np.hypot(px - a[0] - s * d[0], py - a[1] - s * d[1])


def render_skeleton_reconstruction(skel: Skeleton, spec: GridSpec | None = None) -> DensityGrid:
    """Binary raster of every branch stroked with round caps at its thickness."""
    spec = skel.spec if spec is None else spec
    out = np.zeros(spec.shape, dtype=bool)
    if not skel.branches:
        return DensityGrid.zeros(spec)
    if skel.thicknesses is None:
        raise ValueError("estimate branch thicknesses first")
    ny, nx = spec.shape
    for br, th in zip(skel.branches, skel.thicknesses):
        r = 0.5 * th
        pts = br.points
        lo = np.floor(pts.min(axis=0) - r).astype(int)
        hi = np.ceil(pts.max(axis=0) + r).astype(int)
        i0, j0 = max(lo[0], 0), max(lo[1], 0)
        i1, j1 = min(hi[0], nx - 1), min(hi[1], ny - 1)
        if i0 > i1 or j0 > j1:
            continue
        jj, ii = np.mgrid[j0:j1 + 1, i0:i1 + 1]
        best = np.full(ii.shape, np.inf)
        if len(pts) == 1:
            best = np.hypot(ii - pts[0, 0], jj - pts[0, 1])
        for a, b in zip(pts[:-1], pts[1:]):
            best = np.minimum(best, _segment_distance(ii, jj, a, b))
        out[j0:j1 + 1, i0:i1 + 1] |= best < r
    return DensityGrid(spec, out.astype(np.float64), check=False)


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

def skeleton_to_dict(skel: Skeleton) -> dict:
    th = skel.thicknesses
    return {
        "domain": skel.spec.to_dict(),
        "nodes": [{"i": n.i, "j": n.j, "kind": n.kind, "degree": n.degree} for n in skel.nodes],
        "branches": [
            {"start": b.start, "end": b.end, "points": b.points.tolist(),
             "thickness": None if th is None else float(th[k])}
            for k, b in enumerate(skel.branches)
        ],
    }


def save_skeleton(path: PathLike, skel: Skeleton) -> None:
    atomic_write(Path(path), (json.dumps(skeleton_to_dict(skel), indent=2) + "\n").encode())
