"""Top-down cloth perception: occupancy masks, contours, corners, grasp choice."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .cloth import ClothState
from .geometry import unit2
from .raster import fill_polygon


class PerceptionError(ValueError):
    pass


@dataclass(frozen=True)
class BinaryMask:
    """Row-major occupancy grid; ``bits[j, i]`` with ``j`` increasing with world y.

    Pixel centre is ``origin + (i + 0.5, j + 0.5) * scale``.
    """

    bits: np.ndarray
    scale: float
    origin: tuple[float, float]

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("mask scale must be positive")
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2:
            raise ValueError("mask bits must be 2-D")
        object.__setattr__(self, "bits", b)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def width_px(self) -> int:
        return self.bits.shape[1]

    @property
    def height_px(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @property
    def area(self) -> float:
        return self.count * self.scale * self.scale

    def same_frame(self, other: "BinaryMask") -> bool:
        return self.bits.shape == other.bits.shape and self.scale == other.scale and self.origin == other.origin

    def world_to_pixel(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.floor((xy - np.asarray(self.origin)) / self.scale).astype(int)

    def pixel_to_world(self, ij) -> np.ndarray:
        ij = np.asarray(ij, dtype=float)
        return np.asarray(self.origin) + (ij + 0.5) * self.scale

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """World x and y of every pixel centre, each shaped like ``bits``."""
        xs = self.origin[0] + (np.arange(self.width_px) + 0.5) * self.scale
        ys = self.origin[1] + (np.arange(self.height_px) + 0.5) * self.scale
        return np.meshgrid(xs, ys)

    def resample_like(self, ref: "BinaryMask") -> "BinaryMask":
        """Nearest-neighbour resample onto ``ref``'s pixel grid."""
        if self.same_frame(ref):
            return self
        x, y = ref.pixel_centers()
        i = np.floor((x - self.origin[0]) / self.scale).astype(int)
        j = np.floor((y - self.origin[1]) / self.scale).astype(int)
        ok = (i >= 0) & (i < self.width_px) & (j >= 0) & (j < self.height_px)
        bits = np.zeros(ref.bits.shape, dtype=bool)
        bits[ok] = self.bits[j[ok], i[ok]]
        return BinaryMask(bits, ref.scale, ref.origin)

    def with_bits(self, bits) -> "BinaryMask":
        return BinaryMask(np.asarray(bits, dtype=bool), self.scale, self.origin)


@dataclass(frozen=True)
class MaskFrame:
    origin: tuple[float, float]
    width_px: int
    height_px: int
    scale: float


def frame_for_points(points, scale: float, pad_frac: float = 0.05) -> MaskFrame:
    """Bounding box of ``points`` padded by ``pad_frac`` of the larger extent."""
    p = np.asarray(points, dtype=float)[:, :2]
    lo, hi = p.min(axis=0), p.max(axis=0)
    ext = hi - lo
    if ext.max() <= 0:
        raise PerceptionError("degenerate cloth: all particles coincide in the table plane")
    pad = pad_frac * float(ext.max()) + scale
    # snap to the global pixel lattice so masks from different frames line up
    lo = np.floor((lo - pad) / scale) * scale
    hi = hi + pad
    w = int(np.ceil((hi[0] - lo[0]) / scale))
    h = int(np.ceil((hi[1] - lo[1]) / scale))
    return MaskFrame((float(lo[0]), float(lo[1])), w, h, float(scale))


def rasterize_mask(cloth: ClothState, scale: float = 0.002, frame: MaskFrame | None = None) -> BinaryMask:
    """Orthographic top-down occupancy of every grid cell of the cloth."""
    if not scale > 0:
        raise PerceptionError("scale must be positive")
    if cloth.n == 0:
        raise PerceptionError("empty cloth")
    if frame is None:
        frame = frame_for_points(cloth.positions, scale)
    elif frame.scale != scale:
        raise PerceptionError("frame scale does not match requested scale")
    else:
        p = cloth.positions[:, :2]
        if np.ptp(p[:, 0]) <= 0 and np.ptp(p[:, 1]) <= 0:
            raise PerceptionError("degenerate cloth: all particles coincide in the table plane")
    bits = np.zeros((frame.height_px, frame.width_px), dtype=bool)
    px = (cloth.positions[:, :2] - np.asarray(frame.origin)) / scale
    for quad in cloth.quads():
        fill_polygon(bits, px[quad])
    return BinaryMask(bits, scale, frame.origin)


def largest_component(mask: BinaryMask) -> np.ndarray:
    labels, n = ndimage.label(mask.bits)
    if n == 0:
        raise PerceptionError("empty mask")
    sizes = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(sizes)) + 1
    return labels == keep


_STEP = {(1, 0): 0, (0, 1): 1, (-1, 0): 2, (0, -1): 3}


def _trace_boundary(region: np.ndarray) -> list[tuple[int, int]]:
    """Outer boundary of a hole-free 4-connected region along pixel edges.

    Edges are directed with the region on their left, so the loop is
    counter-clockwise in (x right, y up) coordinates.
    """
    h, w = region.shape
    pad = np.zeros((h + 2, w + 2), dtype=bool)
    pad[1:-1, 1:-1] = region
    r = pad[1:-1, 1:-1]
    out: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def add(mask, a, b):
        jj, ii = np.nonzero(mask)
        for j, i in zip(jj.tolist(), ii.tolist()):
            out.setdefault((i + a[0], j + a[1]), []).append((i + b[0], j + b[1]))

    add(r & ~pad[:-2, 1:-1], (0, 0), (1, 0))  # below empty
    add(r & ~pad[1:-1, 2:], (1, 0), (1, 1))  # right empty
    add(r & ~pad[2:, 1:-1], (1, 1), (0, 1))  # above empty
    add(r & ~pad[1:-1, :-2], (0, 1), (0, 0))  # left empty

    start = min(out)  # lowest x, then lowest y
    loop = [start]
    cur = start
    prev_dir = 3
    while True:
        nexts = out[cur]
        if len(nexts) == 1:
            nxt = nexts.pop()
        else:
            # pinch vertex: prefer the sharpest left turn to stay on this loop
            def turn(v):
                d = _STEP[(v[0] - cur[0], v[1] - cur[1])]
                return (d - prev_dir) % 4

            nexts.sort(key=lambda v: (-((turn(v) + 1) % 4), v))
            nxt = nexts.pop(0)
        if not nexts:
            del out[cur]
        prev_dir = _STEP[(nxt[0] - cur[0], nxt[1] - cur[1])]
        cur = nxt
        if cur == start:
            break
        loop.append(cur)
    return loop


def _merge_collinear(pts: np.ndarray) -> np.ndarray:
    keep = []
    n = len(pts)
    for k in range(n):
        a, b, c = pts[k - 1], pts[k], pts[(k + 1) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross != 0:
            keep.append(k)
    return pts[keep]


def extract_contour(mask: BinaryMask) -> np.ndarray:
    """Closed counter-clockwise outline (world metres) of the largest component.

    Holes are ignored. The returned array repeats its first point at the end.
    """
    if mask.count == 0:
        raise PerceptionError("cannot extract a contour from an empty mask")
    region = ndimage.binary_fill_holes(largest_component(mask))
    corners = np.asarray(_trace_boundary(region), dtype=float)
    corners = _merge_collinear(corners)
    world = np.asarray(mask.origin) + corners * mask.scale
    return np.vstack([world, world[:1]])


@dataclass(frozen=True)
class CornerSet:
    corners: np.ndarray
    polygon: np.ndarray

    def __len__(self) -> int:
        return len(self.corners)


def _dp(points: np.ndarray, eps: float) -> list[int]:
    """Douglas-Peucker on an open chain; returns kept indices (ends included)."""
    keep = {0, len(points) - 1}
    stack = [(0, len(points) - 1)]
    while stack:
        a, b = stack.pop()
        if b - a < 2:
            continue
        p, q = points[a], points[b]
        seg = q - p
        L = float(np.hypot(seg[0], seg[1]))
        mid = points[a + 1 : b]
        if L == 0.0:
            d = np.hypot(mid[:, 0] - p[0], mid[:, 1] - p[1])
        else:
            d = np.abs(seg[0] * (mid[:, 1] - p[1]) - seg[1] * (mid[:, 0] - p[0])) / L
        k = int(np.argmax(d))
        if d[k] > eps:
            m = a + 1 + k
            keep.add(m)
            stack.append((a, m))
            stack.append((m, b))
    return sorted(keep)


def simplify_closed(poly: np.ndarray, eps: float) -> np.ndarray:
    """Douglas-Peucker for a closed ring, anchored at two far-apart vertices."""
    pts = poly[:-1] if np.allclose(poly[0], poly[-1]) else poly
    n = len(pts)
    c = pts.mean(axis=0)
    a = int(np.argmax(((pts - c) ** 2).sum(axis=1)))
    ring = np.roll(pts, -a, axis=0)
    b = int(np.argmax(((ring - ring[0]) ** 2).sum(axis=1)))
    first = _dp(ring[: b + 1], eps)
    second = _dp(np.vstack([ring[b:], ring[:1]]), eps)
    idx = first + [b + k for k in second[1:-1]]
    return ring[idx] if n else ring


class _Ring:
    """Closed polyline parametrised by arc length."""

    def __init__(self, pts: np.ndarray):
        self.pts = pts
        seg = np.roll(pts, -1, axis=0) - pts
        self.seg = seg
        self.seglen = np.hypot(seg[:, 0], seg[:, 1])
        self.cum = np.concatenate([[0.0], np.cumsum(self.seglen)])
        self.length = float(self.cum[-1])

    def at(self, s) -> np.ndarray:
        s = np.mod(np.asarray(s, dtype=float), self.length)
        k = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.pts) - 1)
        t = (s - self.cum[k]) / np.where(self.seglen[k] > 0, self.seglen[k], 1.0)
        return self.pts[k] + t[..., None] * self.seg[k]

    def arc_of_vertex(self, k: int) -> float:
        return float(self.cum[k])

    def nearest(self, q) -> tuple[np.ndarray, float]:
        rel = q - self.pts
        t = np.clip((rel * self.seg).sum(axis=1) / np.maximum(self.seglen**2, 1e-300), 0.0, 1.0)
        proj = self.pts + t[:, None] * self.seg
        d = np.hypot(*(proj - q).T)
        k = int(np.argmin(d))
        return proj[k], float(self.cum[k] + t[k] * self.seglen[k])


def _fit_line(pts: np.ndarray):
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c)
    return c, vt[0]


def _intersect(c1, d1, c2, d2):
    m = np.array([d1, -d2]).T
    if abs(np.linalg.det(m)) < 1e-9:
        return None
    t = np.linalg.solve(m, c2 - c1)
    return c1 + t[0] * d1


def detect_corners(polygon, epsilon: float = 0.008, min_turn_deg: float = 30.0) -> CornerSet:
    """Corners of a closed outline.

    The outline is simplified with tolerance ``epsilon``; each surviving
    vertex is scored by the turn of the outline measured ``2 * epsilon`` of arc
    length either side of it, and vertices turning less than ``min_turn_deg``
    are dropped. Near-duplicates collapse onto the sharpest one. Each corner is
    then refined to the intersection of lines fitted to its two adjacent sides
    and snapped back onto the outline. Corners come out counter-clockwise.
    """
    poly = np.asarray(polygon, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 4:
        raise PerceptionError("polygon needs at least 3 vertices plus the closing point")
    if not np.allclose(poly[0], poly[-1]):
        raise PerceptionError("polygon is not closed (first and last points differ)")
    ring = _Ring(poly[:-1])
    if ring.length == 0:
        return CornerSet(np.zeros((0, 2)), poly)
    window = 2.0 * epsilon
    simple = simplify_closed(poly, epsilon)
    thresh = np.deg2rad(min_turn_deg)

    cands = []
    for v in simple:
        _, s = ring.nearest(v)
        a, b = ring.at(s - window) - v, ring.at(s + window) - v
        d_in, d_out = -a, b
        turn = abs(np.arctan2(d_in[0] * d_out[1] - d_in[1] * d_out[0], float(d_in @ d_out)))
        if turn >= thresh:
            cands.append((turn, s))
    # strongest first; suppress anything within one window of a kept corner
    cands.sort(key=lambda c: (-round(c[0], 12), c[1]))
    kept: list[float] = []
    for turn, s in cands:
        if all(min(abs(s - k), ring.length - abs(s - k)) > window for k in kept):
            kept.append(s)
    kept.sort()
    if len(kept) < 2:
        return CornerSet(np.zeros((0, 2)) if not kept else ring.at(np.array(kept)), poly)

    step = 0.25 * epsilon
    out = []
    for k, s in enumerate(kept):
        s_prev = kept[k - 1]
        s_next = kept[(k + 1) % len(kept)]
        before = (s - s_prev) % ring.length
        after = (s_next - s) % ring.length
        corner = ring.at(s)
        if before > 2 * window and after > 2 * window:
            sa = np.arange(s - before + window, s - window, step)
            sb = np.arange(s + window, s + after - window, step)
            if len(sa) >= 2 and len(sb) >= 2:
                ca, da = _fit_line(ring.at(sa))
                cb, db = _fit_line(ring.at(sb))
                hit = _intersect(ca, da, cb, db)
                if hit is not None and np.hypot(*(hit - corner)) < window:
                    corner, _ = ring.nearest(hit)
        out.append(corner)
    return CornerSet(np.array(out), poly)


def select_grasp_corners(corners, fold_direction, width_min: float = 0.0, width_max: float = 0.5):
    """Two corners furthest along ``fold_direction`` plus the clamped grasp width.

    Ties on extremeness prefer the wider pair, then lexicographic order, so the
    result does not depend on the input order.
    """
    pts = np.asarray(corners.corners if isinstance(corners, CornerSet) else corners, dtype=float)
    if len(pts) < 2:
        raise PerceptionError(f"need at least 2 corners, found {len(pts)}")
    d = unit2(fold_direction)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    proj = pts @ d
    best = None
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            dist = float(np.hypot(*(pts[a] - pts[b])))
            key = (-round(min(proj[a], proj[b]), 9), -round(dist, 9), a, b)
            if best is None or key < best[0]:
                best = (key, a, b)
    _, a, b = best
    p1, p2 = pts[a].copy(), pts[b].copy()
    width = float(min(max(np.hypot(*(p1 - p2)), width_min), width_max))
    return p1, p2, width
