"""Raster and polyline primitives.

Coordinates are (row, col) with the origin at the top-left pixel. Rasters are
numpy arrays, either ``(H, W)`` for single-channel data or ``(C, H, W)``
channel-planar for stacks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

Point = Tuple[float, float]
Pixel = Tuple[int, int]


class GeometryError(ValueError):
    """Degenerate geometric input."""


class NotFound(LookupError):
    """A windowed query had no admissible members."""


@dataclass(frozen=True)
class DensePolyline:
    points: np.ndarray  # (N, 2) float64
    cum_len: np.ndarray  # (N,) float64, cum_len[0] == 0

    @property
    def length(self) -> float:
        return float(self.cum_len[-1])

    def __len__(self) -> int:
        return len(self.points)

    def point_at(self, s: float) -> np.ndarray:
        """Point at arc length ``s`` (clamped to the ends), linearly interpolated."""
        s = min(max(float(s), 0.0), self.length)
        i = int(np.searchsorted(self.cum_len, s, side="right")) - 1
        if i >= len(self.points) - 1:
            return self.points[-1].copy()
        seg = self.cum_len[i + 1] - self.cum_len[i]
        t = (s - self.cum_len[i]) / seg
        return self.points[i] + t * (self.points[i + 1] - self.points[i])


def round_half_up(x) -> np.ndarray:
    # np.round is banker's rounding; pixels use floor(x + 0.5) everywhere
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def densify_polyline(raw: Sequence[Point], max_gap: float = 1.0) -> DensePolyline:
    pts = np.asarray(raw, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        raise GeometryError("polyline needs at least 2 points")
    if max_gap <= 0:
        raise GeometryError("max_gap must be positive")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("polyline has non-finite coordinates")
    # drop repeated (or sub-nanopixel) vertices, they would make cum_len non-increasing
    if np.any(np.hypot(*np.diff(pts, axis=0).T) <= 1e-9):
        keep = [0]
        for i in range(1, len(pts)):
            if math.hypot(*(pts[i] - pts[keep[-1]])) > 1e-9:
                keep.append(i)
        pts = pts[keep]
    if len(pts) < 2:
        raise GeometryError("polyline has zero length")

    a, d = pts[:-1], np.diff(pts, axis=0)
    n = np.array([max(1, math.ceil(math.hypot(*v) / max_gap - 1e-9)) for v in d])
    seg = np.repeat(np.arange(len(d)), n)
    k = np.arange(len(seg)) - np.repeat(np.cumsum(n) - n, n) + 1
    t = (k / n[seg])[:, None]
    chunk = a[seg] + t * d[seg]
    chunk[np.cumsum(n) - 1] = pts[1:]
    out = [pts[:1], chunk]
    dense = np.concatenate(out)
    steps = np.hypot(*np.diff(dense, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    return DensePolyline(dense, cum)


def nearest_point(
    dp: DensePolyline,
    q: Point,
    window: Optional[Tuple[float, float]] = None,
) -> Tuple[np.ndarray, float, float]:
    """Closest densified point to ``q``, optionally restricted to an arc window.

    Returns ``(point, arc_s, dist)``. Ties go to the smallest arc length.
    Raises :class:`NotFound` when no point falls inside ``window``.
    """
    idx = np.arange(len(dp.points))
    if window is not None:
        lo, hi = window
        idx = idx[(dp.cum_len >= lo) & (dp.cum_len <= hi)]
        if idx.size == 0:
            raise NotFound(f"no polyline point with arc length in [{lo}, {hi}]")
    diff = dp.points[idx] - np.asarray(q, dtype=np.float64)
    d2 = np.einsum("ij,ij->i", diff, diff)
    k = int(np.argmin(d2))
    i = idx[k]
    return dp.points[i].copy(), float(dp.cum_len[i]), float(math.sqrt(d2[k]))


def rasterize_segment(a: Point, b: Point) -> list[Pixel]:
    """Bresenham walk between the rounded endpoints (8-connected, inclusive)."""
    r0, c0 = (int(v) for v in round_half_up(a))
    r1, c1 = (int(v) for v in round_half_up(b))
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    r, c = r0, c0
    out = [(r, c)]
    while (r, c) != (r1, c1):
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr
        out.append((r, c))
    return out


def polyline_pixels(points: Sequence[Point]) -> set[Pixel]:
    """Pixels covered by a polyline: densify to 1 px, then rasterize each step.

    Used for predicted chains and ground truth alike so both are pixelized the
    same way.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return set()
    if len(pts) == 1 or np.all(pts == pts[0]):
        r, c = round_half_up(pts[0])
        return {(int(r), int(c))}
    dense = densify_polyline(pts, 1.0).points
    pix: set[Pixel] = set()
    for a, b in zip(dense[:-1], dense[1:]):
        pix.update(rasterize_segment(a, b))
    return pix


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Euclidean distance from every pixel to the nearest foreground pixel."""
    m = np.asarray(mask).astype(bool)
    if not m.any():
        raise GeometryError("distance transform of an empty mask")
    return ndimage.distance_transform_edt(~m)


# Zhang-Suen neighbour order P2..P9, clockwise from north.
_NBR = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def _neighbours(img: np.ndarray) -> list[np.ndarray]:
    p = np.pad(img, 1)
    h, w = img.shape
    return [p[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] for dr, dc in _NBR]


def _removable(img: np.ndarray, r: int, c: int) -> bool:
    H, W = img.shape
    nb = [
        int(img[r + dr, c + dc]) if 0 <= r + dr < H and 0 <= c + dc < W else 0
        for dr, dc in _NBR
    ]
    B = sum(nb)
    A = sum(1 for i in range(8) if nb[i] == 0 and nb[(i + 1) % 8] == 1)
    return 2 <= B <= 6 and A == 1


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen two-subiteration thinning of a binary mask.

    Deletion candidates of each subiteration are found in parallel, then
    re-checked one by one in raster order against the partly thinned image.
    The re-check keeps 2x2 blocks and two-pixel diagonals from vanishing, so
    the number of 8-connected components is preserved. Solid 3x3 blocks that
    plain thinning cannot touch are hollowed out before thinning resumes.
    """
    img = (np.asarray(mask) > 0).astype(np.uint8)
    while True:
        changed = False
        for sub in (0, 1):
            P = _neighbours(img)
            p2, p3, p4, p5, p6, p7, p8, p9 = P
            B = sum(P)
            seq = P + [p2]
            A = sum(((seq[i] == 0) & (seq[i + 1] == 1)).astype(np.uint8) for i in range(8))
            if sub == 0:
                c1 = (p2 * p4 * p6) == 0
                c2 = (p4 * p6 * p8) == 0
            else:
                c1 = (p2 * p4 * p8) == 0
                c2 = (p2 * p6 * p8) == 0
            cand = np.argwhere((img == 1) & (B >= 2) & (B <= 6) & (A == 1) & c1 & c2)
            if len(cand):
                img = img.copy()
                for r, c in cand:
                    if _removable(img, r, c):
                        img[r, c] = 0
                        changed = True
        if not changed:
            # a pixel with a full 3x3 neighbourhood is never a ZS candidate; its
            # eight neighbours form a connected ring, so dropping it is safe
            full = np.argwhere((img == 1) & (sum(_neighbours(img)) == 8))
            for r, c in full:
                if img[r - 1 : r + 2, c - 1 : c + 2].all():
                    img[r, c] = 0
                    changed = True
            if not changed:
                return img


def skeletonize_to_border(mask: np.ndarray, margin: int = 4) -> np.ndarray:
    """Thinning that lets strokes run off the image edge.

    Plain thinning sees background beyond the border and erodes a stroke's end
    by up to its half-width; thinning an edge-replicated copy and cropping it
    back keeps skeleton ends on the border.
    """
    m = np.asarray(mask) > 0
    if margin <= 0:
        return skeletonize(m)
    big = skeletonize(np.pad(m, margin, mode="edge"))
    return big[margin:-margin, margin:-margin]


def _skeleton_adjacency(skel: np.ndarray) -> dict[Pixel, list[Pixel]]:
    """8-adjacency with redundant diagonals removed.

    A diagonal link is dropped when the two pixels already touch through a
    shared 4-neighbour, which keeps staircases and T-junctions degree-clean.
    """
    fg = {(int(r), int(c)) for r, c in zip(*np.nonzero(skel))}
    adj: dict[Pixel, list[Pixel]] = {p: [] for p in fg}
    for r, c in sorted(fg):
        for dr, dc in _NBR:
            q = (r + dr, c + dc)
            if q not in fg:
                continue
            if dr != 0 and dc != 0 and ((r + dr, c) in fg or (r, c + dc) in fg):
                continue
            adj[(r, c)].append(q)
    return adj


def chain_length(chain: Sequence[Pixel]) -> float:
    """Pixel extent of a chain: sum of step lengths plus the first pixel."""
    if not chain:
        return 0.0
    a = np.asarray(chain, dtype=np.float64)
    return 1.0 + float(np.hypot(*np.diff(a, axis=0).T).sum()) if len(a) > 1 else 1.0


def skeleton_segments(
    skel: np.ndarray, min_len: float
) -> list[tuple[list[Pixel], tuple[Pixel, Pixel]]]:
    """Split a skeleton into maximal chains whose interior pixels have degree 2.

    Chains meet at junction pixels, which are shared by every chain that ends
    there. Chains shorter than ``min_len`` are dropped. Closed loops report
    their start pixel as both endpoints.
    """
    adj = _skeleton_adjacency(skel)
    anchors = sorted(p for p, n in adj.items() if len(n) != 2)
    seen: set[frozenset] = set()
    chains: list[list[Pixel]] = []

    def walk(start: Pixel, nxt: Pixel) -> list[Pixel]:
        chain = [start, nxt]
        seen.add(frozenset((start, nxt)))
        prev, cur = start, nxt
        while len(adj[cur]) == 2:
            a, b = adj[cur]
            step = b if a == prev else a
            edge = frozenset((cur, step))
            if edge in seen:
                break
            seen.add(edge)
            chain.append(step)
            prev, cur = cur, step
        return chain

    for p in anchors:
        if not adj[p]:
            chains.append([p])
            continue
        for q in sorted(adj[p]):
            if frozenset((p, q)) not in seen:
                chains.append(walk(p, q))
    # what remains are pure cycles
    for p in sorted(adj):
        for q in sorted(adj[p]):
            if frozenset((p, q)) not in seen:
                chains.append(walk(p, q))

    out = []
    for ch in chains:
        if chain_length(ch) < min_len:
            continue
        ends = (ch[0], ch[0]) if len(ch) > 2 and ch[-1] == ch[0] else (ch[0], ch[-1])
        if ch[-1] == ch[0] and len(ch) > 1:
            ch = ch[:-1]
        out.append((ch, ends))
    return out


def local_maxima(h: np.ndarray, radius: int, min_value: float) -> list[Pixel]:
    """Pixels that dominate their Chebyshev ``radius`` neighbourhood.

    Equal-valued maxima closer than ``radius`` collapse to the lexicographically
    smallest one.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 3:
        if h.shape[0] != 1:
            raise ValueError("local_maxima needs a single-channel raster")
        h = h[0]
    if radius < 1:
        raise ValueError("radius must be >= 1")
    size = 2 * int(radius) + 1
    mx = ndimage.maximum_filter(h, size=size, mode="constant", cval=-np.inf)
    cand = np.argwhere((h >= mx) & (h >= min_value))  # row-major == lexicographic
    kept: list[Pixel] = []
    for r, c in cand:
        if any(max(abs(r - kr), abs(c - kc)) <= radius for kr, kc in kept):
            continue
        kept.append((int(r), int(c)))
    return kept


def crop_window(r: np.ndarray, center: Point, d: int) -> np.ndarray:
    """``d x d`` window centred on ``round(center)``, zero-padded, channels kept.

    Rows span ``[cr - d/2, cr + d/2 - 1]``; same for columns.
    """
    if d % 2 or d < 4:
        raise ValueError(f"crop size must be even and >= 4, got {d}")
    arr = np.asarray(r)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    C, H, W = arr.shape
    cr, cc = (int(v) for v in round_half_up(center))
    r0, c0 = cr - d // 2, cc - d // 2
    out = np.zeros((C, d, d), dtype=arr.dtype)
    sr0, sr1 = max(r0, 0), min(r0 + d, H)
    sc0, sc1 = max(c0, 0), min(c0 + d, W)
    if sr0 < sr1 and sc0 < sc1:
        out[:, sr0 - r0 : sr1 - r0, sc0 - c0 : sc1 - c0] = arr[:, sr0:sr1, sc0:sc1]
    return out[0] if squeeze else out


def in_window(p, center: Point, d: int) -> np.ndarray:
    """Mask of points inside the continuous extent of ``crop_window(., center, d)``."""
    p = np.asarray(p, dtype=np.float64).reshape(-1, 2)
    cr, cc = round_half_up(center)
    lo_r, lo_c = cr - d // 2, cc - d // 2
    return (
        (p[:, 0] >= lo_r)
        & (p[:, 0] <= lo_r + d - 1)
        & (p[:, 1] >= lo_c)
        & (p[:, 1] <= lo_c + d - 1)
    )


def border_distance(p: Point, height: int, width: int) -> float:
    r, c = p
    return float(min(r, c, height - 1 - r, width - 1 - c))
