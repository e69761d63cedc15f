"""Sparse correspondences: CSV ingestion of external matches and a small
Harris + ZNCC matcher whose match count serves as the curation signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import EmptyFile, ImageTooSmall, MalformedLine
from .raster import Raster


@dataclass
class MatchSet:
    """Correspondences (u_L, v_L) <-> (u_R, v_R) with scores in [0, 1].

    Attributes:
        matches: (N, 5) float array of u_L, v_L, u_R, v_R, score.
        source: "external" or "builtin".
    """

    matches: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))
    source: str = "external"

    def __post_init__(self):
        m = np.asarray(self.matches, dtype=float)
        if m.size == 0:
            m = np.zeros((0, 5))
        m = np.atleast_2d(m)
        if m.shape[1] == 4:
            m = np.column_stack([m, np.ones(len(m))])
        if m.shape[1] != 5:
            raise ValueError("matches must have 4 or 5 columns")
        if not np.all(np.isfinite(m[:, :4])):
            raise ValueError("match coordinates must be finite")
        if len(m) and not np.all((m[:, 4] >= 0) & (m[:, 4] <= 1)):
            raise ValueError("scores must lie in [0, 1]")
        self.matches = m

    def __len__(self) -> int:
        return len(self.matches)

    @property
    def left(self) -> np.ndarray:
        return self.matches[:, 0:2]

    @property
    def right(self) -> np.ndarray:
        return self.matches[:, 2:4]

    @property
    def scores(self) -> np.ndarray:
        return self.matches[:, 4]

    def swapped(self) -> "MatchSet":
        m = self.matches[:, [2, 3, 0, 1, 4]]
        return MatchSet(m, self.source)


def match_count(m: MatchSet) -> int:
    return len(m)


def load_matches(path) -> MatchSet:
    """Read ``uL,vL,uR,vR[,score]`` lines; ``#`` starts a comment."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = [p.strip() for p in text.split(",")]
            if len(parts) not in (4, 5):
                raise MalformedLine(lineno, line.rstrip("\n"))
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise MalformedLine(lineno, line.rstrip("\n")) from None
            if len(vals) == 4:
                vals.append(1.0)
            if not all(np.isfinite(vals)) or not 0 <= vals[4] <= 1:
                raise MalformedLine(lineno, line.rstrip("\n"))
            rows.append(vals)
    if not rows:
        raise EmptyFile(f"{path}: no matches")
    return MatchSet(np.array(rows), source="external")


def save_matches(m: MatchSet, path) -> None:
    lines = [",".join(repr(float(v)) for v in row) for row in m.matches]  # shortest exact form
    Path(path).write_text("".join(line + "\n" for line in lines))


# ------------------------------------------------------------ the matcher

@dataclass
class MatchConfig:
    corner_tau: float = 0.01  # Harris response threshold, relative to the image maximum
    nms_radius: int = 4
    window: int = 11
    ratio: float = 0.8
    inlier_px: float = 3.0
    max_keypoints: int = 1500
    ransac_iters: int = 1000
    seed: int = 0
    min_expected: int = 40


def harris_corners(img: np.ndarray, cfg: MatchConfig) -> np.ndarray:
    """(N, 2) integer (col, row) keypoints, strongest first.

    Pixels whose descriptor window touches nodata or the border are skipped.
    """
    valid = np.isfinite(img)
    f = np.where(valid, img, 0.0).astype(float)
    gx = ndimage.sobel(f, axis=1)
    gy = ndimage.sobel(f, axis=0)
    sxx = ndimage.gaussian_filter(gx * gx, 1.5)
    syy = ndimage.gaussian_filter(gy * gy, 1.5)
    sxy = ndimage.gaussian_filter(gx * gy, 1.5)
    resp = sxx * syy - sxy * sxy - 0.04 * (sxx + syy) ** 2
    half = cfg.window // 2
    usable = ndimage.binary_erosion(valid, structure=np.ones((2 * half + 3, 2 * half + 3)), border_value=0)
    resp = np.where(usable, resp, -np.inf)
    peak = resp.max() if usable.any() else 0.0
    if not np.isfinite(peak) or peak <= 0:
        return np.zeros((0, 2), dtype=int)
    size = 2 * cfg.nms_radius + 1
    local_max = resp == ndimage.maximum_filter(resp, size=size, mode="constant", cval=-np.inf)
    keep = local_max & (resp > cfg.corner_tau * peak)
    rows, cols = np.nonzero(keep)
    order = np.lexsort((cols, rows, -resp[rows, cols]))[: cfg.max_keypoints]
    return np.column_stack([cols[order], rows[order]])


def _descriptors(img: np.ndarray, kps: np.ndarray, half: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean unit-norm patches; rows with zero variance are flagged."""
    if len(kps) == 0:
        return np.zeros((0, (2 * half + 1) ** 2)), np.zeros(0, dtype=bool)
    off = np.arange(-half, half + 1)
    dy, dx = np.meshgrid(off, off, indexing="ij")
    patches = img[kps[:, 1, None] + dy.ravel()[None], kps[:, 0, None] + dx.ravel()[None]].astype(float)
    patches -= patches.mean(axis=1, keepdims=True)
    norm = np.linalg.norm(patches, axis=1)
    ok = norm > 1e-9
    patches[ok] /= norm[ok, None]
    return patches, ok


def _zncc_at(a: np.ndarray, b: np.ndarray, pa, pb, half: int) -> float:
    wa = a[pa[1] - half:pa[1] + half + 1, pa[0] - half:pa[0] + half + 1]
    wb = b[pb[1] - half:pb[1] + half + 1, pb[0] - half:pb[0] + half + 1]
    if wa.shape != wb.shape or wa.size == 0 or not (np.isfinite(wa).all() and np.isfinite(wb).all()):
        return -np.inf
    wa = wa - wa.mean()
    wb = wb - wb.mean()
    den = np.sqrt((wa * wa).sum() * (wb * wb).sum())
    return float((wa * wb).sum() / den) if den > 0 else -np.inf


def _subpixel(a: np.ndarray, b: np.ndarray, pa, pb, half: int, c0: float):
    """Parabolic refinement of the position in ``b`` along x and y."""
    out = []
    for axis in (0, 1):
        step = np.array([1, 0]) if axis == 0 else np.array([0, 1])
        cm = _zncc_at(a, b, pa, pb - step, half)
        cp = _zncc_at(a, b, pa, pb + step, half)
        denom = cm - 2 * c0 + cp
        if np.isfinite(cm) and np.isfinite(cp) and denom < 0:
            out.append(float(np.clip(0.5 * (cm - cp) / denom, -0.5, 0.5)))
        else:
            out.append(0.0)
    return out


def _translation_inliers(d: np.ndarray, cfg: MatchConfig) -> np.ndarray:
    """Inlier mask of the dominant translation among displacement vectors d."""
    n = len(d)
    if n == 0:
        return np.zeros(0, dtype=bool)
    if n <= cfg.ransac_iters:
        hyps = d  # every sample is tried
    else:
        rng = np.random.default_rng(cfg.seed)
        hyps = d[rng.integers(0, n, size=cfg.ransac_iters)]
    best, best_count, best_cost = None, -1, np.inf
    for h in hyps:
        r = np.hypot(*(d - h).T)
        inl = r <= cfg.inlier_px
        count = int(inl.sum())
        cost = float(r[inl].sum())
        if count > best_count or (count == best_count and cost < best_cost):
            best, best_count, best_cost = h, count, cost
    inl = np.hypot(*(d - best).T) <= cfg.inlier_px
    center = np.median(d[inl], axis=0)
    return np.hypot(*(d - center).T) <= cfg.inlier_px


def classic_match(a: Raster, b: Raster, cfg: MatchConfig | None = None) -> MatchSet:
    """Corner + ZNCC matching with mutual-best, ratio test and
    translation-RANSAC filtering.

    Right-image positions are refined to subpixel accuracy by a parabolic
    fit of the correlation. Output is sorted by (v_L, u_L).
    """
    cfg = cfg or MatchConfig()
    if a.channels != 1 or b.channels != 1:
        raise ValueError("classic_match needs single-channel rasters")
    if min(a.shape + b.shape) < 32:
        raise ImageTooSmall("images must be at least 32 pixels on each side")
    ia = np.asarray(a.data, dtype=float)
    ib = np.asarray(b.data, dtype=float)
    half = cfg.window // 2
    ka = harris_corners(ia, cfg)
    kb = harris_corners(ib, cfg)
    da, oka = _descriptors(ia, ka, half)
    db, okb = _descriptors(ib, kb, half)
    ka, da = ka[oka], da[oka]
    kb, db = kb[okb], db[okb]
    if len(ka) < 2 or len(kb) < 2:
        return MatchSet(np.zeros((0, 5)), source="builtin")

    sim = da @ db.T
    dist = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * sim))
    best_ab = np.argmin(dist, axis=1)
    best_ba = np.argmin(dist, axis=0)
    ia_idx = np.arange(len(ka))
    mutual = best_ba[best_ab] == ia_idx

    def ratio_ok(dmat, best):
        part = np.partition(dmat, 1, axis=1)
        second = part[:, 1]
        first = dmat[np.arange(len(dmat)), best]
        return first < cfg.ratio * second

    ok_a = ratio_ok(dist, best_ab)
    ok_b = ratio_ok(dist.T, best_ba)
    sel = ia_idx[mutual & ok_a & ok_b[best_ab]]
    if sel.size == 0:
        return MatchSet(np.zeros((0, 5)), source="builtin")
    pa = ka[sel]
    pb = kb[best_ab[sel]]
    score = np.clip(sim[sel, best_ab[sel]], 0.0, 1.0)

    inl = _translation_inliers((pb - pa).astype(float), cfg)
    pa, pb, score = pa[inl], pb[inl], score[inl]
    rows = []
    for p, q, s in zip(pa, pb, score):
        if s >= 1.0 - 1e-12:
            dx = dy = 0.0  # perfect correlation: integer positions are exact
        else:
            # average the refinement of either side so the result is
            # symmetric under exchanging the images
            c0 = _zncc_at(ia, ib, p, q, half)
            bx, by = _subpixel(ia, ib, p, q, half, c0)
            ax, ay = _subpixel(ib, ia, q, p, half, c0)
            dx, dy = (bx - ax) / 2, (by - ay) / 2
        rows.append([p[0] - dx / 2, p[1] - dy / 2, q[0] + dx / 2, q[1] + dy / 2, s])
    m = np.array(rows, dtype=float).reshape(-1, 5)
    m = m[np.lexsort((m[:, 0], m[:, 1]))]
    return MatchSet(m, source="builtin")
