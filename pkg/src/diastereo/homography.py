"""3x3 projective transforms and the small least-squares fits used by
rectification.

The systems involved are at most 3x3, so they are solved in closed form
(adjugate) rather than through a linear-algebra routine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, PointAtInfinity, SingularHomography

DET_EPS = 1e-12
W_EPS = 1e-12


def _det3(m: np.ndarray) -> float:
    return float(
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


def _adjugate3(m: np.ndarray) -> np.ndarray:
    a = np.empty((3, 3))
    a[0, 0] = m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1]
    a[0, 1] = m[0, 2] * m[2, 1] - m[0, 1] * m[2, 2]
    a[0, 2] = m[0, 1] * m[1, 2] - m[0, 2] * m[1, 1]
    a[1, 0] = m[1, 2] * m[2, 0] - m[1, 0] * m[2, 2]
    a[1, 1] = m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]
    a[1, 2] = m[0, 2] * m[1, 0] - m[0, 0] * m[1, 2]
    a[2, 0] = m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]
    a[2, 1] = m[0, 1] * m[2, 0] - m[0, 0] * m[2, 1]
    a[2, 2] = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return a


def solve3(a: np.ndarray, b: np.ndarray, rel_eps: float = 1e-14) -> np.ndarray:
    """Solve the 3x3 system ``a @ x = b`` by Cramer's rule / adjugate.

    Raises DegenerateConfiguration when ``a`` is numerically singular
    relative to the magnitude of its entries.
    """
    a = np.asarray(a, dtype=float)
    det = _det3(a)
    scale = float(np.max(np.abs(a))) ** 3
    if scale == 0 or abs(det) <= rel_eps * scale:
        raise DegenerateConfiguration("rank-deficient normal equations")
    return _adjugate3(a) @ np.asarray(b, dtype=float) / det


@dataclass(frozen=True)
class Homography:
    """A 3x3 projective map acting on pixel coordinates (col, row)."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(3, 3)
        if m[2, 2] != 0:
            m = m / m[2, 2]
        if abs(_det3(m)) <= DET_EPS:
            raise SingularHomography(f"|det| <= {DET_EPS:g}")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])

    @classmethod
    def from_list(cls, values) -> "Homography":
        values = list(values)
        if len(values) != 9:
            raise ValueError("a homography needs 9 numbers")
        return cls(np.array(values, dtype=float).reshape(3, 3))

    def to_list(self) -> list[float]:
        return [float(v) for v in self.m.ravel()]

    @property
    def det(self) -> float:
        return _det3(self.m)

    def inverse(self) -> "Homography":
        return Homography(_adjugate3(self.m) / self.det)

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.m @ other.m)

    def __call__(self, x, y):
        return apply(self, x, y)

    def is_affine(self, tol: float = 0.0) -> bool:
        return abs(self.m[2, 0]) <= tol and abs(self.m[2, 1]) <= tol


def apply(H: Homography, x, y):
    """Map pixel coordinates through ``H``.

    Args:
        H: the homography.
        x, y: column and row coordinates; scalars or arrays of equal shape.

    Returns:
        the mapped (x, y), same shapes as the input.
    """
    m = H.m
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if np.any(np.abs(w) <= W_EPS):
        raise PointAtInfinity("homogeneous coordinate vanishes")
    xo = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w
    yo = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w
    if xo.ndim == 0:
        return float(xo), float(yo)
    return xo, yo


def _affine_normal_rows(src: np.ndarray, dst: np.ndarray):
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError("src and dst must be (N, 2) arrays of equal shape")
    if len(src) < 3:
        raise DegenerateConfiguration("at least 3 point pairs are needed")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    s = src - cs
    d = dst - cd
    a = np.column_stack([s, np.ones(len(s))])
    return a, d, cs, cd


def fit_affine(src, dst) -> Homography:
    """Least-squares affine map taking ``src`` points onto ``dst`` points.

    Coordinates are centred on their centroids before forming the normal
    equations, which are then solved in closed form.

    Args:
        src, dst: (N, 2) arrays of (x, y) coordinates, N >= 3.

    Returns:
        a Homography with bottom row [0, 0, 1].
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    a, d, cs, cd = _affine_normal_rows(src, dst)
    ata = a.T @ a
    rows = []
    for k in range(2):
        p = solve3(ata, a.T @ d[:, k])
        # undo the centring: dst - cd = p0 (x - csx) + p1 (y - csy) + p2
        rows.append([p[0], p[1], cd[k] + p[2] - p[0] * cs[0] - p[1] * cs[1]])
    return Homography([rows[0], rows[1], [0.0, 0.0, 1.0]])


def fit_affine_row(src, target) -> np.ndarray:
    """Least-squares fit of ``target ~ a*x + b*y + c`` over ``src`` points.

    This is the first row of :func:`fit_affine` alone; it is what the
    row-preserving disparity-range correction needs.
    """
    src = np.asarray(src, dtype=float)
    target = np.asarray(target, dtype=float).reshape(-1, 1)
    a, d, cs, cd = _affine_normal_rows(src, np.hstack([target, target]))
    p = solve3(a.T @ a, a.T @ d[:, 0])
    return np.array([p[0], p[1], cd[0] + p[2] - p[0] * cs[0] - p[1] * cs[1]])
