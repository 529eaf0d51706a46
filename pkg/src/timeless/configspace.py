"""Configuration-space geometry: metrics, chord distances, symmetry generators,
stabilizer dimensions and the choice of the preferred configuration q*."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GeometryError, InputError

ArrayLike = Sequence[float] | np.ndarray


@dataclass(frozen=True)
class Configuration:
    """A point of configuration space."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float).reshape(-1)
        if c.size == 0:
            raise InputError("configspace.Configuration", "empty coordinate vector")
        if not np.all(np.isfinite(c)):
            raise InputError("configspace.Configuration", f"non-finite coordinates {c.tolist()}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def dim(self) -> int:
        return self.coords.size

    def __eq__(self, other):
        return isinstance(other, Configuration) and np.array_equal(self.coords, other.coords)

    def __hash__(self):
        return hash(self.coords.tobytes())

    def __repr__(self):
        return f"Configuration({self.coords.tolist()})"


def as_coords(q, dim: Optional[int] = None, where: str = "configspace") -> np.ndarray:
    """Coordinates of a Configuration or array-like, with optional dimension check."""
    c = q.coords if isinstance(q, Configuration) else np.asarray(q, dtype=float).reshape(-1)
    if dim is not None and c.size != dim:
        raise InputError(where, f"dimension mismatch: expected {dim}, got {c.size}")
    return c


@dataclass(frozen=True)
class KineticMetric:
    """Kinetic metric M(q). ``constant`` holds the matrix when M does not depend on q."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    dim: int
    constant: Optional[np.ndarray] = None

    @classmethod
    def identity(cls, dim: int) -> "KineticMetric":
        return cls.from_matrix(np.eye(dim))

    @classmethod
    def from_matrix(cls, m: ArrayLike) -> "KineticMetric":
        m = np.array(m, dtype=float)
        if m.ndim == 1:
            m = np.diag(m)
        _check_spd(m, None, "configspace.KineticMetric")
        m.setflags(write=False)
        return cls(lambda q, _m=m: _m, m.shape[0], m)

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def __call__(self, q) -> np.ndarray:
        c = as_coords(q, self.dim, "configspace.KineticMetric")
        m = np.asarray(self.evaluator(c), dtype=float)
        _check_spd(m, c, "configspace.KineticMetric")
        return m


def _check_spd(m: np.ndarray, q, where: str) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise GeometryError(where, f"metric must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)) or np.max(np.abs(m - m.T)) > 1e-12 * max(1.0, np.max(np.abs(m))):
        raise GeometryError(where, f"metric not symmetric at q={None if q is None else np.asarray(q).tolist()}")
    if np.linalg.eigvalsh(m)[0] <= 0:
        raise GeometryError(where, f"metric not positive definite at q={None if q is None else np.asarray(q).tolist()}")


def chord_distance(metric: KineticMetric, a, b, steps: int = 64) -> float:
    """Length of the straight coordinate segment a→b measured with M(q).

    Midpoint quadrature with ``steps`` panels. Symmetric in (a, b) because the
    panel midpoints of the reversed segment are the same set of points.
    """
    a = as_coords(a, where="configspace.chord_distance")
    b = as_coords(b, a.size, "configspace.chord_distance")
    if int(steps) != steps or steps < 1:
        raise InputError("configspace.chord_distance", f"steps must be a positive integer, got {steps}")
    if metric.dim != a.size:
        raise InputError("configspace.chord_distance", "metric dimension does not match the points")
    v = b - a
    if not np.any(v):
        return 0.0
    if metric.is_constant:
        return float(np.sqrt(v @ metric.constant @ v))
    s = (np.arange(steps) + 0.5) / steps
    total = 0.0
    for si in s:
        q = a + si * v
        try:
            m = metric(q)
        except GeometryError as e:
            raise GeometryError("configspace.chord_distance", f"bad metric at q={q.tolist()}: {e.detail}") from None
        total += np.sqrt(max(v @ m @ v, 0.0))
    return float(total / steps)


# -- symmetry generators -------------------------------------------------------


@dataclass(frozen=True)
class SymmetryGenerator:
    """Infinitesimal symmetry. ``q_action(q)`` is the tangent vector at q.

    Shipped generators are affine, δq = A q + b; ``matrix``/``offset`` keep A
    and b so the momentum functional p·(A q + b) has exact gradients.
    """

    name: str
    q_action: Callable[[np.ndarray], np.ndarray]
    phase_action: Optional[Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]] = None
    matrix: Optional[np.ndarray] = field(default=None, repr=False)
    offset: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def affine(cls, name: str, A: np.ndarray, b: Optional[np.ndarray] = None) -> "SymmetryGenerator":
        A = np.array(A, dtype=float)
        b = np.zeros(A.shape[0]) if b is None else np.array(b, dtype=float)
        A.setflags(write=False)
        b.setflags(write=False)

        def q_action(q, A=A, b=b):
            return A @ as_coords(q, A.shape[1], "configspace.SymmetryGenerator") + b

        def phase_action(q, p, A=A, b=b):
            # flow of F = p·(A q + b): δq = A q + b, δp = -A^T p
            return A @ q + b, -A.T @ p

        return cls(name, q_action, phase_action, A, b)


def catalog_generator(name: str, n_particles: int, space_dim: int) -> SymmetryGenerator:
    """Catalog entry: ``translation:i``, ``rotation:ij`` or ``dilatation``.

    Coordinates are stacked per particle, (x1, y1, ..., x2, y2, ...). Axes are
    1-based in names (``rotation:12`` rotates the x-y plane).
    """
    n = n_particles * space_dim
    where = "configspace.catalog_generator"
    if n_particles < 1 or space_dim < 1:
        raise InputError(where, "need at least one particle and one dimension")
    kind, _, axes = name.partition(":")
    if kind == "dilatation" and not axes:
        return SymmetryGenerator.affine(name, np.eye(n))
    if kind == "translation":
        if len(axes) != 1 or not axes.isdigit() or not 1 <= int(axes) <= space_dim:
            raise InputError(where, f"bad translation axis in {name!r}")
        i = int(axes) - 1
        b = np.zeros(n)
        b[i::space_dim] = 1.0
        return SymmetryGenerator.affine(name, np.zeros((n, n)), b)
    if kind == "rotation":
        if len(axes) != 2 or not axes.isdigit():
            raise InputError(where, f"bad rotation plane in {name!r}")
        i, j = int(axes[0]) - 1, int(axes[1]) - 1
        if not (0 <= i < space_dim and 0 <= j < space_dim) or i == j:
            raise InputError(where, f"bad rotation plane in {name!r}")
        A = np.zeros((n, n))
        for k in range(n_particles):
            a, c = k * space_dim + i, k * space_dim + j
            A[a, c] = -1.0
            A[c, a] = 1.0
        return SymmetryGenerator.affine(name, A)
    raise InputError(where, f"unknown generator {name!r}")


@dataclass(frozen=True)
class StabilizerReport:
    config: Configuration
    dimension: int
    kernel_basis: list


def stabilizer_dimension(generators: Sequence[SymmetryGenerator], q, tol: float = 1e-9) -> StabilizerReport:
    """Dimension of the stabilizer of q within the span of ``generators``."""
    where = "configspace.stabilizer_dimension"
    if not generators:
        raise InputError(where, "empty generator list")
    if not tol > 0:
        raise InputError(where, f"tol must be positive, got {tol}")
    q = q if isinstance(q, Configuration) else Configuration(q)
    cols = [np.asarray(g.q_action(q.coords), dtype=float) for g in generators]
    if any(c.shape != (q.dim,) for c in cols):
        raise InputError(where, "generator action has the wrong dimension")
    mat = np.column_stack(cols)
    k = mat.shape[1]
    _, s, vt = np.linalg.svd(mat)
    smax = s[0] if s.size else 0.0
    rank = 0 if smax == 0.0 else int(np.sum(s > tol * smax))
    basis = [vt[i].copy() for i in range(rank, k)]
    return StabilizerReport(q, k - rank, basis)


def select_preferred(generators: Sequence[SymmetryGenerator], candidates: Sequence, tol: float = 1e-9) -> Configuration:
    """Candidate with the largest stabilizer; ties go to the smallest norm, then the
    lexicographically smallest coordinates, so the choice ignores list order."""
    if not candidates:
        raise InputError("configspace.select_preferred", "empty candidate list")
    best = None
    best_key = None
    for c in candidates:
        cfg = c if isinstance(c, Configuration) else Configuration(c)
        dim = stabilizer_dimension(generators, cfg, tol).dimension
        key = (-dim, float(np.linalg.norm(cfg.coords)), tuple(cfg.coords.tolist()))
        if best_key is None or key < best_key:
            best, best_key = cfg, key
    return best
