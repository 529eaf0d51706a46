"""Grid-discretized timeless amplitudes.

The constraint operator Ĥ is assembled on a configuration-space grid and the
regularized projector ∫dτ e^{−iτĤ} is realized by a spectral window on its
eigenvalues. Operators whose kinetic metric is constant and diagonal and
whose potential is additively separable are kept as Kronecker sums and
diagonalized axis by axis; everything else is diagonalized densely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.fft import dst

from .configspace import as_coords
from .dynamics import ConstrainedSystem, Potential
from .errors import (DegenerateRegionError, EmptyPhysicalSpaceError, InputError,
                     UnsupportedFeatureError)

DENSE_LIMIT = 4096


# -- grids -----------------------------------------------------------------------


@dataclass(frozen=True)
class GridHilbert:
    """Tensor-product grid. ``axes`` is a sequence of (lo, hi, points).

    Periodic axes use nodes lo + j h with h = (hi − lo)/points (hi identified
    with lo). Dirichlet axes use the interior nodes lo + j h, j = 1..points,
    with h = (hi − lo)/(points + 1) and walls at lo and hi.
    """

    axes: tuple
    boundary: str = "periodic"

    def __post_init__(self):
        where = "spectral.GridHilbert"
        axes = tuple((float(lo), float(hi), int(n)) for lo, hi, n in self.axes)
        if not axes:
            raise InputError(where, "grid needs at least one axis")
        for lo, hi, n in axes:
            if not hi > lo:
                raise InputError(where, f"axis needs hi > lo, got ({lo}, {hi})")
            if n < 8:
                raise InputError(where, f"axis needs at least 8 points, got {n}")
        if self.boundary not in ("periodic", "dirichlet"):
            raise InputError(where, f"boundary must be periodic or dirichlet, got {self.boundary!r}")
        object.__setattr__(self, "axes", axes)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(n for _, _, n in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacings(self) -> tuple:
        if self.boundary == "periodic":
            return tuple((hi - lo) / n for lo, hi, n in self.axes)
        return tuple((hi - lo) / (n + 1) for lo, hi, n in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def axis_nodes(self, a: int) -> np.ndarray:
        lo, hi, n = self.axes[a]
        h = self.spacings[a]
        j = np.arange(n) if self.boundary == "periodic" else np.arange(1, n + 1)
        return lo + j * h

    @cached_property
    def points(self) -> np.ndarray:
        """All nodes, shape (N, d), C order."""
        mesh = np.meshgrid(*[self.axis_nodes(a) for a in range(self.ndim)], indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def multi_index(self, q, where: str = "spectral.GridHilbert") -> tuple:
        c = as_coords(q, self.ndim, where)
        idx = []
        for a in range(self.ndim):
            lo, hi, n = self.axes[a]
            h = self.spacings[a]
            off = 0 if self.boundary == "periodic" else 1
            x = (c[a] - lo) / h - off
            if self.boundary == "periodic":
                x = x % n
                if abs(x - n) < 1e-9:
                    x = 0.0
            j = int(round(x))
            if abs(x - j) > 1e-6 or not 0 <= j < n:
                raise InputError(where, f"configuration {c.tolist()} is not a grid node")
            idx.append(j)
        return tuple(idx)

    def index(self, q, where: str = "spectral.GridHilbert") -> int:
        return int(np.ravel_multi_index(self.multi_index(q, where), self.shape))

    def snap(self, q) -> np.ndarray:
        """Nearest grid node to q."""
        c = as_coords(q, self.ndim)
        out = []
        for a in range(self.ndim):
            nodes = self.axis_nodes(a)
            out.append(nodes[int(np.argmin(np.abs(nodes - c[a])))])
        return np.array(out)

    def box_mask(self, bounds: Sequence) -> np.ndarray:
        """Boolean mask of nodes inside the closed box [(lo, hi), ...]."""
        if len(bounds) != self.ndim:
            raise InputError("spectral.GridHilbert", "box needs one (lo, hi) per axis")
        mask = np.ones(self.shape, dtype=bool)
        for a, (lo, hi) in enumerate(bounds):
            x = self.axis_nodes(a)
            sel = (x >= lo - 1e-12) & (x <= hi + 1e-12)
            shape = [1] * self.ndim
            shape[a] = -1
            mask &= sel.reshape(shape)
        return mask

    def as_mask(self, region) -> np.ndarray:
        """Region as a boolean mask.

        Accepts a boolean array, ``{"box": [(lo, hi), ...]}``, or a list of
        node coordinates.
        """
        where = "spectral.GridHilbert"
        if isinstance(region, np.ndarray) and region.dtype == bool:
            if region.size != self.size:
                raise InputError(where, "region mask has the wrong shape")
            return region.reshape(self.shape)
        if isinstance(region, dict):
            if set(region) != {"box"}:
                raise InputError(where, "region dict must have the single key 'box'")
            return self.box_mask(region["box"])
        mask = np.zeros(self.shape, dtype=bool)
        for q in region:
            mask[self.multi_index(q, where)] = True
        return mask


# -- windows and filters ---------------------------------------------------------------


@dataclass(frozen=True)
class SpectralWindow:
    """Regularization of ∫dτ: weight w(E) on eigenvalues of the constraint."""

    kind: str = "gaussian"
    width: float = 0.1

    def __post_init__(self):
        if self.kind not in ("gaussian", "sharp"):
            raise InputError("spectral.SpectralWindow", f"kind must be gaussian or sharp, got {self.kind!r}")
        if not self.width > 0:
            raise InputError("spectral.SpectralWindow", f"width must be positive, got {self.width}")

    def weight(self, E: np.ndarray, period: Optional[float] = None) -> np.ndarray:
        """Window weight; with ``period`` the window is summed over E + m·period."""
        E = np.asarray(E, dtype=float)
        if period is not None:
            E = (E + 0.5 * period) % period - 0.5 * period
            if self.kind == "gaussian":
                reach = int(math.ceil(10 * self.width / period))
                return sum(np.exp(-((E + m * period) ** 2) / (2 * self.width**2)) for m in range(-reach, reach + 1))
        if self.kind == "gaussian":
            return np.exp(-(E**2) / (2 * self.width**2))
        return (np.abs(E) < self.width).astype(float)

    @property
    def integral(self) -> float:
        """∫ w(E) dE."""
        return math.sqrt(2 * math.pi) * self.width if self.kind == "gaussian" else 2 * self.width


@dataclass(frozen=True)
class SourceFilter:
    """Smooth band limit σ(κ) = exp(−α (κ/κ_max)^order) applied to configuration eigenstates.

    κ is the axis wavenumber of the kinetic eigenbasis. Removing the top of
    the lattice band suppresses the Gibbs tails of grid delta sources.
    """

    alpha: float = 36.0
    order: int = 16

    def factor(self, kappa: np.ndarray) -> np.ndarray:
        kmax = np.max(np.abs(kappa))
        if kmax == 0:
            return np.ones_like(kappa)
        return np.exp(-self.alpha * (np.abs(kappa) / kmax) ** self.order)


# -- operators ------------------------------------------------------------------------


@dataclass
class AxisFactor:
    """One axis of a Kronecker-sum operator: a Hermitian matrix plus its kinetic basis."""

    matrix: np.ndarray
    kinetic_vecs: np.ndarray
    kappa: np.ndarray
    fourier_time: bool = False
    fixed_eig: Optional[tuple] = None

    @cached_property
    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        if self.fixed_eig is not None:
            return self.fixed_eig
        return np.linalg.eigh(self.matrix)


@dataclass
class GridOperator:
    """Hermitian operator on a grid.

    Either ``factors`` (Kronecker sum Σ_a 1⊗…⊗A_a⊗…⊗1 + shift) or ``dense``.
    ``energy_period`` is set when an axis carries a Fourier momentum whose
    eigenvalues are defined modulo 2πħ/h.
    """

    grid: GridHilbert
    factors: Optional[list] = None
    dense_matrix: Optional[np.ndarray] = None
    shift: float = 0.0
    energy_period: Optional[float] = None
    kinetic: str = "fd"
    hbar: float = 1.0
    masses: tuple = ()
    label: str = ""

    @property
    def separable(self) -> bool:
        return self.factors is not None

    def dense(self) -> np.ndarray:
        if self.dense_matrix is not None:
            return self.dense_matrix
        N = self.grid.size
        if N > DENSE_LIMIT:
            raise UnsupportedFeatureError("spectral.build_hamiltonian", f"dense form of a {N}-point operator is too large")
        out = np.zeros((N, N), dtype=complex)
        dims = self.grid.shape
        for a, f in enumerate(self.factors):
            left = int(np.prod(dims[:a]))
            right = int(np.prod(dims[a + 1:]))
            out = out + np.kron(np.kron(np.eye(left), f.matrix), np.eye(right))
        out = out + self.shift * np.eye(N)
        if np.all(np.abs(out.imag) == 0):
            out = out.real
        return out

    @cached_property
    def axis_eigs(self) -> list:
        return [f.eig for f in self.factors]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """All eigenvalues, sorted."""
        if self.separable:
            total = np.zeros(())
            for vals, _ in self.axis_eigs:
                total = np.add.outer(total, vals)
            return np.sort(total.reshape(-1) + self.shift)
        return self.dense_eig[0]

    @cached_property
    def dense_eig(self):
        return np.linalg.eigh(self.dense())


def _fd_laplacian(n: int, h: float, boundary: str) -> np.ndarray:
    L = (np.diag(-2.0 * np.ones(n)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1))
    if boundary == "periodic":
        L[0, -1] = L[-1, 0] = 1.0
    return L / h**2


def _kinetic_basis(n: int, h: float, boundary: str, kinetic: str):
    """Eigenbasis and wavenumbers of −∂² on one axis, plus the −∂² matrix."""
    if kinetic == "fd":
        lap = -_fd_laplacian(n, h, boundary)
        lam, vecs = np.linalg.eigh(lap)
        kappa = np.sqrt(np.maximum(lam, 0.0))
        return lap, vecs, kappa
    if kinetic != "spectral":
        raise InputError("spectral.build_hamiltonian", f"kinetic must be fd or spectral, got {kinetic!r}")
    if boundary == "periodic":
        k = 2 * np.pi * np.fft.fftfreq(n, h)
        F = np.fft.fft(np.eye(n), axis=0) / np.sqrt(n)
        lap = (F.conj().T * (k**2)) @ F
        lap = 0.5 * (lap + lap.conj().T).real
        lam, vecs = np.linalg.eigh(lap)
        return lap, vecs, np.sqrt(np.maximum(lam, 0.0))
    j = np.arange(1, n + 1)
    k = j * np.pi / ((n + 1) * h)
    S = dst(np.eye(n), type=1, axis=0, norm="ortho")
    lap = (S * (k**2)) @ S
    lap = 0.5 * (lap + lap.T)
    return lap, S, k


def _separable_parts(V: np.ndarray) -> Optional[list]:
    """Split V on a grid into per-axis 1D arrays if V is additively separable."""
    d = V.ndim
    parts = []
    ref = V[(0,) * d]
    for a in range(d):
        sl = [0] * d
        sl[a] = slice(None)
        parts.append(V[tuple(sl)] - (ref if a > 0 else 0.0))
    total = np.zeros(())
    for p_ in parts:
        total = np.add.outer(total, p_)
    scale = max(1.0, float(np.max(np.abs(V))))
    if np.max(np.abs(total - V)) <= 1e-11 * scale:
        return parts
    return None


def build_hamiltonian(sys: ConstrainedSystem, grid: GridHilbert, kinetic: str = "fd") -> GridOperator:
    """Matrix form of Ĥ = −(ħ²/2)∇·M⁻¹∇ + V − E on ``grid``.

    ``kinetic="fd"`` uses central second differences; ``"spectral"`` uses the
    Fourier (periodic) or sine (Dirichlet) basis. Only constant metrics are
    supported. Diagonal metrics with separable potentials stay in
    Kronecker-sum form.
    """
    where = "spectral.build_hamiltonian"
    if isinstance(sys, ExtendedSystem):
        return _build_extended(sys, grid, kinetic)
    if not sys.metric.is_constant:
        raise UnsupportedFeatureError(where, "position-dependent kinetic metric is not supported on the spectral backend")
    if grid.ndim != sys.dim:
        raise InputError(where, f"grid has {grid.ndim} axes, system has dimension {sys.dim}")
    minv = np.linalg.inv(sys.metric.constant)
    hbar = sys.hbar
    V = np.asarray(sys.potential(grid.points), dtype=float).reshape(grid.shape)
    if not np.all(np.isfinite(V)):
        raise InputError(where, "potential is not finite on the grid")
    diag_metric = np.allclose(minv, np.diag(np.diag(minv)), atol=0, rtol=0)
    parts = _separable_parts(V) if diag_metric else None
    masses = tuple(1.0 / minv[a, a] for a in range(sys.dim))
    bases = [_kinetic_basis(grid.shape[a], grid.spacings[a], grid.boundary, kinetic) for a in range(sys.dim)]
    if parts is not None:
        factors = []
        for a in range(sys.dim):
            lap, vecs, kappa = bases[a]
            mat = 0.5 * hbar**2 * minv[a, a] * lap + np.diag(parts[a])
            factors.append(AxisFactor(0.5 * (mat + mat.T), vecs, kappa))
        return GridOperator(grid, factors, None, -sys.energy, None, kinetic, hbar, masses, sys.name)
    N = grid.size
    if N > DENSE_LIMIT:
        raise UnsupportedFeatureError(where, f"non-separable operator on {N} points exceeds the dense limit {DENSE_LIMIT}")
    dims = grid.shape
    H = np.zeros((N, N))
    derivs = []
    for a in range(sys.dim):
        n, h = dims[a], grid.spacings[a]
        if kinetic == "spectral" and grid.boundary == "periodic":
            k = 2 * np.pi * np.fft.fftfreq(n, h)
            F = np.fft.fft(np.eye(n), axis=0) / np.sqrt(n)
            D = ((F.conj().T * (1j * k)) @ F).real
        else:
            D = (np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)) / (2 * h)
            if grid.boundary == "periodic":
                D[0, -1], D[-1, 0] = -1 / (2 * h), 1 / (2 * h)
        derivs.append(D)

    def embed(mat, a):
        return np.kron(np.kron(np.eye(int(np.prod(dims[:a]))), mat), np.eye(int(np.prod(dims[a + 1:]))))

    for a in range(sys.dim):
        H += 0.5 * hbar**2 * minv[a, a] * embed(bases[a][0], a)
        for b in range(sys.dim):
            if a != b and minv[a, b] != 0:
                H -= 0.5 * hbar**2 * minv[a, b] * embed(derivs[a], a) @ embed(derivs[b], b)
    H += np.diag(V.reshape(-1) - sys.energy)
    H = 0.5 * (H + H.T)
    return GridOperator(grid, None, H, 0.0, None, kinetic, hbar, masses, sys.name)


# -- extended (deparametrized) systems --------------------------------------------------


@dataclass(frozen=True)
class ExtendedSystem:
    """Extended configuration (t, q) with constraint H = p_t + H_o(q, p).

    H_o = ½ p·M⁻¹·p + V(q) is built from ``base`` (its energy offset is
    ignored). ``time_dependent`` marks an H_o that depends on t, which is
    not deparametrizable.
    """

    base: ConstrainedSystem
    time_dependent: bool = False

    @property
    def dim(self) -> int:
        return self.base.dim + 1

    @property
    def hbar(self) -> float:
        return self.base.hbar


def _build_extended(sys: ExtendedSystem, grid: GridHilbert, kinetic: str) -> GridOperator:
    where = "spectral.build_hamiltonian"
    if sys.time_dependent:
        raise UnsupportedFeatureError(where, "time-dependent H_o is not deparametrizable")
    if grid.boundary != "periodic":
        raise InputError(where, "the extended (t, q) grid must be periodic")
    qgrid = GridHilbert(grid.axes[1:], grid.boundary)
    base = sys.base.with_(energy=0.0)
    op_o = build_hamiltonian(base, qgrid, kinetic)
    if not op_o.separable:
        raise UnsupportedFeatureError(where, "extended grids need a separable H_o")
    nt, ht = grid.shape[0], grid.spacings[0]
    k = 2 * np.pi * np.fft.fftfreq(nt, ht)
    j = np.arange(nt)
    vecs = np.exp(1j * np.outer(j, k) * ht) / np.sqrt(nt)
    mat = (vecs * (sys.hbar * k)) @ vecs.conj().T
    tf = AxisFactor(mat, vecs, np.abs(k), fourier_time=True, fixed_eig=(sys.hbar * k, vecs))
    period = 2 * np.pi * sys.hbar / ht
    return GridOperator(grid, [tf] + op_o.factors, None, 0.0, period, kinetic, sys.hbar, (None,) + op_o.masses,
                        f"extended({sys.base.name})")


# -- kernels --------------------------------------------------------------------------


@dataclass
class AmplitudeKernel:
    """W(q₁, q₂) with a backend tag and an error estimate."""

    evaluator: Callable
    backend: str
    error_estimate: float = 0.0
    label: str = ""

    def __call__(self, q1, q2) -> complex:
        return complex(self.evaluator(q1, q2))


class SpectralKernel(AmplitudeKernel):
    """Projector kernel W = Σ_k w(E_k) ψ_k(q₁) ψ_k*(q₂) / μ on a grid."""

    def __init__(self, op: GridOperator, window: SpectralWindow, source_filter: Optional[SourceFilter] = None):
        self.op = op
        self.grid = op.grid
        self.window = window
        self.source_filter = source_filter
        self.mu = self.grid.cell_volume
        where = "spectral.projector_amplitude"
        if op.separable:
            vecs = []
            vals = []
            for f, (lam, U) in zip(op.factors, op.axis_eigs):
                if source_filter is not None and not f.fourier_time:
                    Fm = (f.kinetic_vecs * source_filter.factor(f.kappa)) @ f.kinetic_vecs.conj().T
                    U = Fm @ U
                vals.append(lam)
                vecs.append(U)
            total = np.zeros(())
            for lam in vals:
                total = np.add.outer(total, lam)
            self.weights = window.weight(total + op.shift, op.energy_period)
            self.axis_vecs = vecs
            self.axis_vals = vals
            self.energies = total + op.shift
        else:
            lam, U = op.dense_eig
            if source_filter is not None:
                raise UnsupportedFeatureError(where, "source filters need a separable operator")
            w = window.weight(lam, op.energy_period)
            keep = w > 1e-300
            self.weights = w[keep]
            self.vecs = U[:, keep]
            self.energies = lam[keep]
        if not np.any(self.weights > 0):
            raise EmptyPhysicalSpaceError(where, "no eigenvalue of the constraint operator lies inside the window")
        super().__init__(self._eval, "spectral", 0.0, op.label)
        self.error_estimate = self._estimate_error()

    # evaluation ------------------------------------------------------------
    def _eval(self, q1, q2) -> complex:
        i1 = self.grid.multi_index(q1, "spectral.AmplitudeKernel")
        i2 = self.grid.multi_index(q2, "spectral.AmplitudeKernel")
        return self.element(i1, i2)

    def element(self, i1: tuple, i2: tuple) -> complex:
        if self.op.separable:
            T = self.weights
            for a in range(len(self.axis_vecs) - 1, -1, -1):
                U = self.axis_vecs[a]
                u = U[i1[a], :] * np.conj(U[i2[a], :])
                T = T @ u
            return complex(T) / self.mu
        f1 = np.ravel_multi_index(i1, self.grid.shape)
        f2 = np.ravel_multi_index(i2, self.grid.shape)
        return complex(np.sum(self.weights * self.vecs[f1] * np.conj(self.vecs[f2]))) / self.mu

    def _coeffs_of_point(self, i1: tuple) -> np.ndarray:
        T = self.weights
        for a, U in enumerate(self.axis_vecs):
            shape = [1] * T.ndim
            shape[a] = -1
            T = T * U[i1[a], :].reshape(shape)
        return T

    def _synthesize(self, T: np.ndarray, conj: bool) -> np.ndarray:
        """Σ_i T[i] Π_a U_a[x_a, i_a] (conjugated U if ``conj``) for all x."""
        for a, U in enumerate(self.axis_vecs):
            M = np.conj(U) if conj else U
            T = np.moveaxis(np.tensordot(M, T, axes=([1], [a])), 0, a)
        return T

    def row(self, q1) -> np.ndarray:
        """W(q₁, x) for all grid nodes x, shaped like the grid."""
        i1 = self.grid.multi_index(q1, "spectral.AmplitudeKernel")
        if self.op.separable:
            return self._synthesize(self._coeffs_of_point(i1), conj=True) / self.mu
        f1 = np.ravel_multi_index(i1, self.grid.shape)
        return ((self.vecs.conj() @ (self.weights * self.vecs[f1])) / self.mu).reshape(self.grid.shape)

    def column(self, q2) -> np.ndarray:
        """W(x, q₂) for all grid nodes x."""
        return np.conj(self.row(q2))

    def matrix(self) -> np.ndarray:
        N = self.grid.size
        if N > DENSE_LIMIT:
            raise UnsupportedFeatureError("spectral.AmplitudeKernel", f"dense kernel on {N} points is too large")
        if self.op.separable:
            U = np.ones((1, 1))
            for Ua in self.axis_vecs:
                U = np.kron(U, Ua)
            return (U * self.weights.reshape(-1)) @ U.conj().T / self.mu
        return (self.vecs * self.weights) @ self.vecs.conj().T / self.mu

    def region_coefficients(self, mask: np.ndarray) -> np.ndarray:
        """s_k = Σ_{x∈R} ψ_k(x)."""
        mask = self.grid.as_mask(mask).astype(float)
        if self.op.separable:
            T = mask
            for a, U in enumerate(self.axis_vecs):
                T = np.moveaxis(np.tensordot(U, T, axes=([0], [a])), 0, a)
            return T
        return self.vecs.T @ mask.reshape(-1)

    def region_amplitude(self, R1, R2) -> complex:
        """W(R₁, R₂) = Σ_{q₁∈R₁, q₂∈R₂} W(q₁, q₂) μ²."""
        s1 = self.region_coefficients(R1)
        s2 = self.region_coefficients(R2)
        return complex(np.sum(self.weights * s1 * np.conj(s2))) * self.mu

    def region_row(self, R1) -> np.ndarray:
        """Σ_{q₁∈R₁} W(q₁, x) μ for every node x."""
        s1 = self.region_coefficients(R1)
        if self.op.separable:
            return self._synthesize(self.weights * s1, conj=True)
        return (self.vecs.conj() @ (self.weights * s1)).reshape(self.grid.shape)

    def _estimate_error(self) -> float:
        """Boundary leakage of the weighted states plus the fd dispersion error."""
        wmax = float(np.max(self.weights))
        leak = 0.0
        disp = 0.0
        if self.op.separable:
            for a, (f, U, lam) in enumerate(zip(self.op.factors, self.axis_vecs, self.axis_vals)):
                if f.fourier_time:
                    continue
                shape = [1] * self.weights.ndim
                edge = np.abs(U[0]) ** 2 + np.abs(U[-1]) ** 2
                shape[a] = -1
                active = np.max(self.weights, axis=tuple(i for i in range(self.weights.ndim) if i != a)) > 1e-3 * wmax
                if self.grid.boundary == "dirichlet" and np.any(active):
                    leak = max(leak, float(np.max(edge[active])))
                if self.op.kinetic == "fd" and np.any(active):
                    m = self.op.masses[a]
                    h = self.grid.spacings[a]
                    e_kin = np.max(np.abs(lam[active]))
                    kh2 = 2 * m * e_kin * h * h / self.op.hbar**2
                    disp = max(disp, kh2 / 12)
        return float(max(leak, disp))


def default_sharp_width(op: GridOperator, near: int = 12) -> float:
    """Half the median gap between consecutive distinct eigenvalues nearest zero."""
    ev = op.eigenvalues
    order = np.argsort(np.abs(ev))[: max(near, 3)]
    vals = np.sort(ev[order])
    gaps = np.diff(vals)
    scale = max(1.0, float(np.max(np.abs(vals))))
    gaps = gaps[gaps > 1e-10 * scale]
    if gaps.size == 0:
        return 1e-6 * scale
    return 0.5 * float(np.median(gaps))


def snap_energy(sys, grid: GridHilbert, kinetic: str = "fd"):
    """Copy of ``sys`` whose energy is the grid eigenvalue nearest to its own.

    Sharp windows of the default width then contain at least one state.
    """
    op = build_hamiltonian(sys, grid, kinetic)
    ev = op.eigenvalues
    shift = float(ev.reshape(-1)[np.argmin(np.abs(ev))])
    if isinstance(sys, ExtendedSystem):
        return replace(sys, base=sys.base.with_(energy=sys.base.energy + shift))
    return sys.with_(energy=sys.energy + shift)


def projector_amplitude(op: GridOperator, window: Optional[SpectralWindow] = None, grid: Optional[GridHilbert] = None,
                        source_filter: Optional[SourceFilter] = None) -> SpectralKernel:
    """Regularized projector kernel of ``op``.

    With ``window=None`` a sharp window of the default width (half the median
    level spacing near zero) is used.
    """
    if grid is not None and grid != op.grid:
        raise InputError("spectral.projector_amplitude", "operator was built on a different grid")
    if window is None:
        window = SpectralWindow("sharp", default_sharp_width(op))
    return SpectralKernel(op, window, source_filter)


def idempotence_residual(W: SpectralKernel) -> float:
    """max |Σ_x W(a,x) W(x,b) μ − W(a,b)| relative to max |W|."""
    K = W.matrix()
    R = K @ K * W.mu - K
    return float(np.max(np.abs(R)) / np.max(np.abs(K)))


def hermitian_residual(W: SpectralKernel) -> float:
    K = W.matrix()
    return float(np.max(np.abs(K - K.conj().T)) / np.max(np.abs(K)))


def region_probability(W: SpectralKernel, R1, R2, grid: Optional[GridHilbert] = None) -> float:
    """|W(R₁,R₂)|² / (W(R₁,R₁) W(R₂,R₂))."""
    where = "spectral.region_probability"
    if grid is not None and grid != W.grid:
        raise InputError(where, "kernel lives on a different grid")
    w11 = W.region_amplitude(R1, R1)
    w22 = W.region_amplitude(R2, R2)
    w12 = W.region_amplitude(R1, R2)
    ref = max(abs(w11), abs(w22), abs(w12))
    for w, name in ((w11, "R1"), (w22, "R2")):
        if not w.real > 1e-14 * ref:
            raise DegenerateRegionError(where, f"W({name},{name}) is not positive")
    return float(abs(w12) ** 2 / (w11.real * w22.real))


# -- deparametrized systems -----------------------------------------------------------


@dataclass(frozen=True)
class GreenComparison:
    """Deparametrized amplitude W (normalized by 2πħ/∫w) and the Green function G."""

    W: complex
    G: complex
    difference: complex
    relative: float
    normalization: float


def extended_grid(q_axes: Sequence, t_points: int = 128, t_spacing: float = 0.5) -> GridHilbert:
    """Periodic (t, q) grid with t nodes j·t_spacing."""
    return GridHilbert(((0.0, t_points * t_spacing, t_points),) + tuple(tuple(a) for a in q_axes), "periodic")


def deparametrized_green(sys_ext: ExtendedSystem, window: SpectralWindow, t1: float, q1, t2: float, q2,
                         grid: Optional[GridHilbert] = None, kinetic: str = "spectral",
                         source_filter: Optional[SourceFilter] = SourceFilter(), kernel: Optional[SpectralKernel] = None
                         ) -> GreenComparison:
    """Compare the extended-grid projector with the Green function of H_o.

    W is computed from the (t, q) operator p_t + H_o by ``projector_amplitude``
    and multiplied by 2πħ/∫w(E)dE. G is computed independently from the
    eigen-expansion of H_o with phases e^{−iE(t₁−t₂)/ħ}; both use the same
    source filter on configuration states. With a Gaussian window,
    W = exp(−ε²(t₁−t₂)²/2ħ²) G up to t-periodic images.
    """
    where = "spectral.deparametrized_green"
    if not isinstance(sys_ext, ExtendedSystem):
        raise InputError(where, "expected an ExtendedSystem with H = p_t + H_o")
    if sys_ext.time_dependent:
        raise UnsupportedFeatureError(where, "time-dependent H_o is not deparametrizable")
    if kernel is None:
        if grid is None:
            raise InputError(where, "need a grid or a prebuilt kernel")
        op = build_hamiltonian(sys_ext, grid, kinetic)
        kernel = projector_amplitude(op, window, grid, source_filter)
    grid = kernel.grid
    q1 = np.atleast_1d(np.asarray(q1, dtype=float))
    q2 = np.atleast_1d(np.asarray(q2, dtype=float))
    x1 = np.concatenate([[t1], q1])
    x2 = np.concatenate([[t2], q2])
    c = 2 * np.pi * sys_ext.hbar / kernel.window.integral
    Wv = c * kernel(x1, x2)
    # independent route: Σ_j e^{−i e_j Δt/ħ} χ_j(q₁) χ_j*(q₂) / μ_q
    i1 = grid.multi_index(x1)[1:]
    i2 = grid.multi_index(x2)[1:]
    energies = np.zeros(())
    coef = np.ones(())
    for a, (lam, U) in enumerate(zip(kernel.axis_vals[1:], kernel.axis_vecs[1:])):
        energies = np.add.outer(energies, lam)
        coef = np.multiply.outer(coef, U[i1[a], :] * np.conj(U[i2[a], :]))
    mu_q = float(np.prod(grid.spacings[1:]))
    G = complex(np.sum(np.exp(-1j * energies * (t1 - t2) / sys_ext.hbar) * coef)) / mu_q
    diff = Wv - G
    return GreenComparison(Wv, G, diff, abs(diff) / max(abs(G), 1e-300), c)


def time_green(sys: ConstrainedSystem, grid: GridHilbert, T: float, q1, q2, kinetic: str = "spectral",
               source_filter: Optional[SourceFilter] = SourceFilter()) -> complex:
    """Fixed-time propagator Σ_j e^{−i e_j T/ħ} χ_j(q₁) χ_j*(q₂) / μ of H_o = H + E.

    The source filter band-limits the grid deltas; with grid spacing small
    against ħ the filtered lattice propagator tracks the continuum one away
    from wall images.
    """
    where = "spectral.time_green"
    if not T > 0:
        raise InputError(where, f"T must be positive, got {T}")
    op = build_hamiltonian(sys.with_(energy=0.0), grid, kinetic)
    if not op.separable:
        raise UnsupportedFeatureError(where, "time_green needs a separable H_o")
    i1 = grid.multi_index(q1, where)
    i2 = grid.multi_index(q2, where)
    energies = np.zeros(())
    coef = np.ones(())
    for a, (f, (lam, U)) in enumerate(zip(op.factors, op.axis_eigs)):
        if source_filter is not None:
            U = ((f.kinetic_vecs * source_filter.factor(f.kappa)) @ f.kinetic_vecs.conj().T) @ U
        energies = np.add.outer(energies, lam)
        coef = np.multiply.outer(coef, U[i1[a], :] * np.conj(U[i2[a], :]))
    return complex(np.sum(np.exp(-1j * (energies + op.shift) * T / sys.hbar) * coef)) / grid.cell_volume


def free_green(dq, dt, mass: float = 1.0, hbar: float = 1.0) -> complex:
    """Analytic free-particle propagator √(m/2πiħΔt)^d exp(i m |Δq|²/(2ħΔt))."""
    dq = np.atleast_1d(np.asarray(dq, dtype=float))
    d = dq.size
    return complex((mass / (2j * np.pi * hbar * dt)) ** (d / 2) * np.exp(1j * mass * np.dot(dq, dq) / (2 * hbar * dt)))


# -- group averaging ------------------------------------------------------------------


def grid_permutation(grid: GridHilbert, transform: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Flat-index permutation induced by a coordinate map; errors if it leaves the grid."""
    pts = grid.points
    out = np.empty(grid.size, dtype=int)
    for k, x in enumerate(pts):
        y = np.asarray(transform(x), dtype=float)
        try:
            out[k] = grid.index(y, "spectral.group_average")
        except InputError:
            raise InputError("spectral.group_average", f"group element maps node {x.tolist()} off the grid") from None
    if np.unique(out).size != out.size:
        raise InputError("spectral.group_average", "group element is not a bijection of the grid")
    return out


def square_rotations(grid: GridHilbert) -> list:
    """Z₄ rotations about the origin of a square 2D grid, as flat permutations."""
    if grid.ndim != 2:
        raise InputError("spectral.group_average", "Z4 rotations need a 2D grid")
    rots = [lambda x: x, lambda x: np.array([-x[1], x[0]]), lambda x: -x, lambda x: np.array([x[1], -x[0]])]
    return [grid_permutation(grid, r) for r in rots]


def group_average(states, group: Sequence, grid: GridHilbert):
    """Average states over a finite group of grid permutations (or coordinate maps).

    A permutation ``g`` maps node k to node g[k]; the averaged state is
    (1/|G|) Σ_g v∘g. The result is invariant under every element of a group
    and averaging twice equals averaging once.
    """
    perms = []
    for g in group:
        if callable(g):
            perms.append(grid_permutation(grid, g))
        else:
            g = np.asarray(g, dtype=int)
            if g.shape != (grid.size,) or np.unique(g).size != grid.size:
                raise InputError("spectral.group_average", "group element is not a grid permutation")
            perms.append(g)
    if not perms:
        raise InputError("spectral.group_average", "empty group")
    single = isinstance(states, np.ndarray) and states.size == grid.size
    vs = [states] if single else list(states)
    out = []
    for v in vs:
        flat = np.asarray(v).reshape(-1)
        if flat.size != grid.size:
            raise InputError("spectral.group_average", "state does not match the grid")
        acc = np.zeros_like(flat, dtype=np.result_type(flat, float))
        for g in perms:
            acc = acc + flat[g]
        out.append((acc / len(perms)).reshape(np.shape(v)))
    return out[0] if single else out
