"""Born-like static density, the multiplicativity constraint on F, state
normalization and Bayesian comparison of theories from record-conditioned
likelihoods."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .configspace import Configuration, as_coords
from .dynamics import ConstrainedSystem
from .errors import DegenerateRegionError, InputError, UndefinedPosteriorError, UndefinedResidualError
from .records import factorization_check, record_region
from .semiclassical import ShootingConfig
from .spectral import GridHilbert, SpectralKernel, build_hamiltonian, projector_amplitude


@dataclass(frozen=True)
class Density:
    """Non-negative values per grid node with cell volume ``measure``."""

    values: np.ndarray
    measure: float
    grid: Optional[GridHilbert] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise InputError("born_bayes.Density", "density values must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @property
    def mass(self) -> float:
        return float(np.sum(self.values) * self.measure)

    def mass_in(self, region) -> float:
        mask = self.grid.as_mask(region) if self.grid is not None else np.asarray(region, dtype=bool)
        return float(np.sum(self.values[mask]) * self.measure)


@dataclass(frozen=True)
class TheoryModel:
    id: str
    system: ConstrainedSystem
    prior: float

    def __post_init__(self):
        if not (0 < self.prior <= 1):
            raise InputError("born_bayes.TheoryModel", f"prior must lie in (0, 1], got {self.prior}")


def squared_modulus(z):
    return np.abs(z) ** 2


def _source_row(W, qstar, grid: Optional[GridHilbert]) -> tuple:
    """W(q*, x) over all grid nodes and the grid/cell volume used."""
    if isinstance(W, SpectralKernel):
        if grid is not None and grid != W.grid:
            raise InputError("born_bayes.born_density", "kernel lives on a different grid")
        return W.row(qstar), W.grid, W.mu
    if grid is None:
        raise InputError("born_bayes.born_density", "a grid is needed for generic kernels")
    row = np.array([W(qstar, x) for x in grid.points], dtype=complex).reshape(grid.shape)
    return row, grid, grid.cell_volume


def born_density(W, qstar, grid: Optional[GridHilbert] = None, F: Callable = squared_modulus) -> Density:
    """P(q) = F(W(q*, q)) on every grid node, F = |·|² by default."""
    row, g, mu = _source_row(W, qstar, grid)
    return Density(F(row), mu, g)


def check_multiplicative(F: Callable, samples: int = 1000, seed: int = 0) -> float:
    """max |F(z₁z₂) − F(z₁)F(z₂)| / (1 + |F(z₁z₂)|) over random complex pairs."""
    if int(samples) != samples or samples < 100:
        raise InputError("born_bayes.check_multiplicative", "samples must be an integer ≥ 100")
    rng = np.random.default_rng(seed)
    r = np.exp(rng.normal(0.0, 1.0, size=(2, samples)))
    phi = rng.uniform(0.0, 2 * np.pi, size=(2, samples))
    z1, z2 = r * np.exp(1j * phi)
    lhs = np.asarray(F(z1 * z2), dtype=float)
    rhs = np.asarray(F(z1), dtype=float) * np.asarray(F(z2), dtype=float)
    return float(np.max(np.abs(lhs - rhs) / (1 + np.abs(lhs))))


def normalize_wavefunction(W, qstar, grid: Optional[GridHilbert] = None) -> tuple:
    """ψ = A·W(q*, ·) with A fixed by Σ|ψ|²μ = 1; returns (ψ, A)."""
    row, _, mu = _source_row(W, qstar, grid)
    mass = float(np.sum(np.abs(row) ** 2) * mu)
    if not mass > 0:
        raise DegenerateRegionError("born_bayes.normalize_wavefunction", "W(q*, ·) vanishes on the grid")
    A = 1 / math.sqrt(mass)
    return A * row, A


# -- Bayesian comparison -----------------------------------------------------------------------------


def theory_kernel(theory: TheoryModel, grid: GridHilbert, kinetic: str = "fd") -> SpectralKernel:
    """Default-window projector kernel of the theory's constraint on ``grid``."""
    return projector_amplitude(build_hamiltonian(theory.system, grid, kinetic))


def region_representative(grid: GridHilbert, region) -> np.ndarray:
    """Node of ``region`` nearest to the centroid of its nodes."""
    mask = grid.as_mask(region)
    if not np.any(mask):
        raise InputError("born_bayes.likelihood", "empty observation region")
    pts = grid.points[mask.reshape(-1)]
    c = pts.mean(axis=0)
    return pts[int(np.argmin(np.linalg.norm(pts - c, axis=1)))]


@dataclass(frozen=True)
class LikelihoodReport:
    value: float
    numerator: float
    denominator: float
    record: np.ndarray
    record_region: np.ndarray


def likelihood_report(theory: TheoryModel, E1, E0, grid: GridHilbert, qstar, epsilon: float = 0.1,
                      cfg: ShootingConfig = ShootingConfig(), kernel: Optional[SpectralKernel] = None,
                      region: Optional[np.ndarray] = None, F: Callable = squared_modulus) -> LikelihoodReport:
    """Σ_{E1} F(W(E0, q))μ / Σ_{𝓜(E0)} F(W(E0, q))μ.

    W(E0, q) = Σ_{x∈E0} W(x, q)μ is the kernel smeared over the record
    region E0. 𝓜(E0) holds the nodes that have the representative node of E0
    as a record (``records.record_region`` with the theory's shooting);
    E1 must lie inside it.
    """
    where = "born_bayes.likelihood"
    W = kernel if kernel is not None else theory_kernel(theory, grid)
    if W.grid != grid:
        raise InputError(where, "kernel lives on a different grid")
    e0 = grid.as_mask(E0)
    e1 = grid.as_mask(E1)
    rep = region_representative(grid, e0)
    M = record_region(theory.system, qstar, rep, grid, epsilon, cfg) if region is None else grid.as_mask(region)
    if np.any(e1 & ~M):
        raise InputError(where, "E1 is not contained in the record region of E0")
    dens = np.asarray(F(W.region_row(e0)), dtype=float)
    den = float(np.sum(dens[M]) * W.mu)
    if not den > 0:
        raise DegenerateRegionError(where, f"record region of E0 carries no density under theory {theory.id!r}")
    num = float(np.sum(dens[e1]) * W.mu)
    return LikelihoodReport(num / den, num, den, rep, M)


def likelihood(theory: TheoryModel, E1, E0, grid: GridHilbert, qstar, epsilon: float = 0.1,
               cfg: ShootingConfig = ShootingConfig(), kernel: Optional[SpectralKernel] = None,
               region: Optional[np.ndarray] = None) -> float:
    return likelihood_report(theory, E1, E0, grid, qstar, epsilon, cfg, kernel, region).value


def posterior(theories: Sequence[TheoryModel], likelihoods: Sequence[float]) -> np.ndarray:
    """prior_i L_i / Σ_j prior_j L_j, evaluated in exact rational arithmetic."""
    where = "born_bayes.posterior"
    if len(theories) != len(likelihoods) or not theories:
        raise InputError(where, "need one likelihood per theory")
    priors = [t.prior for t in theories]
    if abs(math.fsum(priors) - 1.0) > 1e-12:
        raise InputError(where, f"priors sum to {math.fsum(priors)!r}, not 1")
    L = [float(x) for x in likelihoods]
    if any(not math.isfinite(x) or x < 0 for x in L):
        raise InputError(where, "likelihoods must be finite and non-negative")
    w = [Fraction(p) * Fraction(x) for p, x in zip(priors, L)]
    total = sum(w)
    if total == 0:
        raise UndefinedPosteriorError(where, "every likelihood is zero")
    return np.array([float(x / total) for x in w])


def _update(priors: Sequence[float], likelihoods: Sequence[float]) -> list:
    w = [Fraction(p) * Fraction(float(x)) for p, x in zip(priors, likelihoods)]
    total = sum(w)
    if total == 0:
        raise UndefinedPosteriorError("born_bayes.posterior", "every likelihood is zero")
    return [float(x / total) for x in w]


@dataclass(frozen=True)
class ChainComparison:
    likelihoods: np.ndarray          # (theories, steps)
    sequential: np.ndarray
    joint: np.ndarray
    max_difference: float
    factorization_residuals: np.ndarray


def sequential_vs_joint(theories: Sequence[TheoryModel], chain: Sequence, grid: GridHilbert, qstar,
                        epsilon: float = 0.1, cfg: ShootingConfig = ShootingConfig(),
                        kernels: Optional[Sequence[SpectralKernel]] = None) -> ChainComparison:
    """Posterior after observing the chain E0 → E1 → … one step at a time
    versus one update with the joint likelihood Π_s L(E_{s+1} | E_s).

    Each step's likelihood conditions on the previous region as record.
    The factorization residual of each link, W(q*, e_{s+1}) against
    W(q*, e_s)W(e_s, e_{s+1})/W(e_s, e_s) at the representative nodes, is
    reported so that agreement can be judged on genuinely record-chained
    regions; it is NaN where W(q*, e_{s+1}) vanishes.
    """
    if len(chain) < 3:
        raise InputError("born_bayes.sequential_vs_joint", "need E0 and at least two observations")
    kernels = list(kernels) if kernels is not None else [theory_kernel(t, grid) for t in theories]
    L = np.zeros((len(theories), len(chain) - 1))
    fr = np.zeros((len(theories), len(chain) - 1))
    for i, (t, W) in enumerate(zip(theories, kernels)):
        for s in range(len(chain) - 1):
            rep = likelihood_report(t, chain[s + 1], chain[s], grid, qstar, epsilon, cfg, W)
            L[i, s] = rep.value
            nxt = region_representative(grid, chain[s + 1])
            try:
                fr[i, s] = factorization_check(W, qstar, rep.record, nxt)
            except UndefinedResidualError:
                fr[i, s] = math.nan
    seq = [t.prior for t in theories]
    for s in range(L.shape[1]):
        seq = _update(seq, L[:, s])
    joint = _update([t.prior for t in theories], [math.prod(row) for row in L])
    seq = np.array(seq)
    joint = np.array(joint)
    return ChainComparison(L, seq, joint, float(np.max(np.abs(seq - joint))), fr)
