"""Records: tubes around extremal paths, coarse-grainings, record detection,
factorization residuals, record ordering and the conservation inequality."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .configspace import Configuration, KineticMetric, as_coords
from .dynamics import ConstrainedSystem, arc_length_resample, leapfrog_batch
from .errors import (ConditioningError, DegenerateCoarseGrainingError, InapplicableScenarioError, InputError,
                     InstabilityWarning, NoClassicalLimitError, UndefinedResidualError)
from .semiclassical import ExtremalPath, ShootingConfig, find_extremals
from .spectral import SpectralKernel

RESAMPLE = 256
DEGENERATE_DISTANCE = 1e-12


# -- types -------------------------------------------------------------------------------


@dataclass(frozen=True)
class Tube:
    """Radius-``radius`` neighborhood of an extremal path."""

    seed: ExtremalPath
    radius: float
    rho_min: float = math.nan
    rho_max: float = math.inf

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise InputError("records.Tube", f"radius must be positive and finite, got {self.radius}")
        if self.radius > self.rho_max * (1 + 1e-12):
            raise InputError("records.Tube", f"radius {self.radius} exceeds the no-self-intersection bound {self.rho_max}")


@dataclass(frozen=True)
class CoarseGraining:
    """One tube per extremal between ``qstar`` and ``q``.

    ``exhaustive`` is False when some tube needed a radius above its
    no-intersection bound, so the tubes hold the amplitude only to worse
    than ``epsilon``.
    """

    tubes: tuple
    epsilon: float
    qstar: np.ndarray
    q: np.ndarray
    metric: KineticMetric
    exhaustive: bool = True

    @property
    def not_exhaustive(self) -> bool:
        return not self.exhaustive


@dataclass(frozen=True)
class RecordVerdict:
    candidate: Configuration
    contained_in_all: bool
    per_tube_distances: tuple
    radii: tuple
    factorization_residual: Optional[float] = None
    normalization: Optional[complex] = None

    def to_json(self) -> dict:
        nu = self.normalization
        return {
            "candidate": self.candidate.coords.tolist(),
            "contained_in_all": self.contained_in_all,
            "per_tube": [{"radius": r, "distance": d} for r, d in zip(self.radii, self.per_tube_distances)],
            "factorization_residual": self.factorization_residual,
            "normalization": None if nu is None else ([nu.real, nu.imag] if isinstance(nu, complex) else nu),
        }


@dataclass(frozen=True)
class ConservationReport:
    """Σ_R |W(q_r,x)|²μ against the full-grid sum.

    With a source ``qstar`` the static state ψ = W(q*,·)/‖W(q*,·)‖ gives
    ``p_region`` = Σ_R |ψ|²μ, its factorized estimate ``p_factorized`` and
    the bound ``p_bound``; W(q_r,q_r) takes the place of the unit diagonal.
    """

    lhs: float
    rhs: float
    holds: bool
    saturation: float
    vacuous: bool = False
    p_region: Optional[float] = None
    p_factorized: Optional[float] = None
    p_bound: Optional[float] = None

    def to_json(self) -> dict:
        return dict(self.__dict__)


# -- distances ---------------------------------------------------------------------------


def _metric_root(metric: KineticMetric) -> Optional[np.ndarray]:
    """L with |v|_M = |v @ L| for constant metrics, else None."""
    if metric.is_constant:
        return np.linalg.cholesky(metric.constant)
    return None


def _segment_distances(metric: KineticMetric, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|b − a|_M row-wise; non-constant metrics use the mean of M at both ends."""
    v = b - a
    L = _metric_root(metric)
    if L is not None:
        return np.linalg.norm(v @ L, axis=-1)
    flat_a = a.reshape(-1, a.shape[-1])
    flat_b = b.reshape(-1, b.shape[-1])
    flat_v = v.reshape(-1, v.shape[-1])
    out = np.empty(flat_v.shape[0])
    for k, (x, y, w) in enumerate(zip(flat_a, flat_b, flat_v)):
        m = 0.5 * (metric(x) + metric(y))
        out[k] = math.sqrt(max(float(w @ m @ w), 0.0))
    return out.reshape(v.shape[:-1])


def path_distance(metric: KineticMetric, q_r, path_q: np.ndarray) -> float:
    """Distance from q_r to a sampled path.

    Constant metrics use the exact point-to-polyline distance; otherwise the
    minimum chord distance over the samples.
    """
    q_r = as_coords(q_r, path_q.shape[1], "records.path_distance")
    L = _metric_root(metric)
    if L is None:
        return float(np.min(_segment_distances(metric, np.broadcast_to(q_r, path_q.shape), path_q)))
    y = path_q @ L
    x = q_r @ L
    a, b = y[:-1], y[1:]
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    t = np.where(dd > 0, np.einsum("ij,ij->i", x - a, d) / np.where(dd > 0, dd, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[:, None] * d
    best = float(np.min(np.linalg.norm(proj - x, axis=1))) if len(a) else float(np.linalg.norm(y[0] - x))
    return best


def _arc_length(metric: KineticMetric, q: np.ndarray) -> np.ndarray:
    seg = _segment_distances(metric, q[:-1], q[1:])
    return np.concatenate([[0.0], np.cumsum(seg)])


# -- tube radii ---------------------------------------------------------------------------


def self_clearance(metric: KineticMetric, q: np.ndarray) -> float:
    """Smallest chord between samples whose connecting arc is longer than π/2 × chord.

    Straight and gently curved paths never qualify and give ``inf``; a path
    folding back toward itself gives the width of the fold.
    """
    s = _arc_length(metric, q)
    D = _segment_distances(metric, q[:, None, :], q[None, :, :])
    arc = np.abs(s[:, None] - s[None, :])
    idx = np.arange(len(q))
    far = np.abs(idx[:, None] - idx[None, :]) > 1
    mask = far & (arc > 0.5 * math.pi * D)
    return float(np.min(D[mask])) if np.any(mask) else math.inf


def pair_clearance(metric: KineticMetric, a: np.ndarray, b: np.ndarray) -> float:
    """Separation of two equally sampled paths.

    d(k) is the distance between the k-th samples. Coincident endpoints are
    skipped; the clearance is the smallest interior local minimum of d, or
    max d when d has no interior minimum (paths fanning out from shared
    endpoints).
    """
    d = _segment_distances(metric, a, b)
    lo = 1 if d[0] < DEGENERATE_DISTANCE else 0
    hi = len(d) - 1 if d[-1] < DEGENERATE_DISTANCE else len(d)
    core = d[lo:hi]
    if core.size == 0 or np.min(core) < DEGENERATE_DISTANCE:
        raise DegenerateCoarseGrainingError("records.rho_max", "extremal paths intersect")
    interior = [d[k] for k in range(max(lo, 1), min(hi, len(d) - 1)) if d[k] <= d[k - 1] and d[k] <= d[k + 1]]
    best = float(np.max(core))
    if interior:
        best = min(best, float(min(interior)))
    return best


def rho_max(seed: ExtremalPath, others: Sequence[ExtremalPath] = (), metric: Optional[KineticMetric] = None,
            cap: Optional[float] = None, samples: int = RESAMPLE) -> float:
    """Largest tube radius keeping the tube clear of itself and of the other extremals.

    Half the smaller of ``self_clearance`` and every ``pair_clearance``,
    capped at ``cap`` (default: the seed's arc length).
    """
    q = seed.path.q
    metric = metric or KineticMetric.identity(q.shape[1])
    a = arc_length_resample(q, samples)
    if cap is None:
        cap = float(_arc_length(metric, q)[-1])
    if not cap > 0:
        raise InputError("records.rho_max", "cap must be positive (zero-length seed?)")
    clear = self_clearance(metric, a)
    for o in others:
        if o is seed:
            continue
        clear = min(clear, pair_clearance(metric, a, arc_length_resample(o.path.q, samples)))
    return float(min(cap, 0.5 * clear))


def gaussian_tail_radius(sigma: float, epsilon: float, hbar: float = 1.0) -> float:
    """σ√(2ħ ln(1/ε)): radius outside which the weight exp(−u²/(2σ²ħ)) is below ε."""
    if not 0 < epsilon < 1:
        raise InputError("records.rho_min", f"epsilon must lie in (0, 1), got {epsilon}")
    return float(sigma * math.sqrt(2 * hbar * math.log(1 / epsilon)))


def monodromy_along(sys: ConstrainedSystem, seed: ExtremalPath, fd_step: float = 1e-6) -> np.ndarray:
    """Linearized flow maps M(0→τ_k), shape (K, 2n, 2n), at the seed's nodes.

    Central differences of the recorded flow, with the seed's own steps.
    """
    n = sys.dim
    q0 = seed.path.q[0]
    p0 = seed.path.p[0]
    steps = len(seed.path.tau) - 1
    h = seed.traversal_time / steps
    z0 = np.concatenate([q0, p0])
    scale = fd_step * np.maximum(1.0, np.abs(z0))
    E = np.eye(2 * n) * scale
    Z = np.concatenate([z0 + E, z0 - E])
    tq, tp = leapfrog_batch(sys, Z[:, :n], Z[:, n:], steps, h, record=True)
    traj = np.concatenate([tq, tp], axis=2)
    diff = (traj[:, : 2 * n] - traj[:, 2 * n:]) / (2 * scale)[None, :, None]
    return np.transpose(diff, (0, 2, 1))


def transverse_hessian(sys: ConstrainedSystem, seed: ExtremalPath, fd_step: float = 1e-6):
    """Smallest eigenvalue of the transverse action Hessian at each interior node.

    With monodromy blocks [[A, B], [C, D]] the Hessian of S(q*, x) + S(x, q)
    at x = γ(τ) is D₁B₁⁻¹ + B₂⁻¹A₂ (segments 0→τ and τ→T). In two or more
    dimensions the velocity direction is projected out; in one dimension
    the full Hessian is used. Returns (τ, λ_min).
    """
    n = sys.dim
    if not sys.metric.is_constant:
        raise InputError("records.rho_min", "transverse Hessians need a constant kinetic metric")
    M = monodromy_along(sys, seed, fd_step)
    K = M.shape[0]
    MT = M[-1]
    L = np.linalg.cholesky(sys.metric.constant)
    Linv = np.linalg.inv(L)
    minv = np.linalg.inv(sys.metric.constant)
    taus = []
    lams = []
    for k in range(1, K - 1):
        M1 = M[k]
        M2 = MT @ np.linalg.inv(M1)
        B1, D1 = M1[:n, n:], M1[n:, n:]
        A2, B2 = M2[:n, :n], M2[:n, n:]
        try:
            Hk = D1 @ np.linalg.inv(B1) + np.linalg.solve(B2, A2)
        except np.linalg.LinAlgError:
            taus.append(seed.path.tau[k])
            lams.append(0.0)
            continue
        Hk = 0.5 * (Hk + Hk.T)
        # |u|_M = |Lᵀu|, so work in w = Lᵀu
        Ht = Linv @ Hk @ Linv.T
        if n > 1:
            v = L.T @ (minv @ seed.path.p[k])
            nv = np.linalg.norm(v)
            if nv > 0:
                Q, _ = np.linalg.qr(np.column_stack([v / nv, np.eye(n)]))
                basis = Q[:, 1:n]
                Ht = basis.T @ Ht @ basis
        taus.append(seed.path.tau[k])
        lams.append(float(np.linalg.eigvalsh(Ht)[0]))
    return np.array(taus), np.array(lams)


def rho_min(seed: ExtremalPath, epsilon: float, sys: ConstrainedSystem, fd_step: float = 1e-6) -> float:
    """Tube radius holding all but ε of the transverse Gaussian weight.

    Fluctuations u at τ carry exp(−λ(τ)u²/(2ħ)), i.e. σ(τ) = 1/√λ(τ); the
    radius is max_τ σ(τ)√(2ħ ln(1/ε)). Non-positive λ warns and uses |λ|.
    """
    where = "records.rho_min"
    if not 0 < epsilon < 1:
        raise InputError(where, f"epsilon must lie in (0, 1), got {epsilon}")
    if not seed.converged or len(seed.path.tau) < 3 or seed.traversal_time <= 0:
        raise InputError(where, "seed must be a converged path of positive length")
    _, lam = transverse_hessian(sys, seed, fd_step)
    if np.any(lam <= 0):
        warnings.warn(InstabilityWarning(f"{where}: non-positive transverse Hessian eigenvalue {lam.min():.3g}"))
    lam = np.abs(lam)
    if np.any(lam == 0):
        return math.inf
    return gaussian_tail_radius(float(np.max(1 / np.sqrt(lam))), epsilon, sys.hbar)


# -- coarse-graining and records -------------------------------------------------------------


def build_coarse_graining(sys: ConstrainedSystem, qstar, q, epsilon: float,
                          cfg: ShootingConfig = ShootingConfig(), paths: Optional[Sequence[ExtremalPath]] = None
                          ) -> CoarseGraining:
    """Tubes of radius min(ρ_min(ε), ρ_max) around every extremal from qstar to q."""
    where = "records.build_coarse_graining"
    qstar = as_coords(qstar, sys.dim, where)
    q = as_coords(q, sys.dim, where)
    if not 0 < epsilon < 1:
        raise InputError(where, f"epsilon must lie in (0, 1), got {epsilon}")
    if paths is None:
        paths = find_extremals(sys, qstar, q, cfg)
    paths = [p for p in paths if p.traversal_time > 0]
    if not paths:
        raise NoClassicalLimitError(where, "no extremal path connects the endpoints")
    tubes = []
    exhaustive = True
    for p in paths:
        rmax = rho_max(p, paths, sys.metric, cfg.domain_diameter)
        rmin = rho_min(p, epsilon, sys)
        if rmin > rmax:
            exhaustive = False
        tubes.append(Tube(p, min(rmin, rmax), rmin, rmax))
    return CoarseGraining(tuple(tubes), float(epsilon), qstar, q, sys.metric, exhaustive)


def record_normalization(W, q_r) -> complex:
    """ν = 1/W(q_r, q_r): the grid stand-in for a unit diagonal."""
    d = W(q_r, q_r)
    if abs(d) < 1e-300:
        raise UndefinedResidualError("records.factorization_check", "W(q_r, q_r) vanishes")
    return 1 / d


def factorization_check(W, qstar, q_r, q, normalization: Optional[complex] = None,
                        measure: Optional[float] = None) -> float:
    """|W(q*,q) − ν Σ_{x∈R} W(q*,x) W(x,q) μ| / |W(q*,q)|.

    ``q_r`` is a configuration (R = {q_r}, μ = 1, ν defaulting to
    1/W(q_r,q_r)) or a boolean grid mask for a spectral kernel (μ defaulting
    to the cell volume, ν to 1).
    """
    where = "records.factorization_check"
    full = W(qstar, q)
    if abs(full) < 1e-14:
        raise UndefinedResidualError(where, f"|W(q*, q)| = {abs(full):.3g} is below 1e-14")
    mask = q_r if isinstance(q_r, np.ndarray) and q_r.dtype == bool else None
    if mask is None:
        nu = record_normalization(W, q_r) if normalization is None else normalization
        via = W(qstar, q_r) * W(q_r, q) * (1.0 if measure is None else measure)
    else:
        if not isinstance(W, SpectralKernel):
            raise InputError(where, "region records need a spectral kernel")
        mask = W.grid.as_mask(mask)
        if not np.any(mask):
            raise InputError(where, "empty record region")
        nu = 1.0 if normalization is None else normalization
        mu = W.mu if measure is None else measure
        via = complex(np.sum(W.row(qstar)[mask] * W.column(q)[mask])) * mu
    return float(abs(full - nu * via) / abs(full))


def detect_record(cg: CoarseGraining, q_r, W=None, qstar=None, q=None,
                  normalization: Optional[complex] = None) -> RecordVerdict:
    """Is q_r inside every tube of ``cg``? The factorization residual is
    reported when a kernel is given, whatever the containment verdict."""
    cand = q_r if isinstance(q_r, Configuration) else Configuration(q_r)
    dists = tuple(path_distance(cg.metric, cand.coords, t.seed.path.q) for t in cg.tubes)
    radii = tuple(t.radius for t in cg.tubes)
    contained = all(d <= r for d, r in zip(dists, radii))
    residual = None
    nu = None
    if W is not None:
        qs = cg.qstar if qstar is None else as_coords(qstar)
        qq = cg.q if q is None else as_coords(q)
        nu = record_normalization(W, cand.coords) if normalization is None else normalization
        residual = factorization_check(W, qs, cand.coords, qq, nu)
    return RecordVerdict(cand, contained, dists, radii, residual, nu)


def conditional_probability(P_q: float, P_qr: float) -> float:
    """P(q | q_r) = P(q) / P(q_r)."""
    where = "records.conditional_probability"
    if not (math.isfinite(P_q) and math.isfinite(P_qr)) or P_q < 0 or P_qr < 0:
        raise InputError(where, "probabilities must be finite and non-negative")
    if P_qr == 0:
        raise ConditioningError(where, "conditioning on an event of zero probability")
    c = P_q / P_qr
    # nudge by an ulp when that makes c·P(q_r) reproduce P(q) exactly
    for cand in (c, math.nextafter(c, math.inf), math.nextafter(c, -math.inf)):
        if cand * P_qr == P_q:
            return cand
    return c


def record_ordering(sys: ConstrainedSystem, path: ExtremalPath, W=None, epsilon: float = 0.1, samples: int = 5,
                    cfg: ShootingConfig = ShootingConfig()) -> list:
    """Verdicts for every sample pair t_i < t_j along a unique extremal.

    Samples sit at τ = T(i+1)/samples. For each pair, γ(t_i) is tested
    against the coarse-graining from γ(0) to γ(t_j). Sub-problems search
    traversal times up to the seed's own, so they see the seed's segment and
    nothing longer. Pairs are ordered (0,1), (0,2), ..., (samples−2, samples−1).
    """
    where = "records.record_ordering"
    if samples < 2:
        raise InputError(where, "need at least two samples")
    q0 = path.path.q[0]
    qT = path.path.q[-1]
    found = find_extremals(sys, q0, qT, cfg)
    if len(found) != 1:
        raise InapplicableScenarioError(where, f"expected a unique extremal, found {len(found)}")
    tau = path.path.tau
    T = path.traversal_time
    idx = [int(np.argmin(np.abs(tau - T * (i + 1) / samples))) for i in range(samples)]
    pts = [path.path.q[k] for k in idx]
    sub_cfg = replace(cfg, max_time=min(cfg.max_time, 1.01 * T))
    verdicts = []
    for j in range(1, samples):
        cg = build_coarse_graining(sys, q0, pts[j], epsilon, sub_cfg)
        for i in range(j):
            verdicts.append((i, j, detect_record(cg, pts[i], W).contained_in_all))
    verdicts.sort()
    return [v for _, _, v in verdicts]


def record_region(sys: ConstrainedSystem, qstar, q_r, grid, epsilon: float = 0.1,
                  cfg: ShootingConfig = ShootingConfig(), candidates=None) -> np.ndarray:
    """Grid nodes x for which q_r is a record: q_r lies in every tube from qstar to x.

    Nodes that no extremal reaches (or that are classically forbidden) are
    excluded; ``candidates`` restricts the nodes that are examined.
    """
    pts = grid.points
    mask = np.zeros(grid.shape, dtype=bool)
    todo = np.ones(grid.shape, dtype=bool) if candidates is None else grid.as_mask(candidates)
    qstar = as_coords(qstar, sys.dim, "records.record_region")
    for flat in np.flatnonzero(todo.reshape(-1)):
        x = pts[flat]
        if np.allclose(x, qstar):
            continue
        try:
            cg = build_coarse_graining(sys, qstar, x, epsilon, cfg)
        except (InputError, NoClassicalLimitError, DegenerateCoarseGrainingError):
            continue
        mask.reshape(-1)[flat] = detect_record(cg, q_r).contained_in_all
    return mask


def conservation_check(W: SpectralKernel, q_r, record_region, grid=None, qstar=None) -> ConservationReport:
    """Σ_{x∈R} |W(q_r,x)|²μ ≤ Σ_x |W(q_r,x)|²μ, plus the normalized form when qstar is given."""
    where = "records.conservation_check"
    if grid is not None and grid != W.grid:
        raise InputError(where, "kernel lives on a different grid")
    mask = W.grid.as_mask(record_region)
    dens = np.abs(W.row(q_r)) ** 2 * W.mu
    rhs = float(np.sum(dens))
    lhs = float(np.sum(dens[mask]))
    vacuous = not np.any(mask)
    if not rhs > 0:
        raise UndefinedResidualError(where, "W(q_r, ·) vanishes on the grid")
    rep = ConservationReport(lhs, rhs, bool(lhs <= rhs), lhs / rhs, vacuous)
    if qstar is not None:
        src = W.row(qstar)
        norm2 = float(np.sum(np.abs(src) ** 2) * W.mu)
        psi2 = np.abs(src) ** 2 / norm2
        psi_r2 = float(abs(W(qstar, q_r)) ** 2 / norm2)
        diag = abs(W(q_r, q_r))
        rep = replace(rep, p_region=float(np.sum(psi2[mask]) * W.mu), p_factorized=psi_r2 * lhs / diag**2,
                      p_bound=psi_r2 * rhs / diag**2)
    return rep
