"""Semiclassical amplitudes from classical extremals.

Boundary-value problems are solved by multi-start shooting: every start is
integrated with the symplectic flow and refined by damped Gauss–Newton on
the endpoint residual, all starts in one vectorized batch. Van Vleck weights
use the time-resolved map p₀ ↦ q(T) at each extremal's traversal time T.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .configspace import Configuration, as_coords
from .dynamics import (ConstrainedSystem, PhasePath, action_unparametrized, arc_length_resample,
                       hamiltonian_flow, leapfrog_batch)
from .errors import CausticWarning, InputError, ResolutionError, UnsupportedFeatureError
from .spectral import AmplitudeKernel, GridHilbert


@dataclass(frozen=True)
class ShootingConfig:
    """Multi-start shooting settings.

    ``dt`` is the clock step during the search and ``polish_dt`` the step for
    the final Newton polish, the stored path and the Van Vleck map.
    ``max_time`` bounds the traversal times that are searched.
    """

    n_starts: int = 64
    bvp_tol: float = 1e-8
    dedupe_distance: Optional[float] = None
    max_newton_iters: int = 40
    rng_seed: int = 0
    max_time: float = 10.0
    min_time: float = 1e-3
    dt: float = 1e-2
    polish_dt: float = 2e-3
    fd_step: float = 1e-5
    domain_diameter: Optional[float] = None

    def __post_init__(self):
        where = "semiclassical.ShootingConfig"
        if int(self.n_starts) != self.n_starts or self.n_starts < 1:
            raise InputError(where, "n_starts must be a positive integer")
        for name in ("bvp_tol", "max_time", "min_time", "dt", "polish_dt", "fd_step"):
            if not getattr(self, name) > 0:
                raise InputError(where, f"{name} must be positive")
        if self.dedupe_distance is not None and not self.dedupe_distance > 0:
            raise InputError(where, "dedupe_distance must be positive")
        if self.max_newton_iters < 1:
            raise InputError(where, "max_newton_iters must be ≥ 1")


@dataclass(frozen=True)
class ExtremalPath:
    path: PhasePath
    action: float
    initial_momentum: np.ndarray
    van_vleck: float
    converged: bool
    endpoint_residual: float
    traversal_time: float
    caustic: bool = False
    van_vleck_change: float = 0.0
    mode: str = "energy"

    def summary(self) -> dict:
        return {
            "action": self.action,
            "van_vleck": self.van_vleck,
            "residual": self.endpoint_residual,
            "traversal_time": self.traversal_time,
            "initial_momentum": [float(x) for x in self.initial_momentum],
            "caustic": self.caustic,
        }


@dataclass
class ShootingDiagnostics:
    starts: int = 0
    converged_starts: int = 0
    distinct: int = 0
    message: str = ""


class ExtremalList(list):
    """List of ExtremalPath with the shooting diagnostics attached."""

    diagnostics: ShootingDiagnostics


# -- helpers ----------------------------------------------------------------------------


def _require_constant_metric(sys: ConstrainedSystem, where: str) -> np.ndarray:
    if not sys.metric.is_constant:
        raise UnsupportedFeatureError(where, "shooting and Van Vleck weights need a constant kinetic metric")
    return np.linalg.inv(sys.metric.constant)


def _flow_end(sys, q0, p0, T, steps):
    """Endpoints after ``steps`` leapfrog steps of size T/steps for batches (B, n)."""
    return leapfrog_batch(sys, q0, p0, steps, np.asarray(T, dtype=float) / steps)


def _onshell_momentum(sys, qa, z, minv):
    """p = s z/|z| with s fixed by H(qa, p) = 0; z has shape (B, n)."""
    u = z / np.linalg.norm(z, axis=1, keepdims=True)
    ke = sys.energy - float(sys.potential(qa))
    quad = np.einsum("bi,ij,bj->b", u, minv, u)
    return u * np.sqrt(2 * ke / quad)[:, None]


def _dedupe(paths: list, dist: float) -> list:
    kept = []
    shapes = []
    for ep in paths:
        r = arc_length_resample(ep.path.q, 64)
        if any(np.max(np.linalg.norm(r - s, axis=1)) < dist for s in shapes):
            continue
        kept.append(ep)
        shapes.append(r)
    return kept


def _dedupe_distance(cfg: ShootingConfig, qa, qb) -> float:
    if cfg.dedupe_distance is not None:
        return cfg.dedupe_distance
    diam = cfg.domain_diameter if cfg.domain_diameter is not None else max(1.0, float(np.linalg.norm(qb - qa)))
    return 1e-3 * diam


# -- Gauss–Newton core --------------------------------------------------------------------


def _gauss_newton(residual_fn, x0: np.ndarray, steps_fn, cfg: ShootingConfig, lower: Optional[np.ndarray], dt: float,
                  iters: int, fd_scale: np.ndarray, upper: Optional[np.ndarray] = None,
                  free: Optional[Sequence[int]] = None):
    """Batched damped Gauss–Newton on r(x) with central-difference Jacobians.

    ``residual_fn(x, steps)`` maps (B, m) → (B, n); ``steps_fn(x)`` picks the
    common step count for the batch; ``lower``/``upper`` bound components
    (used for traversal times). Only the columns in ``free`` are updated.
    """
    x = x0.copy()
    B, m = x.shape
    free = list(range(m)) if free is None else list(free)
    active = np.ones(B, dtype=bool)
    res = np.full(B, np.inf)
    for _ in range(iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa = x[idx]
        steps = steps_fn(xa, dt)
        h = fd_scale[idx] * 1e-6
        probes = [xa]
        for j in free:
            e = np.zeros(m)
            e[j] = 1.0
            probes.append(xa + h[:, None] * e)
            probes.append(xa - h[:, None] * e)
        try:
            with np.errstate(all="ignore"):
                out = residual_fn(np.concatenate(probes), steps)
        except Exception:
            active[idx] = False
            continue
        k = idx.size
        r0 = out[:k]
        J = np.stack([(out[(2 * j + 1) * k:(2 * j + 2) * k] - out[(2 * j + 2) * k:(2 * j + 3) * k]) / (2 * h[:, None])
                      for j in range(len(free))], axis=2)
        nr = np.linalg.norm(r0, axis=1)
        res[idx] = nr
        done = nr <= cfg.bvp_tol
        bad = ~np.isfinite(nr)
        active[idx[done | bad]] = False
        go = ~(done | bad)
        if not np.any(go):
            break
        gi = idx[go]
        dx = np.zeros((gi.size, m))
        dx[:, free] = np.stack([-np.linalg.lstsq(J[i], r0[i], rcond=None)[0] for i in np.flatnonzero(go)])
        if lower is not None:
            # keep bounded components above half their current value
            lim = lower[None, :] > -np.inf
            cur = x[gi]
            room = 0.5 * (cur - np.where(lim, lower[None, :], 0.0))
            shrink = np.where(lim & (dx < -room), room / np.maximum(-dx, 1e-300), 1.0)
            dx = dx * np.min(shrink, axis=1, keepdims=True)
        if upper is not None:
            over = x[gi] + dx > upper[None, :]
            dx = np.where(over, 0.5 * (upper[None, :] - x[gi]), dx)
        # backtracking on the residual norm
        lam = np.ones(gi.size)
        trial = x[gi] + dx
        for _bt in range(6):
            with np.errstate(all="ignore"):
                try:
                    rt = residual_fn(trial, steps_fn(trial, dt))
                    nt = np.linalg.norm(rt, axis=1)
                except Exception:
                    nt = np.full(gi.size, np.inf)
            worse = ~(nt < nr[go])
            if not np.any(worse):
                break
            lam[worse] *= 0.5
            trial[worse] = x[gi][worse] + lam[worse, None] * dx[worse]
        x[gi] = trial
    # final residual for everything still marked active
    idx = np.flatnonzero(active)
    if idx.size:
        with np.errstate(all="ignore"):
            try:
                rr = residual_fn(x[idx], steps_fn(x[idx], dt))
                res[idx] = np.linalg.norm(rr, axis=1)
            except Exception:
                res[idx] = np.inf
    return x, res


# -- energy-shell extremals ---------------------------------------------------------------------


def find_extremals(sys: ConstrainedSystem, qa, qb, cfg: ShootingConfig = ShootingConfig()) -> ExtremalList:
    """Classical paths on the shell H = 0 from qa to qb.

    Starts are drawn uniformly on the on-shell momentum sphere at qa, with
    traversal-time guesses log-uniform in [min_time, max_time]. Converged
    paths are polished at ``polish_dt``, deduplicated and sorted by action.
    An empty result carries a diagnostic message instead of raising.
    """
    where = "semiclassical.find_extremals"
    qa = as_coords(qa, sys.dim, where)
    qb = as_coords(qb, sys.dim, where)
    minv = _require_constant_metric(sys, where)
    for name, q in (("qa", qa), ("qb", qb)):
        if sys.energy - float(sys.potential(q)) <= 0:
            raise InputError(where, f"endpoint {name}={q.tolist()} is classically forbidden (E ≤ V)")
    n = sys.dim
    rng = np.random.default_rng(cfg.rng_seed)
    B = cfg.n_starts
    if n == 1:
        z0 = rng.choice([-1.0, 1.0], size=(B, 1))
    else:
        z0 = rng.normal(size=(B, n))
        z0 /= np.linalg.norm(z0, axis=1, keepdims=True)
    T0 = np.exp(rng.uniform(math.log(max(cfg.min_time, 1e-2 * cfg.max_time)), math.log(cfg.max_time), size=B))

    def steps_fn(x, dt):
        return max(8, int(math.ceil(np.max(x[:, -1]) / dt)))

    trivial = bool(np.linalg.norm(qb - qa) <= 1e-12)

    # in 1D the direction is a fixed sign and only T is solved for
    free = [1] if n == 1 else None

    def resn(x, steps):
        p0 = _onshell_momentum(sys, qa, x[:, :n], minv)
        q0 = np.repeat(qa[None, :], x.shape[0], axis=0)
        qe, _ = _flow_end(sys, q0, p0, x[:, n], steps)
        return qe - qb

    x0 = np.concatenate([z0, T0[:, None]], axis=1)
    lower = np.full(n + 1, -np.inf)
    lower[n] = 0.0
    upper = np.full(n + 1, np.inf)
    upper[n] = cfg.max_time * 1.25
    scale = np.maximum(np.abs(x0).max(axis=1), 1e-3)
    xs, rs = _gauss_newton(resn, x0, steps_fn, cfg, lower, cfg.dt, cfg.max_newton_iters, scale, upper, free)
    results = []
    for xi, ri in zip(xs, rs):
        if ri <= max(cfg.bvp_tol, 1e-6) and cfg.min_time < xi[n] <= cfg.max_time:
            results.append((_onshell_momentum(sys, qa, xi[None, :n], minv)[0], float(xi[n])))

    out = ExtremalList()
    diag = ShootingDiagnostics(starts=B, converged_starts=len(results))
    if trivial:
        out.append(_trivial_extremal(sys, qa, minv))
    # cluster near-identical starts before polishing
    results.sort(key=lambda r: r[1])
    pre = []
    for p0, T in results:
        if any(abs(T - T2) < 1e-6 * max(1.0, T) and np.allclose(p0, p2, atol=1e-6) for p2, T2 in pre):
            continue
        pre.append((p0, T))
    polished = _polish_energy(sys, qa, qb, pre, cfg, minv) if pre else []
    dd = _dedupe_distance(cfg, qa, qb)
    polished.sort(key=lambda e: (e.endpoint_residual, e.traversal_time))
    uniq = _dedupe(polished, dd)
    if trivial:
        uniq = [e for e in uniq if np.max(np.abs(e.path.q - qa)) > dd]
    out.extend(uniq)
    out.sort(key=lambda e: (round(e.action, 10), e.traversal_time))
    diag.distinct = len(out)
    if not out:
        diag.message = f"no start converged to |q(T) - qb| <= {cfg.bvp_tol} within {cfg.max_newton_iters} iterations"
    out.diagnostics = diag
    return out


def _trivial_extremal(sys, qa, minv) -> ExtremalPath:
    p0 = _onshell_momentum(sys, qa, np.eye(sys.dim)[:1], minv)[0]
    path = PhasePath(np.stack([qa, qa]), np.stack([p0, p0]), np.array([0.0, 1e-12]))
    return ExtremalPath(path, 0.0, p0, math.inf, True, 0.0, 0.0, True, 0.0, "energy")


def _polish_energy(sys, qa, qb, starts, cfg, minv) -> list:
    """Re-converge (p0, T) pairs at the fine clock step, all in one batch."""
    n = sys.dim

    def res(x, steps):
        pp = _onshell_momentum(sys, qa, x[:, :n], minv)
        q0 = np.repeat(qa[None, :], x.shape[0], axis=0)
        qe, _ = _flow_end(sys, q0, pp, x[:, n], steps)
        return qe - qb

    def steps_fn(x, dt):
        return max(16, int(math.ceil(np.max(x[:, -1]) / dt)))

    x0 = np.array([np.concatenate([p0 / np.linalg.norm(p0), [T]]) for p0, T in starts])
    lower = np.full(n + 1, -np.inf)
    lower[n] = 0.0
    scale = np.maximum(x0[:, n], 1e-3)
    xs, rs = _gauss_newton(res, x0, steps_fn, cfg, lower, cfg.polish_dt, 12, scale, None, [n] if n == 1 else None)
    out = []
    for x, r in zip(xs, rs):
        T = float(x[n])
        if not (r <= cfg.bvp_tol and T > cfg.min_time):
            continue
        p0 = _onshell_momentum(sys, qa, x[None, :n], minv)[0]
        steps = steps_fn(x[None, :], cfg.polish_dt)
        out.append(_assemble(sys, qa, qb, p0, T, steps, cfg, float(r), "energy"))
    return out


def _assemble(sys, qa, qb, p0, T, steps, cfg, residual, mode) -> ExtremalPath:
    tq, tp = leapfrog_batch(sys, qa[None, :], p0[None, :], steps, T / steps, record=True)
    tq, tp = tq[:, 0, :], tp[:, 0, :]
    tau = np.linspace(0.0, T, steps + 1)
    H = sys.hamiltonian(tq, tp)
    hs = T / steps
    path = PhasePath(tq, tp, tau, float(np.max(np.abs(H - H[0])) / hs**2), {"steps": steps, "clock_step": hs})
    S = action_unparametrized(path)
    if mode == "time":
        # Hamilton's principal function R = ∫p dq − ∫H_o dt; H_o = H + E is constant along the flow
        S -= float(np.mean(H + sys.energy)) * T
    vv = _van_vleck_core(sys, qa, p0, T, steps, cfg.fd_step)
    caustic = vv["caustic"]
    ep = ExtremalPath(path, S, p0.copy(), vv["value"], True, residual, T, caustic, vv["relative_change"], mode)
    if caustic:
        warnings.warn(CausticWarning(f"semiclassical.van_vleck_weight: near-singular Jacobian at T={T:.6g}"))
    return ep


# -- Van Vleck ---------------------------------------------------------------------------


def _jacobian_qT_p0(sys, qa, p0, T, steps, fd_step) -> np.ndarray:
    n = sys.dim
    h = fd_step * max(1.0, float(np.linalg.norm(p0)))
    P = np.concatenate([p0 + h * np.eye(n), p0 - h * np.eye(n)])
    Q = np.repeat(qa[None, :], 2 * n, axis=0)
    qe, _ = _flow_end(sys, Q, P, np.full(2 * n, T), steps)
    return ((qe[:n] - qe[n:]) / (2 * h)).T


def _van_vleck_core(sys, qa, p0, T, steps, fd_step) -> dict:
    J1 = _jacobian_qT_p0(sys, qa, p0, T, steps, fd_step)
    J2 = _jacobian_qT_p0(sys, qa, p0, T, steps, fd_step / 2)
    d1, d2 = abs(np.linalg.det(J1)), abs(np.linalg.det(J2))
    s = np.linalg.svd(J1, compute_uv=False)
    # compare with free flight, whose Jacobian is T·M⁻¹
    ref = T * float(np.max(np.linalg.eigvalsh(np.linalg.inv(sys.metric.constant))))
    caustic = bool(s[-1] <= 1e-6 * ref or d1 == 0.0)
    v1 = 1.0 / d1 if d1 > 0 else math.inf
    v2 = 1.0 / d2 if d2 > 0 else math.inf
    change = abs(v1 - v2) / v1 if math.isfinite(v1) and v1 > 0 else math.inf
    return {"value": v1, "halved": v2, "relative_change": change, "caustic": caustic}


def van_vleck_weight(sys: ConstrainedSystem, path: ExtremalPath, fd_step: float = 1e-5) -> float:
    """|det ∂p₀/∂q(T)| on the time-resolved map at the path's traversal time.

    A near-singular Jacobian emits a CausticWarning; the value is still
    returned. The relative change under halving ``fd_step`` is available
    through :func:`van_vleck_report`.
    """
    return van_vleck_report(sys, path, fd_step)["value"]


def van_vleck_report(sys: ConstrainedSystem, path: ExtremalPath, fd_step: float = 1e-5) -> dict:
    where = "semiclassical.van_vleck_weight"
    if not path.converged:
        raise InputError(where, "path is not converged")
    if not fd_step > 0:
        raise InputError(where, "fd_step must be positive")
    _require_constant_metric(sys, where)
    T = path.traversal_time
    if T <= 0:
        warnings.warn(CausticWarning(f"{where}: zero traversal time, weight is infinite"))
        return {"value": math.inf, "halved": math.inf, "relative_change": 0.0, "caustic": True}
    sys_eff = sys.with_(energy=0.0) if path.mode == "time" else sys
    rep = _van_vleck_core(sys_eff, path.path.q[0], path.initial_momentum, T, len(path.path) - 1, fd_step)
    if rep["caustic"]:
        warnings.warn(CausticWarning(f"{where}: near-singular Jacobian at T={T:.6g}"))
    return rep


# -- fixed-time (deparametrized) extremals -------------------------------------------------------


def find_extremals_fixed_time(sys: ConstrainedSystem, qa, qb, T: float, cfg: ShootingConfig = ShootingConfig()
                              ) -> ExtremalList:
    """Classical paths of H_o from qa to qb in time T (the deparametrized problem).

    ``action`` is Hamilton's principal function ∫p dq − H_o T, i.e. the
    extended action ∫(p dq + p_t dt) with p_t = −H_o. ``sys.energy`` is
    ignored.
    """
    where = "semiclassical.find_extremals_fixed_time"
    qa = as_coords(qa, sys.dim, where)
    qb = as_coords(qb, sys.dim, where)
    if not T > 0:
        raise InputError(where, "T must be positive")
    _require_constant_metric(sys, where)
    sys0 = sys.with_(energy=0.0)
    n = sys.dim
    rng = np.random.default_rng(cfg.rng_seed)
    M = sys.metric.constant
    p_guess = M @ (qb - qa) / T
    spread = max(1.0, float(np.linalg.norm(p_guess)))
    P0 = p_guess[None, :] + spread * rng.normal(size=(cfg.n_starts, n))
    P0[0] = p_guess
    steps_search = max(16, int(math.ceil(T / cfg.dt)))

    def res(x, steps):
        q0 = np.repeat(qa[None, :], x.shape[0], axis=0)
        qe, _ = _flow_end(sys0, q0, x, np.full(x.shape[0], T), steps)
        return qe - qb

    xs, rs = _gauss_newton(res, P0, lambda x, dt: steps_search, cfg, None, cfg.dt, cfg.max_newton_iters,
                           np.maximum(np.abs(P0).max(axis=1), 1.0))
    cands = [x for x, r in zip(xs, rs) if r <= max(cfg.bvp_tol, 1e-6)]
    steps_fine = max(16, int(math.ceil(T / cfg.polish_dt)))
    polished = []
    for x in cands:
        x2, r2 = _gauss_newton(res, x[None, :], lambda x, dt: steps_fine, cfg, None, cfg.polish_dt, 12,
                               np.array([max(1.0, float(np.abs(x).max()))]))
        if r2[0] <= cfg.bvp_tol:
            polished.append(_assemble(sys0, qa, qb, x2[0], float(T), steps_fine, cfg, float(r2[0]), "time"))
    polished.sort(key=lambda e: e.endpoint_residual)
    out = ExtremalList(_dedupe(polished, _dedupe_distance(cfg, qa, qb)))
    out.sort(key=lambda e: round(e.action, 10))
    out.diagnostics = ShootingDiagnostics(cfg.n_starts, len(cands), len(out),
                                          "" if out else "no start converged")
    return out


# -- amplitudes ---------------------------------------------------------------------------


def semiclassical_amplitude(paths: Sequence[ExtremalPath], hbar: float = 1.0) -> complex:
    """Σ_j Δ_j^{1/2} exp(i S_j/ħ)."""
    where = "semiclassical.semiclassical_amplitude"
    if not paths:
        raise InputError(where, "need at least one path")
    if not hbar > 0:
        raise InputError(where, "hbar must be positive")
    total = 0j
    for ep in paths:
        if not ep.van_vleck >= 0:
            raise InputError(where, "Van Vleck weights must be non-negative")
        total += math.sqrt(ep.van_vleck) * complex(math.cos(ep.action / hbar), math.sin(ep.action / hbar))
    return total


def semiclassical_green(sys: ConstrainedSystem, q1, q2, T: float, cfg: ShootingConfig = ShootingConfig(),
                        paths: Optional[Sequence[ExtremalPath]] = None) -> complex:
    """Van Vleck–Gutzwiller propagator (2πiħ)^{−n/2} Σ Δ^{1/2} e^{iR/ħ} (no Maslov phases)."""
    if paths is None:
        paths = find_extremals_fixed_time(sys, q1, q2, T, cfg)
    if not paths:
        return 0j
    return (2j * math.pi * sys.hbar) ** (-sys.dim / 2) * semiclassical_amplitude(paths, sys.hbar)


def semiclassical_kernel(sys: ConstrainedSystem, cfg: ShootingConfig = ShootingConfig(), T: Optional[float] = None
                         ) -> AmplitudeKernel:
    """Kernel backed by shooting.

    Without ``T`` it evaluates Σ Δ^{1/2} e^{iS/ħ} over energy-shell extremals;
    with ``T`` it evaluates the fixed-time propagator of :func:`semiclassical_green`.
    """
    if T is None:
        def ev(a, b):
            paths = find_extremals(sys, a, b, cfg)
            return semiclassical_amplitude(paths, sys.hbar) if paths else 0j
    else:
        def ev(a, b):
            return semiclassical_green(sys, a, b, T, cfg)
    return AmplitudeKernel(ev, "semiclassical", 0.0, sys.name)


# -- composition ---------------------------------------------------------------------------


def _eval_rows(W, qa, pts: np.ndarray, first: bool) -> np.ndarray:
    if hasattr(W, "row") and hasattr(W, "grid"):
        try:
            row = W.row(qa) if first else W.column(qa)
            return np.asarray(row).reshape(-1)[[W.grid.index(x) for x in pts]]
        except InputError:
            pass
    if first:
        return np.array([W(qa, x) for x in pts])
    return np.array([W(x, qa) for x in pts])


def compose_semigroup(W_ab, W_bc, intermediate: GridHilbert, check_resolution: bool = True) -> AmplitudeKernel:
    """Kernel (a, c) ↦ Σ_b W_ab(a, b) W_bc(b, c) μ over the intermediate grid.

    The integrand's phase advance per cell is checked; above π the
    quadrature cannot resolve the oscillation and a ResolutionError is raised.
    Kernels that can be evaluated off-grid are also probed at cell midpoints
    so that aliased phase advances are detected.
    """
    pts = intermediate.points
    mu = intermediate.cell_volume

    def ev(a, c):
        f = _eval_rows(W_ab, a, pts, True)
        g = _eval_rows(W_bc, c, pts, False)
        integrand = f * g
        if check_resolution:
            _check_resolution(integrand, intermediate, W_ab, W_bc, a, c)
        return complex(np.sum(integrand) * mu)

    return AmplitudeKernel(ev, "composed", 0.0, "composition")


def _phase_steps(vals: np.ndarray, axis: int) -> np.ndarray:
    z1 = np.take(vals, range(0, vals.shape[axis] - 1), axis=axis)
    z2 = np.take(vals, range(1, vals.shape[axis]), axis=axis)
    with np.errstate(all="ignore"):
        d = np.angle(z2 * np.conj(z1))
    big = (np.abs(z1) > 1e-12 * np.max(np.abs(vals))) & (np.abs(z2) > 1e-12 * np.max(np.abs(vals)))
    return np.where(big, d, 0.0)


def _check_resolution(integrand, grid, W_ab, W_bc, a, c):
    vals = integrand.reshape(grid.shape)
    worst = 0.0
    for ax in range(grid.ndim):
        worst = max(worst, float(np.max(np.abs(_phase_steps(vals, ax)), initial=0.0)))
    if not (hasattr(W_ab, "grid") or hasattr(W_bc, "grid")):
        # off-grid kernels: resolve each cell with a midpoint probe
        for ax in range(grid.ndim):
            h = grid.spacings[ax]
            mids = grid.points.copy()
            mids[:, ax] += 0.5 * h
            f = np.array([W_ab(a, x) for x in mids])
            g = np.array([W_bc(x, c) for x in mids])
            m = (f * g).reshape(grid.shape)
            z0 = vals
            with np.errstate(all="ignore"):
                half1 = np.angle(m * np.conj(z0))
                z1 = np.roll(z0, -1, axis=ax)
                half2 = np.angle(z1 * np.conj(m))
            tot = np.abs(half1 + half2)
            sl = [slice(None)] * grid.ndim
            sl[ax] = slice(0, grid.shape[ax] - 1)
            worst = max(worst, float(np.max(tot[tuple(sl)])))
    if worst > math.pi * (1 - 1e-9) or (worst > 0.95 * math.pi):
        raise ResolutionError("semiclassical.compose_semigroup",
                              f"intermediate grid too coarse: phase advance {worst:.3f} rad per cell exceeds π")
    return worst
