"""Constrained Hamiltonian systems, actions and symplectic flow."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .configspace import KineticMetric, as_coords
from .errors import GeometryError, InputError, NumericError
from .expr import compile_potential

ON_SHELL_TOL = 1e-8


# -- potentials ----------------------------------------------------------------


@dataclass(frozen=True)
class Potential:
    """V(q) and its gradient, both vectorized over leading axes of q (..., n).

    ``separable`` holds per-axis 1D callables when V(q) = Σ_a V_a(q_a).
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    label: str = "custom"
    separable: Optional[tuple] = None

    def __call__(self, q):
        return self.value(np.asarray(q, dtype=float))

    def grad(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.gradient is not None:
            return np.asarray(self.gradient(q), dtype=float)
        out = np.empty_like(q)
        for i in range(q.shape[-1]):
            h = 1e-6 * np.maximum(1.0, np.abs(q[..., i]))
            qp = q.copy()
            qm = q.copy()
            qp[..., i] += h
            qm[..., i] -= h
            out[..., i] = (self.value(qp) - self.value(qm)) / (2 * h)
        return out


def make_potential(spec, dim: int, params: Optional[Mapping[str, float]] = None) -> Potential:
    """Potential from a catalog name or an expression string.

    Catalog (parameters in brackets, defaults shown):

    - ``free``
    - ``harmonic`` [omega=1, mass=1]: ½ m ω² |q|²
    - ``double_well`` [height=1, a=1, omega_perp=1]: height (q1² − a²)² + ½ ω⊥² Σ_{i>1} q_i²
    - ``gaussian_barrier`` [height=1, width=1, center=0]: height exp(−|q − c|²/(2 w²))
    """
    params = dict(params or {})
    where = "dynamics.make_potential"
    if isinstance(spec, Potential):
        return spec
    if not isinstance(spec, str):
        raise InputError(where, "potential must be a catalog name or an expression string")

    def take(name, default):
        v = params.pop(name, default)
        if isinstance(v, (list, tuple)):
            return np.asarray(v, dtype=float)
        return float(v)

    if spec == "free":
        pot = Potential(lambda q: np.zeros(np.shape(q)[:-1]), lambda q: np.zeros(np.shape(q)), "free",
                        tuple(lambda x: np.zeros_like(x) for _ in range(dim)))
    elif spec == "harmonic":
        w, m = take("omega", 1.0), take("mass", 1.0)
        k = m * w * w
        pot = Potential(lambda q: 0.5 * k * np.sum(q * q, axis=-1), lambda q: k * q, f"harmonic(omega={w})",
                        tuple(lambda x: 0.5 * k * x * x for _ in range(dim)))
    elif spec == "double_well":
        h, a, wp = take("height", 1.0), take("a", 1.0), take("omega_perp", 1.0)

        def v(q):
            out = h * (q[..., 0] ** 2 - a * a) ** 2
            if q.shape[-1] > 1:
                out = out + 0.5 * wp * wp * np.sum(q[..., 1:] ** 2, axis=-1)
            return out

        def g(q):
            out = wp * wp * q.copy()
            out[..., 0] = 4 * h * q[..., 0] * (q[..., 0] ** 2 - a * a)
            return out

        axes = (lambda x: h * (x * x - a * a) ** 2,) + tuple(lambda x: 0.5 * wp * wp * x * x for _ in range(dim - 1))
        pot = Potential(v, g, f"double_well(height={h}, a={a})", axes)
    elif spec == "gaussian_barrier":
        h, w = take("height", 1.0), take("width", 1.0)
        c = np.broadcast_to(np.asarray(take("center", 0.0), dtype=float), (dim,)).copy()

        def v(q):
            return h * np.exp(-np.sum((q - c) ** 2, axis=-1) / (2 * w * w))

        def g(q):
            return -(q - c) / (w * w) * v(q)[..., None]

        pot = Potential(v, g, f"gaussian_barrier(height={h}, width={w})", None if dim > 1 else (lambda x: h * np.exp(-((x - c[0]) ** 2) / (2 * w * w)),))
    else:
        if params:
            raise InputError(where, "expression potentials take no parameters")
        V = compile_potential(spec, dim)
        ast = V.expression
        names = [f"q{i + 1}" for i in range(dim)]
        # unchecked: the flow reports non-finite states itself
        derivs = [ast.derivative(nm).compile(names, checked=False) for nm in names]

        def g(q, derivs=derivs):
            cols = [q[..., i] for i in range(dim)]
            out = np.empty(q.shape)
            with np.errstate(all="ignore"):
                for i, d in enumerate(derivs):
                    out[..., i] = d(*cols)
            return out

        sep = None
        if dim == 1:
            sep = (lambda x, V=V: V(np.asarray(x)[..., None]),)
        return Potential(V, g, spec, sep)
    if params:
        raise InputError(where, f"unknown parameters for {spec!r}: {sorted(params)}")
    return pot


# -- systems -------------------------------------------------------------------


@dataclass(frozen=True)
class ConstrainedSystem:
    """Reparametrization-invariant system with canonical constraint

        H(q, p) = ½ p·M(q)⁻¹·p + V(q) − E,

    always stored as ``constraints[0]``; extra constraints follow it.
    """

    dim: int
    metric: KineticMetric
    potential: Potential
    energy: float = 0.0
    hbar: float = 1.0
    extra_constraints: tuple = ()
    name: str = "system"

    def __post_init__(self):
        where = "dynamics.ConstrainedSystem"
        if not self.hbar > 0:
            raise InputError(where, f"hbar must be positive, got {self.hbar}")
        if self.metric.dim != self.dim:
            raise InputError(where, "metric dimension does not match dim")
        if not isinstance(self.potential, Potential):
            object.__setattr__(self, "potential", make_potential(self.potential, self.dim))

    @classmethod
    def simple(cls, dim: int, potential="free", energy: float = 0.0, hbar: float = 1.0, mass=1.0,
               params: Optional[Mapping] = None, name: str = "system") -> "ConstrainedSystem":
        m = np.broadcast_to(np.asarray(mass, dtype=float), (dim,))
        return cls(dim, KineticMetric.from_matrix(np.diag(m)), make_potential(potential, dim, params), energy, hbar, (), name)

    def with_(self, **changes) -> "ConstrainedSystem":
        from dataclasses import replace

        return replace(self, **changes)

    @property
    def constraints(self) -> tuple:
        return (self.hamiltonian,) + tuple(self.extra_constraints)

    def inverse_metric(self, q: np.ndarray) -> np.ndarray:
        """M(q)⁻¹ for q of shape (..., n); returns (..., n, n)."""
        if self.metric.is_constant:
            return np.linalg.inv(self.metric.constant)
        q = np.asarray(q, dtype=float)
        flat = q.reshape(-1, self.dim)
        out = np.empty((flat.shape[0], self.dim, self.dim))
        for k, qi in enumerate(flat):
            m = np.asarray(self.metric.evaluator(qi), dtype=float)
            try:
                if np.linalg.eigvalsh(m)[0] <= 0:
                    raise np.linalg.LinAlgError
                out[k] = np.linalg.inv(m)
            except np.linalg.LinAlgError:
                raise GeometryError("dynamics.inverse_metric", f"M(q) not invertible at q={qi.tolist()}") from None
        return out.reshape(q.shape[:-1] + (self.dim, self.dim))

    def kinetic(self, q, p) -> np.ndarray:
        minv = self.inverse_metric(q)
        p = np.asarray(p, dtype=float)
        return 0.5 * np.einsum("...i,...ij,...j->...", p, minv, p)

    def hamiltonian(self, q, p) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return self.kinetic(q, p) + self.potential(q) - self.energy

    def dH_dp(self, q, p) -> np.ndarray:
        minv = self.inverse_metric(q)
        return np.einsum("...ij,...j->...i", minv, np.asarray(p, dtype=float))

    def dH_dq(self, q, p) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        g = self.potential.grad(q)
        if self.metric.is_constant:
            return g
        out = np.array(g, dtype=float)
        for i in range(self.dim):
            h = 1e-6 * np.maximum(1.0, np.abs(q[..., i]))
            qp = q.copy()
            qm = q.copy()
            qp[..., i] += h
            qm[..., i] -= h
            out[..., i] += (self.kinetic(qp, p) - self.kinetic(qm, p)) / (2 * h)
        return out


def constraint_values(sys: ConstrainedSystem, q, p) -> np.ndarray:
    """(H¹, …, Hᵏ) at (q, p); the first entry is the canonical constraint."""
    qc = as_coords(q, sys.dim, "dynamics.constraint_values")
    pc = as_coords(p, sys.dim, "dynamics.constraint_values")
    return np.array([float(c(qc, pc)) for c in sys.constraints])


# -- paths and actions -----------------------------------------------------------


@dataclass(frozen=True)
class PhasePath:
    """Sampled curve in phase space. ``q`` and ``p`` have shape (m, n)."""

    q: np.ndarray
    p: np.ndarray
    tau: np.ndarray
    drift_constant: Optional[float] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        where = "dynamics.PhasePath"
        q = np.array(self.q, dtype=float)
        p = np.array(self.p, dtype=float)
        tau = np.array(self.tau, dtype=float).reshape(-1)
        if q.ndim == 1:
            q = q[:, None]
        if p.ndim == 1:
            p = p[:, None]
        if q.shape != p.shape or q.shape[0] != tau.size:
            raise InputError(where, "samples and parameter values must have equal length")
        if tau.size < 2:
            raise InputError(where, "a path needs at least 2 samples")
        if np.any(np.diff(tau) <= 0):
            raise InputError(where, "parameter values must be strictly increasing")
        for a in (q, p, tau):
            a.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "tau", tau)

    @property
    def samples(self) -> list:
        return list(zip(self.q, self.p))

    @property
    def dim(self) -> int:
        return self.q.shape[1]

    def __len__(self):
        return self.tau.size


def action_unparametrized(path: PhasePath) -> float:
    """S = ∫ p·dq by the midpoint rule over segments."""
    if not isinstance(path, PhasePath) or len(path) < 2:
        raise InputError("dynamics.action_unparametrized", "path needs at least 2 samples")
    pm = 0.5 * (path.p[1:] + path.p[:-1])
    return float(np.sum(pm * np.diff(path.q, axis=0)))


def _as_function(f) -> Callable[[np.ndarray], np.ndarray]:
    if callable(f):
        return lambda t: np.broadcast_to(np.asarray(f(t), dtype=float), np.shape(t))
    c = float(f)
    return lambda t: np.full(np.shape(t), c)


def action_parametrized(path: PhasePath, multipliers: Sequence, sys: ConstrainedSystem) -> float:
    """Discretized ∫dτ (p·q̇ − Σᵢ Nᵢ(τ) Hⁱ(q, p)).

    p·q̇ dτ uses the same midpoint rule as the unparametrized action, so the
    two agree exactly on-shell up to the constraint term.
    """
    where = "dynamics.action_parametrized"
    cons = sys.constraints
    if len(multipliers) != len(cons):
        raise InputError(where, f"expected {len(cons)} multipliers, got {len(multipliers)}")
    if path.dim != sys.dim:
        raise InputError(where, "path and system dimensions differ")
    s = action_unparametrized(path)
    dtau = np.diff(path.tau)
    tmid = 0.5 * (path.tau[1:] + path.tau[:-1])
    for N, c in zip(multipliers, cons):
        vals = np.array([float(c(qk, pk)) for qk, pk in zip(path.q, path.p)])
        s -= float(np.sum(_as_function(N)(tmid) * 0.5 * (vals[1:] + vals[:-1]) * dtau))
    return s


def resample_path(path: PhasePath, tau_new: np.ndarray) -> PhasePath:
    """Piecewise-linear resampling in τ (keeps the same geometric polyline)."""
    tau_new = np.asarray(tau_new, dtype=float)
    if tau_new[0] < path.tau[0] - 1e-15 or tau_new[-1] > path.tau[-1] + 1e-15:
        raise InputError("dynamics.resample_path", "new parameters outside the path's range")
    q = np.stack([np.interp(tau_new, path.tau, path.q[:, i]) for i in range(path.dim)], axis=1)
    p = np.stack([np.interp(tau_new, path.tau, path.p[:, i]) for i in range(path.dim)], axis=1)
    return PhasePath(q, p, tau_new, path.drift_constant, dict(path.meta))


def refine_path(path: PhasePath, factor: int = 4, warp: float = 0.3) -> PhasePath:
    """Insert ``factor − 1`` monotonically warped points inside every segment.

    The original nodes are kept, so the polyline (and hence the midpoint
    action) is unchanged: this is the reparametrization used by the
    invariance checks.
    """
    if factor < 1:
        raise InputError("dynamics.refine_path", "factor must be ≥ 1")
    u = np.arange(factor) / factor
    u = u + warp * np.sin(np.pi * u) * u * (1 - u)  # monotone for |warp| < 1
    t0 = path.tau[:-1, None]
    dt = np.diff(path.tau)[:, None]
    tau = np.concatenate([(t0 + u[None, :] * dt).reshape(-1), path.tau[-1:]])
    return resample_path(path, tau)


def arc_length_resample(q: np.ndarray, samples: int = 64) -> np.ndarray:
    """Resample a polyline of points (m, n) to ``samples`` points equally spaced in Euclidean arc length."""
    q = np.asarray(q, dtype=float)
    seg = np.linalg.norm(np.diff(q, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0.0:
        return np.repeat(q[:1], samples, axis=0)
    target = np.linspace(0.0, s[-1], samples)
    return np.stack([np.interp(target, s, q[:, i]) for i in range(q.shape[1])], axis=1)


# -- symplectic flow -------------------------------------------------------------


def leapfrog_batch(sys: ConstrainedSystem, q: np.ndarray, p: np.ndarray, n_steps: int, h, record: bool = False,
                   fixed_point_iters: int = 50, fixed_point_tol: float = 1e-13):
    """Advance a batch of phase points (B, n) by ``n_steps`` steps of size ``h``.

    ``h`` may be a scalar or a (B,) array. Constant metrics use explicit
    Störmer–Verlet; otherwise the implicit generalized leapfrog is solved by
    fixed-point iteration. With ``record`` the full trajectories (n_steps+1, B, n)
    are returned.
    """
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    h = np.asarray(h, dtype=float)
    hh = h[..., None] if h.ndim else h
    traj_q = [q.copy()] if record else None
    traj_p = [p.copy()] if record else None
    const = sys.metric.is_constant
    if const:
        minv = np.linalg.inv(sys.metric.constant)
        grad = sys.potential.gradient or sys.potential.grad
        g = grad(q)
        for _ in range(n_steps):
            p = p - 0.5 * hh * g
            q = q + hh * (p @ minv.T)
            g = grad(q)
            p = p - 0.5 * hh * g
            if record:
                traj_q.append(q.copy())
                traj_p.append(p.copy())
    else:
        for _ in range(n_steps):
            ph = p.copy()
            for _ in range(fixed_point_iters):
                new = p - 0.5 * hh * sys.dH_dq(q, ph)
                done = np.max(np.abs(new - ph)) <= fixed_point_tol * (1 + np.max(np.abs(ph)))
                ph = new
                if done:
                    break
            v0 = sys.dH_dp(q, ph)
            q1 = q + hh * v0
            for _ in range(fixed_point_iters):
                new = q + 0.5 * hh * (v0 + sys.dH_dp(q1, ph))
                done = np.max(np.abs(new - q1)) <= fixed_point_tol * (1 + np.max(np.abs(q1)))
                q1 = new
                if done:
                    break
            q = q1
            p = ph - 0.5 * hh * sys.dH_dq(q, ph)
            if record:
                traj_q.append(q.copy())
                traj_p.append(p.copy())
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise NumericError("dynamics.hamiltonian_flow", "trajectory left the finite range")
    if record:
        return np.array(traj_q), np.array(traj_p)
    return q, p


def hamiltonian_flow(sys: ConstrainedSystem, q0, p0, lapse=1.0, t_end: float = 1.0, dt: float = 1e-3) -> PhasePath:
    """Integrate q̇ = N ∂H/∂p, ṗ = −N ∂H/∂q from τ = 0 to ``t_end``.

    Steps are uniform in the lapse-weighted clock s = ∫N dτ with size at most
    ``dt``; the flow in s is autonomous, so (N, T) and (cN, T/c) produce the
    same steps. The returned path carries ``drift_constant`` C with
    max|H − H(0)| = C dt_s².
    """
    where = "dynamics.hamiltonian_flow"
    if not dt > 0:
        raise InputError(where, f"dt must be positive, got {dt}")
    if not t_end > 0:
        raise InputError(where, f"t_end must be positive, got {t_end}")
    q0 = as_coords(q0, sys.dim, where)
    p0 = as_coords(p0, sys.dim, where)
    if callable(lapse):
        tf = np.linspace(0.0, t_end, 4097)
        nf = _as_function(lapse)(tf)
        if np.any(nf <= 0) or not np.all(np.isfinite(nf)):
            raise InputError(where, "lapse must be positive and finite")
        sf = cumulative_trapezoid(nf, tf, initial=0.0)
        s_tot = float(sf[-1])
    else:
        if not float(lapse) > 0:
            raise InputError(where, "lapse must be positive")
        s_tot = float(lapse) * t_end
        sf = tf = None
    n = max(1, int(math.ceil(s_tot / dt - 1e-9)))
    hs = s_tot / n
    tq, tp = leapfrog_batch(sys, q0[None, :], p0[None, :], n, hs, record=True)
    tq, tp = tq[:, 0, :], tp[:, 0, :]
    s_k = hs * np.arange(n + 1)
    tau = s_k / float(lapse) if sf is None else np.interp(s_k, sf, tf)
    tau[-1] = t_end
    H = sys.hamiltonian(tq, tp)
    C = float(np.max(np.abs(H - H[0])) / hs**2)
    return PhasePath(tq, tp, tau, C, {"clock_step": hs, "steps": n})
