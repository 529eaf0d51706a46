"""Laws of the instant: momentum-degree classification of phase-space
generators, numeric Poisson brackets and Lie-algebra closure checks."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .configspace import SymmetryGenerator, catalog_generator
from .dynamics import ConstrainedSystem
from .errors import DegenerateSampleWarning, InputError, NumericError, TimelessError
from .expr import ExpressionAst, _is_num, parse_expression

FD_STEP = 1e-6


@dataclass(frozen=True)
class GeneratorFunctional:
    """F(q, p) on a 2n-dimensional phase space with its gradients.

    ``grad_q``/``grad_p`` may be None, in which case central differences with
    step 1e-6 are used. ``momentum_degree`` is an int or "unknown".
    """

    name: str
    dim: int
    evaluator: Callable[[np.ndarray, np.ndarray], float]
    grad_q: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    grad_p: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    momentum_degree: Union[int, str] = "unknown"

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise InputError("instantlaws.GeneratorFunctional", "dim must be a positive integer")
        if not (self.momentum_degree == "unknown" or (isinstance(self.momentum_degree, int) and self.momentum_degree >= 0)):
            raise InputError("instantlaws.GeneratorFunctional", "momentum_degree must be a non-negative int or 'unknown'")

    def __call__(self, q, p) -> float:
        return float(self.evaluator(*self._point(q, p)))

    def _point(self, q, p):
        q = np.asarray(q, dtype=float).reshape(-1)
        p = np.asarray(p, dtype=float).reshape(-1)
        if q.size != self.dim or p.size != self.dim:
            raise InputError("instantlaws.poisson_bracket", f"{self.name}: expected q, p of length {self.dim}")
        return q, p

    def _fd(self, q, p, wrt: int) -> np.ndarray:
        x = [q.copy(), p.copy()]
        out = np.empty(self.dim)
        for a in range(self.dim):
            h = FD_STEP * max(1.0, abs(x[wrt][a]))
            x[wrt][a] += h
            fp = float(self.evaluator(x[0], x[1]))
            x[wrt][a] -= 2 * h
            fm = float(self.evaluator(x[0], x[1]))
            x[wrt][a] += h
            out[a] = (fp - fm) / (2 * h)
        return out

    def gradients(self, q, p) -> tuple:
        """(∂F/∂q, ∂F/∂p) at (q, p); NumericError if either is not finite."""
        q, p = self._point(q, p)
        try:
            gq = self._fd(q, p, 0) if self.grad_q is None else np.asarray(self.grad_q(q, p), dtype=float).reshape(-1)
            gp = self._fd(q, p, 1) if self.grad_p is None else np.asarray(self.grad_p(q, p), dtype=float).reshape(-1)
        except TimelessError as e:
            raise NumericError("instantlaws.poisson_bracket",
                               f"{self.name}: gradient failed at q={q.tolist()}, p={p.tolist()}: {e.detail}") from e
        if not (np.all(np.isfinite(gq)) and np.all(np.isfinite(gp))):
            raise NumericError("instantlaws.poisson_bracket",
                               f"{self.name}: non-finite gradient at q={q.tolist()}, p={p.tolist()}")
        return gq, gp


# -- constructors ------------------------------------------------------------------


def from_symmetry(gen: SymmetryGenerator, name: Optional[str] = None) -> GeneratorFunctional:
    """Momentum functional F = p·(A q + b) of an affine symmetry, exact gradients."""
    if gen.matrix is None:
        raise InputError("instantlaws.from_symmetry", f"{gen.name}: only affine generators have a catalog functional")
    A, b = gen.matrix, gen.offset
    return GeneratorFunctional(
        name or gen.name, A.shape[0],
        lambda q, p: float(p @ (A @ q + b)),
        lambda q, p: A.T @ p,
        lambda q, p: A @ q + b,
        1,
    )


def momentum_component(dim: int, i: int) -> GeneratorFunctional:
    """F = p_i: the degenerate constraint p = 0, one component at a time."""
    if not 0 <= i < dim:
        raise InputError("instantlaws.momentum_component", f"component {i + 1} outside 1..{dim}")
    e = np.zeros(dim)
    e[i] = 1.0
    return GeneratorFunctional(f"null:{i + 1}", dim, lambda q, p: float(p[i]), lambda q, p: np.zeros(dim),
                               lambda q, p: e.copy(), 1)


def from_system(sys: ConstrainedSystem, name: Optional[str] = None) -> GeneratorFunctional:
    """The canonical constraint H = ½p·M⁻¹·p + V − E of ``sys``."""
    return GeneratorFunctional(
        name or sys.name, sys.dim,
        lambda q, p: float(sys.hamiltonian(q, p)),
        lambda q, p: sys.dH_dq(q, p),
        lambda q, p: sys.dH_dp(q, p),
        2,
    )


def _degree_in_p(ast: ExpressionAst, p_names: Sequence[str], limit: int = 4) -> Union[int, str]:
    """Polynomial degree in p read off symbolic derivatives; "unknown" beyond ``limit``."""
    layer = [ast]
    for d in range(limit + 1):
        if all(_is_num(t.root, 0.0) for t in layer):
            return max(d - 1, 0)
        layer = [t.derivative(n) for t in layer for n in p_names if not _is_num(t.root, 0.0)]
    return "unknown"


def from_expression(src: str, dim: int, name: Optional[str] = None) -> GeneratorFunctional:
    """F(q, p) from an expression over q1..qn, p1..pn with symbolic gradients."""
    qn = [f"q{i + 1}" for i in range(dim)]
    pn = [f"p{i + 1}" for i in range(dim)]
    ast = parse_expression(src, qn + pn)
    names = qn + pn
    f = ast.compile(names)
    dq = [ast.derivative(n).compile(names) for n in qn]
    dp = [ast.derivative(n).compile(names) for n in pn]

    def ev(q, p):
        return float(f(*q, *p))

    def gq(q, p):
        return np.array([float(g(*q, *p)) for g in dq])

    def gp(q, p):
        return np.array([float(g(*q, *p)) for g in dp])

    return GeneratorFunctional(name or src, dim, ev, gq, gp, _degree_in_p(ast, pn))


def catalog_functional(name: str, n_particles: int, space_dim: int) -> GeneratorFunctional:
    """Catalog by name.

    ``translation:i``, ``rotation:ij`` and ``dilatation`` as in
    ``configspace.catalog_generator``; ``Lx``, ``Ly``, ``Lz`` (rotations of
    the 23, 31 and 12 planes), ``D`` (dilatation), ``Px``/``Py``/``Pz``
    (total momenta), ``null:i`` (F = p_i) and ``kinetic`` (½|p|²).
    """
    alias = {"Lx": "rotation:23", "Ly": "rotation:31", "Lz": "rotation:12", "D": "dilatation",
             "Px": "translation:1", "Py": "translation:2", "Pz": "translation:3"}
    n = n_particles * space_dim
    kind, _, arg = name.partition(":")
    if kind == "null":
        if not arg.isdigit():
            raise InputError("instantlaws.catalog_functional", f"bad component in {name!r}")
        return momentum_component(n, int(arg) - 1)
    if name == "kinetic":
        return GeneratorFunctional("kinetic", n, lambda q, p: 0.5 * float(p @ p), lambda q, p: np.zeros(n),
                                   lambda q, p: p.copy(), 2)
    return from_symmetry(catalog_generator(alias.get(name, name), n_particles, space_dim), name)


# -- brackets and classification ----------------------------------------------------------


def poisson_bracket(f: GeneratorFunctional, g: GeneratorFunctional, q, p) -> float:
    """{f, g} = Σ_a ∂f/∂q_a ∂g/∂p_a − ∂f/∂p_a ∂g/∂q_a."""
    if f.dim != g.dim:
        raise InputError("instantlaws.poisson_bracket", f"dimension mismatch: {f.dim} vs {g.dim}")
    fq, fp = f.gradients(q, p)
    gq, gp = g.gradients(q, p)
    return float(fq @ gp - fp @ gq)


@dataclass(frozen=True)
class InstantVerdict:
    instant_law: bool
    evidence: float


def _check_samples(samples: int, minimum: int, where: str) -> None:
    if int(samples) != samples or samples < minimum:
        raise InputError(where, f"samples must be an integer ≥ {minimum}")


def is_instant_law(f: GeneratorFunctional, samples: int = 50, seed: int = 0, momenta: int = 4,
                   tol: float = 1e-8) -> InstantVerdict:
    """Spread of the configuration flow δq = ∂f/∂p over several random p at fixed q.

    The evidence is max over sampled q of max_a (max − min) of δq_a across p;
    the generator is an instant law iff it is ≤ ``tol``.
    """
    _check_samples(samples, 10, "instantlaws.is_instant_law")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(int(samples)):
        q = rng.normal(size=f.dim)
        flows = np.array([f.gradients(q, rng.normal(size=f.dim))[1] for _ in range(momenta)])
        worst = max(worst, float(np.max(np.ptp(flows, axis=0))))
    return InstantVerdict(bool(worst <= tol), worst)


def is_split_law(f: GeneratorFunctional, samples: int = 50, seed: int = 0, points: int = 4,
                 tol: float = 1e-8) -> InstantVerdict:
    """Stricter split criterion: δq depends on q alone and δp = −∂f/∂q on p alone.

    The evidence is the larger of the δq spread across p at fixed q and the
    δp spread across q at fixed p.
    """
    _check_samples(samples, 10, "instantlaws.is_split_law")
    rng = np.random.default_rng(seed)
    worst = is_instant_law(f, samples, seed, points, tol).evidence
    for _ in range(int(samples)):
        p = rng.normal(size=f.dim)
        kicks = np.array([f.gradients(rng.normal(size=f.dim), p)[0] for _ in range(points)])
        worst = max(worst, float(np.max(np.ptp(kicks, axis=0))))
    return InstantVerdict(bool(worst <= tol), worst)


# -- closure -----------------------------------------------------------------------


@dataclass(frozen=True)
class ClosureReport:
    structure_constants: np.ndarray     # c[i, j, k]: {F_i, F_j} = Σ_k c[i, j, k] F_k
    max_residual: float
    constancy_spread: float
    samples_used: int
    discarded: int
    tol: float

    @property
    def closes(self) -> bool:
        return self.max_residual <= self.tol

    @property
    def lie_algebra(self) -> bool:
        return self.closes and self.constancy_spread <= self.tol

    def to_json(self) -> dict:
        return {
            "structure_constants": self.structure_constants.tolist(),
            "max_residual": self.max_residual,
            "constancy_spread": self.constancy_spread,
            "samples_used": self.samples_used,
            "discarded": self.discarded,
            "closes": self.closes,
            "lie_algebra": self.lie_algebra,
        }


def closure_check(gens: Sequence[GeneratorFunctional], samples: int = 100, seed: int = 0,
                  tol: float = 1e-8, degenerate: float = 1e-12) -> ClosureReport:
    """Fit {F_i, F_j} = Σ_k c^k_ij F_k over random phase points.

    One value per point cannot fix k coefficients, so c is fitted by least
    squares over all usable points; the residual is the largest pointwise
    misfit. The sample is also cut into consecutive blocks of 2k points,
    each fitted on its own, and the constancy spread is the largest
    deviation of a block fit from the global fit. Points where every F_k is
    below ``degenerate`` are discarded with a warning.
    """
    where = "instantlaws.closure_check"
    k = len(gens)
    if k < 2:
        raise InputError(where, "need at least two generators")
    _check_samples(samples, 20, where)
    dims = {g.dim for g in gens}
    if len(dims) != 1:
        raise InputError(where, f"generators live on different phase spaces: {sorted(dims)}")
    n = dims.pop()
    rng = np.random.default_rng(seed)
    F, B = [], []
    discarded = 0
    for _ in range(int(samples)):
        q, p = rng.normal(size=n), rng.normal(size=n)
        vals = np.array([g(q, p) for g in gens])
        if np.max(np.abs(vals)) < degenerate:
            discarded += 1
            continue
        grads = [g.gradients(q, p) for g in gens]
        br = np.array([[gi[0] @ gj[1] - gi[1] @ gj[0] for gj in grads] for gi in grads])
        F.append(vals)
        B.append(br.reshape(-1))
    if discarded:
        warnings.warn(f"{where}: discarded {discarded} degenerate sample(s)", DegenerateSampleWarning, stacklevel=2)
    if not F:
        raise InputError(where, "every sample is degenerate")
    F = np.array(F)
    B = np.array(B)
    c, _, _, _ = np.linalg.lstsq(F, B, rcond=None)
    resid = float(np.max(np.abs(F @ c - B)))
    block = 2 * k
    spread = 0.0
    for s in range(0, F.shape[0] - block + 1, block):
        cb, _, _, _ = np.linalg.lstsq(F[s:s + block], B[s:s + block], rcond=None)
        spread = max(spread, float(np.max(np.abs(cb - c))))
    C = c.T.reshape(k, k, k)
    return ClosureReport(C, resid, spread, int(F.shape[0]), discarded, float(tol))


def similarity_generators_2d(n_particles: int = 2) -> list:
    """[Lz, D, Px, Py] for n particles in the plane."""
    return [catalog_functional(nm, n_particles, 2) for nm in ("Lz", "D", "Px", "Py")]
