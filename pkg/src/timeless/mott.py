"""Bubble-chamber toy model.

A particle leaves the source in an unknown direction θ₀; ring j (radius r_j)
condenses a bubble at angle θ_j with amplitude g(θ_j − θ₀) e^{i k r_j}, and
the configuration amplitude is the coherent average over θ₀. The excitation
kernel is the von Mises form g(φ) = exp((cos φ − 1)/σ²), a periodic Gaussian
of width σ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError

DEFAULT_QUADRATURE = 4096


@dataclass(frozen=True)
class MottModel:
    rings: int = 6
    radii: tuple = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    sigma_theta: float = 0.05
    k: float = 10.0

    def __post_init__(self):
        where = "mott.MottModel"
        r = tuple(float(x) for x in self.radii)
        object.__setattr__(self, "radii", r)
        if int(self.rings) != self.rings or self.rings < 1:
            raise InputError(where, "rings must be a positive integer")
        if len(r) != self.rings:
            raise InputError(where, f"expected {self.rings} radii, got {len(r)}")
        if not all(math.isfinite(x) and x > 0 for x in r) or any(b <= a for a, b in zip(r, r[1:])):
            raise InputError(where, "radii must be positive and strictly increasing")
        if not 0 < self.sigma_theta < math.pi:
            raise InputError(where, f"sigma_theta must lie in (0, π), got {self.sigma_theta}")
        if not (math.isfinite(self.k) and self.k > 0):
            raise InputError(where, "k must be positive")

    @classmethod
    def default(cls, **changes) -> "MottModel":
        m = cls()
        if "rings" in changes and "radii" not in changes:
            changes["radii"] = tuple(float(j) for j in range(1, changes["rings"] + 1))
        from dataclasses import replace

        return replace(m, **changes)


@dataclass(frozen=True)
class BubbleConfig:
    """Bubbles as (ring index, angle) pairs; rings are 1-based, angles reduced to [0, 2π)."""

    bubbles: tuple = field(default=())

    def __post_init__(self):
        out = []
        for item in self.bubbles:
            try:
                ring, ang = item
            except (TypeError, ValueError):
                raise InputError("mott.BubbleConfig", f"bubble must be (ring, angle), got {item!r}") from None
            if int(ring) != ring:
                raise InputError("mott.BubbleConfig", f"ring index must be an integer, got {ring!r}")
            if not math.isfinite(ang):
                raise InputError("mott.BubbleConfig", "bubble angle must be finite")
            out.append((int(ring), float(ang) % (2 * math.pi)))
        rings = [r for r, _ in out]
        if len(set(rings)) != len(rings):
            raise InputError("mott.BubbleConfig", f"duplicate ring index in {rings}")
        object.__setattr__(self, "bubbles", tuple(out))

    def check(self, model: MottModel) -> None:
        for r, _ in self.bubbles:
            if not 1 <= r <= model.rings:
                raise InputError("mott.BubbleConfig", f"ring {r} outside 1..{model.rings}")

    @classmethod
    def collinear(cls, n: int, theta: float = 0.0) -> "BubbleConfig":
        return cls(tuple((j, theta) for j in range(1, n + 1)))


def kernel(phi, sigma: float) -> np.ndarray:
    """g(φ) = exp((cos φ − 1)/σ²)."""
    return np.exp((np.cos(phi) - 1.0) / sigma**2)


def _nodes(quadrature_points: int) -> np.ndarray:
    if int(quadrature_points) != quadrature_points or quadrature_points < 256:
        raise InputError("mott.mott_amplitude", "quadrature_points must be an integer ≥ 256")
    return 2 * np.pi * np.arange(int(quadrature_points)) / quadrature_points


def _profile(model: MottModel, bubbles, theta0: np.ndarray) -> np.ndarray:
    """Π_j g(θ_j − θ₀) on the θ₀ nodes (real, without radial phases)."""
    out = np.ones_like(theta0)
    for _, ang in bubbles:
        out = out * kernel(ang - theta0, model.sigma_theta)
    return out


def _phase(model: MottModel, bubbles) -> complex:
    return complex(np.exp(1j * model.k * sum(model.radii[r - 1] for r, _ in bubbles)))


def mott_amplitude(model: MottModel, config: BubbleConfig, quadrature_points: int = DEFAULT_QUADRATURE) -> complex:
    """W(S) = (1/2π)∫dθ₀ Π_j g(θ_j − θ₀) e^{i k r_j}, periodic trapezoid rule."""
    if not isinstance(config, BubbleConfig):
        config = BubbleConfig(tuple(config))
    config.check(model)
    th = _nodes(quadrature_points)
    return _phase(model, config.bubbles) * float(np.mean(_profile(model, config.bubbles, th)))


def _check_counts(model: MottModel, n: int, n_prime: int) -> None:
    if int(n) != n or int(n_prime) != n_prime or not 1 <= n_prime <= n <= model.rings:
        raise InputError("mott.mott_conditional_residual", f"need 1 ≤ n' ≤ n ≤ {model.rings}, got n={n}, n'={n_prime}")


@dataclass(frozen=True)
class MottConditional:
    """P_n, P_{n'} and the leading-order conditional P(n | n')."""

    n: int
    n_prime: int
    P_n: float
    P_n_prime: float
    P_conditional: float
    amplitude_conditional: complex

    @property
    def residual(self) -> float:
        return abs(self.P_n - self.P_n_prime * self.P_conditional) / self.P_n


def mott_conditional(model: MottModel, n: int, n_prime: int, theta: float = 0.0,
                     quadrature_points: int = DEFAULT_QUADRATURE) -> MottConditional:
    """Conditional amplitude of bubbles n'+1..n given bubbles 1..n' at θ.

    The first n' bubbles fix the emission direction to leading order: θ₀ is
    distributed as a wrapped Gaussian at θ with width σ/√n' (the Gaussian
    approximation of their normalized overlap Π g). The conditional
    amplitude averages the remaining bubbles over that distribution.
    """
    _check_counts(model, n, n_prime)
    full = BubbleConfig.collinear(n, theta)
    first = BubbleConfig.collinear(n_prime, theta)
    W_n = mott_amplitude(model, full, quadrature_points)
    W_np = mott_amplitude(model, first, quadrature_points)
    if n_prime == n:
        return MottConditional(n, n_prime, abs(W_n) ** 2, abs(W_np) ** 2, 1.0, 1.0 + 0j)
    rest = full.bubbles[n_prime:]
    th = _nodes(quadrature_points)
    s = model.sigma_theta / math.sqrt(n_prime)
    d = (th - theta + np.pi) % (2 * np.pi) - np.pi
    images = np.arange(-3, 4)[:, None] * 2 * np.pi
    post = np.sum(np.exp(-((d[None, :] + images) ** 2) / (2 * s * s)), axis=0)
    post = post / np.sum(post)
    amp = _phase(model, rest) * float(np.sum(post * _profile(model, rest, th)))
    return MottConditional(n, n_prime, abs(W_n) ** 2, abs(W_np) ** 2, abs(amp) ** 2, amp)


def mott_conditional_residual(model: MottModel, n: int, n_prime: int, theta: float = 0.0,
                              quadrature_points: int = DEFAULT_QUADRATURE) -> float:
    """|P_n − P_{n'}·P(n|n')| / P_n; zero when n' = n."""
    c = mott_conditional(model, n, n_prime, theta, quadrature_points)
    if n_prime == n:
        return 0.0
    return float(c.residual)


def collinearity_ratio(model: MottModel, n: int, bend: float, quadrature_points: int = DEFAULT_QUADRATURE) -> float:
    """|W(n collinear)|² / |W(last bubble turned by ``bend``)|²."""
    if int(n) != n or not 1 <= n <= model.rings:
        raise InputError("mott.collinearity_ratio", f"n must lie in 1..{model.rings}")
    straight = BubbleConfig.collinear(n)
    bent = BubbleConfig(straight.bubbles[:-1] + ((n, bend),))
    a = abs(mott_amplitude(model, straight, quadrature_points)) ** 2
    b = abs(mott_amplitude(model, bent, quadrature_points)) ** 2
    if b == 0.0:
        return math.inf
    return float(a / b)


def bend_sweep(model: MottModel, n: int, bends: Sequence[float], quadrature_points: int = DEFAULT_QUADRATURE) -> list:
    """Rows (bend, P(bent)) with the last of n collinear bubbles turned."""
    straight = BubbleConfig.collinear(n)
    rows = []
    for b in bends:
        cfg = BubbleConfig(straight.bubbles[:-1] + ((n, float(b)),))
        rows.append((float(b), abs(mott_amplitude(model, cfg, quadrature_points)) ** 2))
    return rows
