import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timeless.born_bayes import (Density, TheoryModel, born_density, check_multiplicative, likelihood,
                                 likelihood_report, normalize_wavefunction, posterior, sequential_vs_joint,
                                 theory_kernel)
from timeless.dynamics import ConstrainedSystem
from timeless.errors import DegenerateRegionError, InputError, UndefinedPosteriorError
from timeless.semiclassical import ShootingConfig
from timeless.spectral import GridHilbert, SpectralWindow, build_hamiltonian, projector_amplitude, snap_energy

sys.path.insert(0, str(Path(__file__).parent / "oracles"))
from compute_oracles import bayes_likelihoods  # noqa: E402

# dense FD eigenvector of the level nearest 10.3 (compute_oracles.py: born_harmonic_allowed_mass)
ORACLE_HO_ALLOWED_MASS = 0.9442710357290021
# Parseval over the plane-wave window weights (compute_oracles.py: free_normalization)
ORACLE_FREE_A = 1.7638982512228862


@pytest.fixture(scope="module")
def free_box():
    s = ConstrainedSystem.simple(2, "free", energy=2.0, hbar=0.5)
    g = GridHilbert(((-4.0, 4.0, 48), (-4.0, 4.0, 48)), "periodic")
    return projector_amplitude(build_hamiltonian(s, g, "spectral"), SpectralWindow("gaussian", 0.2)), g


def test_density_is_squared_modulus(free_box):
    W, g = free_box
    d = born_density(W, (0.0, 0.0))
    rng = np.random.default_rng(0)
    for k in rng.integers(g.size, size=10):
        x = g.points[k]
        assert d.values.reshape(-1)[k] == pytest.approx(abs(W((0.0, 0.0), x)) ** 2, rel=1e-12, abs=1e-300)


def test_free_density_respects_lattice_isometries(free_box):
    W, g = free_box
    qs = np.array([0.0, 0.0])
    d = born_density(W, qs).values
    i0, j0 = g.multi_index(qs, "test")
    n = g.shape[0]
    for a, b in [(3, 1), (5, 0), (7, 4), (2, 9)]:
        vals = [d[(i0 + x) % n, (j0 + y) % n] for x, y in
                [(a, b), (-a, b), (a, -b), (-a, -b), (b, a), (-b, a), (b, -a), (-b, -a)]]
        assert max(vals) - min(vals) <= 1e-8 * max(vals)


def test_oscillator_density_sits_in_the_allowed_region():
    g = GridHilbert(((-8.0, 8.0, 255),), "dirichlet")
    s = snap_energy(ConstrainedSystem.simple(1, "harmonic", energy=10.3), g)
    d = born_density(projector_amplitude(build_hamiltonian(s, g)), (0.0,))
    x = g.points[:, 0]
    frac = d.mass_in(0.5 * x**2 <= s.energy) / d.mass
    assert frac == pytest.approx(ORACLE_HO_ALLOWED_MASS, rel=1e-6)
    assert frac >= 0.9


def test_multiplicativity_check():
    assert check_multiplicative(lambda z: np.abs(z) ** 2) <= 1e-12
    assert check_multiplicative(np.abs) <= 1e-12
    assert check_multiplicative(lambda z: np.abs(z.real), samples=1000) > 0.1


def test_normalization(free_box):
    W, g = free_box
    psi, A = normalize_wavefunction(W, (0.0, 0.0))
    assert float(np.sum(np.abs(psi) ** 2) * W.mu) == pytest.approx(1.0, abs=1e-12)
    assert A == pytest.approx(ORACLE_FREE_A, rel=1e-10)

    class Scaled:
        def __init__(self, c):
            self.c = c

        def __call__(self, a, b):
            return self.c * W(a, b)

    small = GridHilbert(((-4.0, 4.0, 48), (-4.0, 4.0, 48)), "periodic")
    for c in (3.0, 1e-3):
        psi_c, A_c = normalize_wavefunction(Scaled(c), (0.0, 0.0), small)
        assert np.allclose(psi_c, psi, atol=1e-12)
        assert A_c == pytest.approx(A / c, rel=1e-12)
    with pytest.raises(DegenerateRegionError):
        normalize_wavefunction(lambda a, b: 0j, (0.0, 0.0), small)


def test_density_rejects_negative_values():
    with pytest.raises(InputError):
        Density(np.array([0.1, -0.2]), 1.0)


def test_posterior_examples():
    two = [TheoryModel("a", None, 0.5), TheoryModel("b", None, 0.5)]
    assert posterior(two, [0.3, 0.3]).tolist() == [0.5, 0.5]
    assert posterior(two, [1.0, 0.0]).tolist() == [1.0, 0.0]
    assert posterior(two, [0.2, 0.1]).tolist() == [float(Fraction(2, 3)), float(Fraction(1, 3))]
    with pytest.raises(UndefinedPosteriorError):
        posterior(two, [0.0, 0.0])
    with pytest.raises(InputError):
        posterior(two, [0.1])
    with pytest.raises(InputError):
        posterior([TheoryModel("a", None, 0.5), TheoryModel("b", None, 0.6)], [0.1, 0.1])


prior3 = st.lists(st.integers(1, 20), min_size=3, max_size=3).map(lambda w: [x / sum(w) for x in w])


@settings(max_examples=100, deadline=None)
@given(prior3, st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3), st.floats(1e-3, 1e3),
       st.permutations(range(3)))
def test_posterior_invariances(priors, L, c, perm):
    if abs(math.fsum(priors) - 1) > 1e-12:
        return
    th = [TheoryModel(str(i), None, p) for i, p in enumerate(priors)]
    post = posterior(th, L)
    assert math.fsum(post) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(posterior(th, [c * x for x in L]), post, rtol=0, atol=1e-12)
    assert np.allclose(posterior([th[i] for i in perm], [L[i] for i in perm]), post[list(perm)], atol=1e-15)


def _theories():
    g = GridHilbert(((-6.0, 6.0, 47),), "dirichlet")
    free = ConstrainedSystem.simple(1, "free", energy=1.3, hbar=0.5)
    ho = ConstrainedSystem.simple(1, "harmonic", energy=2.5, hbar=0.5, params={"omega": 0.4})
    th = [TheoryModel("free", snap_energy(free, g), 0.5), TheoryModel("harmonic", snap_energy(ho, g), 0.5)]
    return th, g


CFG = ShootingConfig(n_starts=8, max_time=6.0, dt=0.02, polish_dt=0.01)
QSTAR = (-4.5,)


def _box(g, lo, hi):
    x = g.points[:, 0]
    return ((x >= lo) & (x <= hi)).reshape(g.shape)


@pytest.fixture(scope="module")
def chain_setup():
    th, g = _theories()
    kernels = [theory_kernel(t, g) for t in th]
    chain = [_box(g, -3.1, -2.4), _box(g, -0.6, 0.6), _box(g, 2.4, 3.1)]
    reports = [[likelihood_report(t, chain[s + 1], chain[s], g, QSTAR, 0.1, CFG, W) for s in range(2)]
               for t, W in zip(th, kernels)]
    return th, g, kernels, chain, reports


def test_likelihoods_against_rank_one_oracle(chain_setup):
    th, g, kernels, chain, reports = chain_setup
    regions = {t.id: [(chain[s + 1], reports[i][s].record_region) for s in range(2)] for i, t in enumerate(th)}
    want = bayes_likelihoods(regions)
    for i, t in enumerate(th):
        for s in range(2):
            assert reports[i][s].value == pytest.approx(want[t.id][s], rel=1e-8)
            assert 0 <= reports[i][s].value <= 1


def test_likelihood_trivial_cases(chain_setup):
    th, g, kernels, chain, reports = chain_setup
    rep = reports[0][0]
    M = rep.record_region
    assert likelihood(th[0], M, chain[0], g, QSTAR, kernel=kernels[0], region=M) == pytest.approx(1.0, abs=1e-15)
    empty = np.zeros(g.shape, dtype=bool)
    assert likelihood(th[0], empty, chain[0], g, QSTAR, kernel=kernels[0], region=M) == 0.0
    outside = ~M
    if np.any(outside):
        with pytest.raises(InputError):
            likelihood(th[0], outside, chain[0], g, QSTAR, kernel=kernels[0], region=M)


def test_sequential_matches_joint(chain_setup):
    th, g, kernels, chain, reports = chain_setup
    comp = sequential_vs_joint(th, chain, g, QSTAR, 0.1, CFG, kernels)
    assert comp.max_difference <= 1e-10
    assert np.allclose(comp.likelihoods, [[r.value for r in row] for row in reports], rtol=0, atol=0)
    assert math.fsum(comp.sequential) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InputError):
        sequential_vs_joint(th, chain[:2], g, QSTAR, 0.1, CFG, kernels)
