import math

import numpy as np
import pytest

from timeless.dynamics import ConstrainedSystem, action_unparametrized, resample_path
from timeless.errors import InputError, ResolutionError
from timeless.semiclassical import (ExtremalPath, ShootingConfig, compose_semigroup, find_extremals,
                                    find_extremals_fixed_time, semiclassical_amplitude, semiclassical_green,
                                    van_vleck_report, van_vleck_weight)
from timeless.spectral import (AmplitudeKernel, GridHilbert, build_hamiltonian, free_green, projector_amplitude,
                               SpectralWindow, snap_energy, time_green)

# quad of p(q) = √(2(E − V)) for V = (q²−1)², E = 1.5 (compute_oracles.py: double_well_actions)
ORACLE_DW_DIRECT = 3.411971876655593
ORACLE_DW_SINGLE_BOUNCE = 4.108634247622481
ORACLE_DW_DOUBLE_BOUNCE = 4.805296618589369
# DOP853 angle scan + fsolve for the 2D double well (compute_oracles.py: double_well_2d_paths)
ORACLE_DW2_ACTIONS = (3.495715270255329, 3.5319905495457276)
ORACLE_DW2_TIMES = (1.964067809840102, 2.539759379117184)


def free(dim=1, E=2.0):
    return ConstrainedSystem.simple(dim, "free", energy=E)


def fake_path(action, vv):
    base = find_extremals(free(), [0.0], [1.0])[0]
    return ExtremalPath(base.path, action, base.initial_momentum, vv, True, 0.0, base.traversal_time)


def test_free_particle_straight_path():
    paths = find_extremals(free(), [0.0], [2.0])
    assert len(paths) == 1
    (p,) = paths
    assert p.converged and p.endpoint_residual <= 1e-8
    assert p.action == pytest.approx(4.0, abs=1e-6)
    assert p.traversal_time == pytest.approx(1.0, abs=1e-6)
    assert paths.diagnostics.distinct == 1


def test_coincident_endpoints_give_trivial_extremal():
    (p,) = find_extremals(free(), [0.5], [0.5])
    assert p.action == 0.0


def test_double_well_actions_against_quadrature():
    paths = find_extremals(ConstrainedSystem.simple(1, "double_well", energy=1.5), [-1.2], [1.2],
                           ShootingConfig(max_time=6.0))
    S = [p.action for p in paths]
    assert len(S) >= 2
    assert S == sorted(S)
    assert S[0] == pytest.approx(ORACLE_DW_DIRECT, rel=2e-5)
    assert S[1] == pytest.approx(ORACLE_DW_SINGLE_BOUNCE, rel=2e-5)
    assert S[-1] == pytest.approx(ORACLE_DW_DOUBLE_BOUNCE, rel=2e-5)
    for p in paths:
        H = ConstrainedSystem.simple(1, "double_well", energy=1.5).hamiltonian(p.path.q, p.path.p)
        assert np.max(np.abs(H)) <= 1e-3


def test_double_well_2d_paths_against_scan():
    s = ConstrainedSystem.simple(2, "double_well", energy=1.5)
    paths = find_extremals(s, [-1.2, 0.1], [1.3, 0.4], ShootingConfig(max_time=2.8))
    assert len(paths) == 2
    for p, S, T in zip(paths, ORACLE_DW2_ACTIONS, ORACLE_DW2_TIMES):
        assert p.action == pytest.approx(S, rel=1e-4)
        assert p.traversal_time == pytest.approx(T, rel=1e-4)


def test_actions_are_reparametrization_invariant():
    s = ConstrainedSystem.simple(2, "double_well", energy=1.5)
    (p, _) = find_extremals(s, [-1.2, 0.1], [1.3, 0.4], ShootingConfig(max_time=2.8))
    rng = np.random.default_rng(1)
    tau = np.unique(np.concatenate([p.path.tau, rng.uniform(p.path.tau[0], p.path.tau[-1], 500)]))
    assert action_unparametrized(resample_path(p.path, tau)) == pytest.approx(p.action, rel=1e-8)


def test_shooting_is_deterministic():
    s = ConstrainedSystem.simple(1, "double_well", energy=1.5)
    cfg = ShootingConfig(max_time=6.0, rng_seed=11)
    a = [p.summary() for p in find_extremals(s, [-1.2], [1.2], cfg)]
    b = [p.summary() for p in find_extremals(s, [-1.2], [1.2], cfg)]
    assert a == b


def test_forbidden_endpoint_is_an_input_error():
    s = ConstrainedSystem.simple(1, "double_well", energy=0.5)
    with pytest.raises(InputError, match="forbidden"):
        find_extremals(s, [0.0], [1.0])


def test_no_convergence_is_empty_with_diagnostic():
    s = ConstrainedSystem.simple(1, "harmonic", energy=0.5)
    paths = find_extremals(s, [-0.5], [0.5], ShootingConfig(n_starts=4, max_time=1e-2, min_time=1e-3))
    assert len(paths) == 0
    assert paths.diagnostics.message


def test_van_vleck_free_particle_is_m_over_T():
    (p,) = find_extremals(free(), [0.0], [2.0])
    assert p.van_vleck == pytest.approx(1.0 / p.traversal_time, rel=0.02)
    (p,) = find_extremals_fixed_time(free(E=0.0), [0.0], [1.3], 1.0)
    assert p.van_vleck == pytest.approx(1.0, rel=0.02)
    assert p.action == pytest.approx(1.3**2 / 2, abs=1e-9)


@pytest.mark.parametrize("T", [math.pi / 2, 1.0])
def test_van_vleck_oscillator(T):
    s = ConstrainedSystem.simple(1, "harmonic", energy=0.0)
    (p,) = find_extremals_fixed_time(s, [0.3], [-0.2], T)
    assert van_vleck_weight(s, p) == pytest.approx(1.0 / abs(math.sin(T)), rel=0.02)


def test_van_vleck_is_stable_under_step_halving():
    s = ConstrainedSystem.simple(2, "double_well", energy=1.5)
    for p in find_extremals(s, [-1.2, 0.1], [1.3, 0.4], ShootingConfig(max_time=2.8)):
        rep = van_vleck_report(s, p, 1e-5)
        assert rep["relative_change"] <= 0.05
        assert rep["value"] > 0


def test_amplitude_examples():
    assert abs(semiclassical_amplitude([fake_path(0.37, 4.0)])) == 2.0
    hb = 0.3
    assert abs(semiclassical_amplitude([fake_path(1.0, 1.0), fake_path(1.0 + math.pi * hb, 1.0)], hb)) < 1e-15
    assert abs(semiclassical_amplitude([fake_path(1.0, 1.0), fake_path(1.0 + 2 * math.pi * hb, 1.0)], hb)) \
        == pytest.approx(2.0, abs=1e-14)
    with pytest.raises(InputError):
        semiclassical_amplitude([])


def test_single_path_modulus_is_sqrt_van_vleck():
    s = ConstrainedSystem.simple(2, "gaussian_barrier", energy=1.5)
    paths = find_extremals(s, [-2.0, 0.5], [2.0, 1.0])
    assert len(paths) == 1
    assert abs(semiclassical_amplitude(paths, 0.1)) == pytest.approx(math.sqrt(paths[0].van_vleck), rel=1e-12)


def _analytic_free(T):
    return AmplitudeKernel(lambda a, b: free_green(np.asarray(b) - np.asarray(a), T), "analytic")


def test_free_time_sliced_composition():
    mid = GridHilbert(((-20.0, 20.0, 2000),), "dirichlet")
    W = compose_semigroup(_analytic_free(0.6), _analytic_free(0.9), mid)
    for a, c in [((0.0,), (0.5,)), ((-0.4,), (0.3,))]:
        want = free_green(np.array(c) - np.array(a), 1.5)
        assert abs(W(a, c) - want) / abs(want) <= 0.05


def test_coarse_intermediate_grid_is_a_resolution_error():
    mid = GridHilbert(((-30.0, 30.0, 60),), "dirichlet")
    with pytest.raises(ResolutionError):
        compose_semigroup(_analytic_free(0.6), _analytic_free(0.9), mid)((0.0,), (0.5,))


def _sharp_projector():
    g = GridHilbert(((-6.0, 6.0, 96),), "dirichlet")
    s = snap_energy(ConstrainedSystem.simple(1, "harmonic", energy=3.0), g, "spectral")
    return projector_amplitude(build_hamiltonian(s, g, "spectral")), g


def test_composition_with_sharp_projector_is_idempotent():
    P, g = _sharp_projector()
    W = compose_semigroup(P, P, g)
    for a, c in [((0.0,), (1.0,)), ((-2.0,), (0.5,))]:
        a, c = g.snap(a), g.snap(c)
        assert abs(W(a, c) - P(a, c)) <= 1e-8 * max(1.0, abs(P(a, c)))


def test_reversed_composition_is_conjugate_transpose():
    P, g = _sharp_projector()
    s = ConstrainedSystem.simple(1, "q1^2/2 + q1/3", energy=2.0)
    Q = projector_amplitude(build_hamiltonian(s, g, "spectral"), SpectralWindow("gaussian", 0.3))
    ab = compose_semigroup(P, Q, g, check_resolution=False)
    ba = compose_semigroup(Q, P, g, check_resolution=False)
    a, c = g.snap((0.3,)), g.snap((-1.1,))
    assert abs(ab(a, c) - np.conj(ba(c, a))) <= 1e-8 * abs(ab(a, c))


def test_barrier_green_function_converges_as_hbar_decreases():
    errs = []
    for hbar in (1.0, 0.5, 0.25, 0.125):
        s = ConstrainedSystem.simple(1, "gaussian_barrier", energy=0.0, hbar=hbar)
        n = round(24 / (0.2 * hbar)) - 1
        g = GridHilbert(((-12.0, 12.0, n),), "dirichlet")
        exact = time_green(s, g, 1.0, [-0.6], [0.8])
        paths = find_extremals_fixed_time(s, [-0.6], [0.8], 1.0, ShootingConfig(n_starts=16))
        assert len(paths) == 1
        errs.append(abs(exact - semiclassical_green(s, [-0.6], [0.8], 1.0, paths=paths)) / abs(exact))
    assert all(b < a for a, b in zip(errs, errs[1:])), errs
