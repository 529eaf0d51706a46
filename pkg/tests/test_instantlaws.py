import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timeless.dynamics import ConstrainedSystem
from timeless.errors import DegenerateSampleWarning, InputError
from timeless.instantlaws import (catalog_functional, closure_check, from_expression, from_system, is_instant_law,
                                  is_split_law, momentum_component, poisson_bracket, similarity_generators_2d)

# sympy brackets of {Lz, D, Px, Py} for two planar particles (compute_oracles.py: similarity_algebra)
ORACLE_SIMILARITY = {("Lz", "Px", "Py"): 1, ("Lz", "Py", "Px"): -1, ("D", "Px", "Px"): 1, ("D", "Py", "Py"): 1,
                     ("Px", "Lz", "Py"): -1, ("Px", "D", "Px"): -1, ("Py", "Lz", "Px"): 1, ("Py", "D", "Py"): -1}

rng_points = st.integers(0, 10_000).map(lambda s: np.random.default_rng(s).normal(size=(2, 9)))


def test_canonical_pair():
    q1 = from_expression("q1", 2)
    p1 = from_expression("p1", 2)
    for q, p in np.random.default_rng(0).normal(size=(5, 2, 2)):
        assert poisson_bracket(q1, p1, q, p) == 1.0


@settings(max_examples=50, deadline=None)
@given(rng_points)
def test_bracket_antisymmetry_and_so3(qp):
    q, p = qp
    Lx, Ly, Lz = (catalog_functional(n, 3, 3) for n in ("Lx", "Ly", "Lz"))
    assert poisson_bracket(Lx, Ly, q, p) == pytest.approx(Lz(q, p), abs=1e-8 * (1 + abs(Lz(q, p))))
    assert poisson_bracket(Lx, Lx, q, p) == 0.0
    f = from_expression("q1^2*p2 + sin(q3)*p1^2", 9)
    assert abs(poisson_bracket(f, Ly, q, p) + poisson_bracket(Ly, f, q, p)) <= 1e-10
    assert abs(poisson_bracket(f, f, q, p)) <= 1e-12


def test_bracket_dimension_mismatch():
    with pytest.raises(InputError):
        poisson_bracket(catalog_functional("Lz", 1, 2), catalog_functional("Lz", 1, 3), np.zeros(2), np.zeros(2))


@pytest.mark.parametrize("name", ["translation:1", "translation:3", "rotation:12", "rotation:23", "Lx", "D",
                                  "Px", "null:2"])
def test_catalog_generators_are_instant_laws(name):
    v = is_instant_law(catalog_functional(name, 3, 3))
    assert v.instant_law and v.evidence <= 1e-12


def test_quadratic_constraints_are_not_instant_laws():
    for s in (ConstrainedSystem.simple(2, "free", energy=1.0), ConstrainedSystem.simple(3, "harmonic", energy=2.0),
              ConstrainedSystem.simple(2, "double_well", energy=1.5)):
        v = is_instant_law(from_system(s))
        assert not v.instant_law and v.evidence > 0.1
    assert not is_instant_law(catalog_functional("kinetic", 2, 2)).instant_law


def test_expression_generators_report_momentum_degree():
    assert from_expression("q1*p2 - q2*p1", 2).momentum_degree == 1
    assert from_expression("p1^2/2 + q1^2", 1).momentum_degree == 2
    assert from_expression("q1 + q2", 2).momentum_degree == 0


def test_split_criterion_is_stricter():
    f = from_expression("q1^2*p1", 1)
    assert is_instant_law(f).instant_law
    assert not is_split_law(f).instant_law
    for name in ("Lz", "D", "Px"):
        assert is_split_law(catalog_functional(name, 2, 2)).instant_law


def test_so3_closure():
    gens = [catalog_functional(n, 3, 3) for n in ("Lx", "Ly", "Lz")]
    rep = closure_check(gens, samples=100, seed=1)
    eps = np.zeros((3, 3, 3))
    for i, j, k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        eps[i, j, k], eps[j, i, k] = 1, -1
    assert np.allclose(rep.structure_constants, eps, atol=1e-8)
    assert rep.max_residual <= 1e-8 and rep.constancy_spread <= 1e-8
    assert rep.closes and rep.lie_algebra


def test_similarity_algebra_matches_symbolic_table():
    gens = similarity_generators_2d(2)
    names = ["Lz", "D", "Px", "Py"]
    rep = closure_check(gens, samples=100)
    want = np.zeros((4, 4, 4))
    for (a, b, c), v in ORACLE_SIMILARITY.items():
        want[names.index(a), names.index(b), names.index(c)] = v
    assert np.allclose(rep.structure_constants, want, atol=1e-8)
    assert rep.max_residual <= 1e-8 and rep.lie_algebra
    C = rep.structure_constants
    assert np.allclose(C, -C.transpose(1, 0, 2), atol=1e-8)
    doubled = closure_check(gens, samples=200, seed=5)
    assert np.allclose(doubled.structure_constants, C, atol=1e-8)


def test_hamiltonian_commutes_with_rotations():
    s = ConstrainedSystem.simple(2, "q1^2 + q2^2 + (q1^2+q2^2)^2", energy=1.0)
    rep = closure_check([from_system(s), catalog_functional("Lz", 1, 2)], samples=50)
    assert rep.max_residual <= 1e-10


def test_non_closing_set_is_reported():
    rep = closure_check([catalog_functional("Lz", 1, 2), from_expression("q1^2*p1", 2)], samples=50)
    assert not rep.closes


def test_degenerate_samples_are_discarded_with_warning():
    gens = [catalog_functional("Px", 1, 2), catalog_functional("Py", 1, 2)]
    with pytest.warns(DegenerateSampleWarning):
        rep = closure_check(gens, samples=100, degenerate=1.0)
    assert rep.discarded > 0 and rep.samples_used + rep.discarded == 100
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSampleWarning)
        with pytest.raises(InputError):
            closure_check([momentum_component(2, 0), momentum_component(2, 1)], samples=20, degenerate=1e6)
    with pytest.raises(InputError):
        closure_check(gens[:1])
