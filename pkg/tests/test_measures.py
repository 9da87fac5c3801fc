"""Tests for directional measures and process specifications.

Covers construction/symmetrization of atomic measures, total mass against
closed-form sphere areas, sampling frequencies against binomial/CLT
bounds, the span check, and lossless serialization.
"""
import json
import math

import numpy as np
import pytest

from stableqv.errors import EmptyMeasureError, InvalidDirectionError
from stableqv.measures import (
    DirectionalMeasure,
    StableLevySpec,
    iid_H,
    make_atomic_H,
    measure_from_json,
    sample_direction,
    span_check,
    total_mass,
    uniform_H,
)

E1 = np.array([1.0, 0.0])
E2 = np.array([0.0, 1.0])


def _atom_map(H):
    return {tuple(np.round(d, 12)): w for d, w in zip(H.directions, H.weights)}


def test_make_atomic_symmetrizes_standard_basis():
    H = make_atomic_H([(E1, 0.5), (E2, 0.5)])
    atoms = _atom_map(H)
    assert set(atoms) == {(1, 0), (-1, 0), (0, 1), (0, -1)}
    assert all(w == 0.5 for w in atoms.values())
    assert total_mass(H) == 2.0


def test_make_atomic_normalizes_directions():
    H = make_atomic_H([((2.0, 0.0), 1.0)])
    atoms = _atom_map(H)
    assert set(atoms) == {(1, 0), (-1, 0)}
    assert all(w == 1.0 for w in atoms.values())


def test_make_atomic_mirror_pair_not_double_counted():
    H = make_atomic_H([(E1, 1.0), (-E1, 1.0)])
    atoms = _atom_map(H)
    assert atoms[(1, 0)] == 1.0
    assert atoms[(-1, 0)] == 1.0


def test_make_atomic_merges_duplicates_before_mirroring():
    H = make_atomic_H([(E1, 1.0), (E1, 1.0)])
    atoms = _atom_map(H)
    assert atoms[(1, 0)] == 2.0
    assert atoms[(-1, 0)] == 2.0


def test_make_atomic_rejects_zero_vector_and_empty_list():
    with pytest.raises(InvalidDirectionError):
        make_atomic_H([((0.0, 0.0), 1.0)])
    with pytest.raises(EmptyMeasureError):
        make_atomic_H([])
    with pytest.raises(InvalidDirectionError):
        make_atomic_H([(E1, -0.5)])


def test_symmetry_invariant_under_negation():
    rng = np.random.default_rng(5)
    pairs = [(rng.standard_normal(3), float(w)) for w in rng.random(5) + 0.1]
    H = make_atomic_H(pairs)
    atoms = _atom_map(H)
    mirrored = {tuple(np.round(-np.array(d), 12)): w for d, w in atoms.items()}
    assert atoms == mirrored


def test_total_mass_uniform_circle():
    assert total_mass(uniform_H(2, 1.0)) == pytest.approx(2.0 * math.pi, rel=1e-15)


def test_total_mass_uniform_sphere_d3():
    # oracle: surface area of the unit 2-sphere is 4*pi, doubled by a=2
    assert total_mass(uniform_H(3, 2.0)) == pytest.approx(2.0 * 4.0 * math.pi, rel=1e-15)


def test_sample_direction_atomic_frequencies():
    H = make_atomic_H([(E1, 1.0)])  # atoms +-e1, equal weights
    rng = np.random.default_rng(11)
    draws = H.sample(100_000, rng)
    freq_plus = np.mean(draws[:, 0] > 0)
    assert abs(freq_plus - 0.5) <= 0.01  # binomial 3-sigma ~ 0.0047


def test_sample_direction_all_atom_frequencies_within_binomial_band():
    H = make_atomic_H([(E1, 0.2), (E2, 0.8), ((1.0, 1.0), 0.5)])
    n = 100_000
    draws = H.sample(n, np.random.default_rng(12))
    mass = total_mass(H)
    for d, w in zip(H.directions, H.weights):
        p = w / mass
        freq = np.mean(np.linalg.norm(draws - d, axis=1) < 1e-9)
        assert abs(freq - p) <= 4.0 * math.sqrt(p * (1 - p) / n)


def test_sample_direction_uniform_isotropy():
    H = uniform_H(2, 1.0)
    draws = H.sample(100_000, np.random.default_rng(13))
    assert np.allclose(np.linalg.norm(draws, axis=1), 1.0, atol=1e-12)
    assert np.linalg.norm(draws.mean(axis=0)) <= 0.01  # CLT bound 3/sqrt(N)


def test_sample_direction_deterministic_given_seed():
    H = uniform_H(3, 1.0)
    a = H.sample(50, np.random.default_rng(99))
    b = H.sample(50, np.random.default_rng(99))
    assert np.array_equal(a, b)
    one = sample_direction(H, np.random.default_rng(4))
    assert one.shape == (3,)


def test_span_check_cases():
    assert span_check(make_atomic_H([(E1, 1.0), (E2, 1.0)]))
    assert not span_check(make_atomic_H([(E1, 1.0)]))
    assert span_check(uniform_H(3, 1.0))


def test_span_check_orthogonal_invariance():
    rng = np.random.default_rng(7)
    for d, spanning in [(3, True), (3, False), (4, True)]:
        base = [np.eye(d)[i] for i in range(d if spanning else d - 1)]
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        H0 = make_atomic_H([(v, 1.0) for v in base])
        H1 = make_atomic_H([(q @ v, 1.0) for v in base])
        assert span_check(H0) == span_check(H1) == spanning


def test_serialization_round_trip_atomic():
    rng = np.random.default_rng(21)
    H = make_atomic_H([(rng.standard_normal(3), 0.3), (rng.standard_normal(3), 1.7)])
    back = measure_from_json(H.to_json())
    assert np.array_equal(back.directions, H.directions)
    assert np.array_equal(back.weights, H.weights)


def test_serialization_round_trip_uniform():
    H = uniform_H(4, 0.123456789012345678)
    back = measure_from_json(H.to_json())
    assert back.d == 4
    assert back.density == H.density
    # the JSON text itself carries full double precision
    assert json.loads(H.to_json())["a"] == H.density


def test_spec_validation_and_tail_mass():
    H = iid_H(2, 0.5)
    spec = StableLevySpec(beta=1.0, H=H)
    assert spec.d == 2
    assert spec.tail_mass(0.1) == pytest.approx(2.0 * 10.0, rel=1e-14)
    with pytest.raises(ValueError):
        StableLevySpec(beta=2.0, H=H)
    with pytest.raises(ValueError):
        StableLevySpec(beta=0.0, H=H)


def test_uniform_measure_requires_positive_density():
    with pytest.raises(InvalidDirectionError):
        DirectionalMeasure(d=2, density=-1.0)
