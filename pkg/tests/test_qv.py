"""Tests for realised/true quadratic variation, the rate, and the
rescaled error process (including its distributional size against the
matrix limit-law sampler)."""
import math

import numpy as np
import pytest

from stableqv.errors import InsufficientDataError, InvalidGridError
from stableqv.limitlaw import mu_mass_and_sampler, sample_u_batch
from stableqv.measures import StableLevySpec, iid_H
from stableqv.qv import (
    QVEstimate,
    SymMatrix,
    error_process,
    rate_delta,
    realised_qv,
    realised_qv_terminal,
    true_qv,
    write_qv_table,
)
from stableqv.simulate import JumpPath, path_values, simulate_levy_path

SPEC = StableLevySpec(beta=1.5, H=iid_H(2, 1.0))  # H mass 4


def _values_from_increments(increments):
    inc = np.asarray(increments, dtype=float)
    return np.vstack([np.zeros(inc.shape[1]), np.cumsum(inc, axis=0)])


def test_realised_qv_single_increment():
    est = realised_qv(_values_from_increments([[1.0, 0.0]]), 1.0)
    assert np.array_equal(est.terminal.full, np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert np.array_equal(est.values[0].full, np.zeros((2, 2)))


def test_realised_qv_orthonormal_increments():
    est = realised_qv(_values_from_increments([[1.0, 0.0], [0.0, 1.0]]), 0.5)
    assert np.array_equal(est.terminal.full, np.eye(2))


def test_realised_qv_hand_outer_sum():
    # (1,1) and (1,-1): outer products sum to 2 I
    est = realised_qv(_values_from_increments([[1.0, 1.0], [1.0, -1.0]]), 0.5)
    assert np.array_equal(est.terminal.full, 2.0 * np.eye(2))


def test_realised_qv_needs_two_values():
    with pytest.raises(InsufficientDataError):
        realised_qv(np.zeros((1, 2)), 0.5)


def test_true_qv_examples():
    empty = JumpPath(
        spec=SPEC, T=1.0, eps=0.1, times=np.empty(0), jumps=np.zeros((0, 2))
    )
    assert np.array_equal(true_qv(empty, 1.0).full, np.zeros((2, 2)))
    one = JumpPath(
        spec=SPEC,
        T=1.0,
        eps=0.1,
        times=np.array([0.3]),
        jumps=np.array([[1.0, 2.0]]),
    )
    assert np.array_equal(
        true_qv(one, 1.0).full, np.array([[1.0, 2.0], [2.0, 4.0]])
    )
    with pytest.raises(InvalidGridError):
        true_qv(one, 1.5)


def test_realised_qv_converges_to_true_qv():
    # median relative error decreases with the grid step
    spec = StableLevySpec(beta=1.2, H=iid_H(2, 1.0))
    rng = np.random.default_rng(71)
    deltas = [2.0**-8, 2.0**-10, 2.0**-12]
    med = []
    for delta in deltas:
        rel = []
        for _ in range(200):
            p = simulate_levy_path(spec, 1.0, 1e-3, rng)
            est = realised_qv_terminal(path_values(p, delta), delta)
            tru = true_qv(p, 1.0)
            rel.append((est - tru).frobenius() / tru.frobenius())
        med.append(np.median(rel))
    assert med[0] > med[1] > med[2]


def test_rate_delta_closed_form():
    assert rate_delta(math.exp(-1.0), 1.0) == pytest.approx(math.e, rel=1e-14)
    assert rate_delta(math.exp(-1.0), 2.0) == pytest.approx(math.sqrt(math.e), rel=1e-14)
    # frozen high-precision evaluation of (0.01 * log 100)^(-2/3)
    assert rate_delta(0.01, 1.5) == pytest.approx(7.783403471912330, rel=1e-12)
    with pytest.raises(InvalidGridError):
        rate_delta(1.0, 1.0)
    with pytest.raises(ValueError):
        rate_delta(0.5, 2.5)


def test_error_process_no_jumps_is_zero():
    empty = JumpPath(
        spec=SPEC, T=1.0, eps=0.1, times=np.empty(0), jumps=np.zeros((0, 2))
    )
    ep = error_process(empty, 0.25, SPEC.beta)
    assert all(np.array_equal(v.full, np.zeros((2, 2))) for v in ep.values)


def test_error_process_single_jump_cancels_exactly():
    # one jump alone in its cell: the grid increment equals the jump, so the
    # realised and true QV coincide at grid times
    path = JumpPath(
        spec=SPEC,
        T=1.0,
        eps=0.1,
        times=np.array([0.4]),
        jumps=np.array([[2.0, -1.0]]),
    )
    ep = error_process(path, 0.25, SPEC.beta)
    assert all(np.array_equal(v.full, np.zeros((2, 2))) for v in ep.values)


def test_error_process_terminal_matches_direct_formula():
    path = simulate_levy_path(SPEC, 1.0, 0.05, 5)
    delta = 2.0**-6
    ep = error_process(path, delta, SPEC.beta)
    dn = rate_delta(delta, SPEC.beta)
    direct = dn * (
        realised_qv_terminal(path_values(path, delta), delta) - true_qv(path, 1.0)
    )
    assert np.array_equal(ep.terminal.upper, direct.upper)
    assert ep.beta_used == SPEC.beta


def test_error_process_vanishes_when_cells_hold_single_jumps():
    # sparse compound-Poisson path + fine grid: at most one jump per cell
    rng = np.random.default_rng(12)
    for _ in range(10):
        path = simulate_levy_path(SPEC, 1.0, 0.6, rng)
        delta = 2.0**-12
        if path.n_jumps and np.min(np.diff(np.concatenate([[0], path.times]))) < delta:
            continue  # a shared cell would break the premise, skip
        ep = error_process(path, delta, SPEC.beta)
        assert ep.terminal.frobenius() <= 1e-12 * max(1.0, true_qv(path, 1.0).frobenius())


def test_error_process_distribution_matches_limit_law_medians():
    # rescaled error at t=1 vs the matrix limit law: medians within factor 2
    delta = 2.0**-14
    eps_path = 2e-3
    n_paths = 5000
    rng = np.random.default_rng(2024)
    dn = rate_delta(delta, SPEC.beta)
    norms = np.empty(n_paths)
    for i in range(n_paths):
        p = simulate_levy_path(SPEC, 1.0, eps_path, rng)
        err = realised_qv_terminal(path_values(p, delta), delta) - true_qv(p, 1.0)
        norms[i] = dn * err.frobenius()
    limit = mu_mass_and_sampler(SPEC)
    u = sample_u_batch(limit, 1.0, 5e-3, 4000, np.random.default_rng(9))
    # packed Frobenius norm: diagonal entries once, off-diagonals twice
    w = np.array([1.0, 2.0, 1.0])
    u_norms = np.sqrt((u**2 * w).sum(axis=1))
    ratio = np.median(norms) / np.median(u_norms)
    assert 0.5 <= ratio <= 2.0


def test_realised_qv_is_psd_and_loewner_monotone():
    rng = np.random.default_rng(3)
    p = simulate_levy_path(SPEC, 1.0, 0.05, rng)
    est = realised_qv(path_values(p, 2.0**-5), 2.0**-5)
    prev = est.values[0]
    for cur in est.values[1:]:
        step = (cur - prev).full
        assert np.linalg.eigvalsh(step).min() >= -1e-12
        prev = cur
    assert np.linalg.eigvalsh(est.terminal.full).min() >= -1e-12


def test_realised_qv_bilinearity_exact_for_exact_maps():
    rng = np.random.default_rng(14)
    vals = rng.standard_normal((40, 2))
    base = realised_qv_terminal(vals, 0.1).full
    for A in (np.diag([2.0, 0.5]), np.array([[0.0, 1.0], [1.0, 0.0]])):
        mapped = realised_qv_terminal(vals @ A.T, 0.1).full
        assert np.array_equal(mapped, A @ base @ A.T)


def test_realised_qv_bilinearity_general_linear_map():
    rng = np.random.default_rng(15)
    vals = rng.standard_normal((60, 3))
    A = rng.standard_normal((3, 3))
    mapped = realised_qv_terminal(vals @ A.T, 0.1).full
    assert np.allclose(mapped, A @ realised_qv_terminal(vals, 0.1).full @ A.T,
                       rtol=1e-12, atol=1e-12)


def test_sym_matrix_algebra_and_exact_symmetry():
    rng = np.random.default_rng(16)
    raw = rng.standard_normal((3, 3))
    s = SymMatrix.from_array(raw)
    assert np.array_equal(s.full, s.full.T)
    sym = 0.5 * (raw + raw.T)
    assert np.allclose(s.full, sym, rtol=0, atol=1e-16)
    t = SymMatrix.from_array(rng.standard_normal((3, 3)))
    assert s.inner(t) == pytest.approx(np.trace(s.full @ t.full), rel=1e-12)
    assert s.frobenius() == pytest.approx(np.linalg.norm(s.full), rel=1e-12)
    assert s.trace() == pytest.approx(np.trace(s.full), rel=1e-12)
    assert (2.0 * s - s).inner(t) == pytest.approx(s.inner(t), rel=1e-12)


def test_qv_table_round_trips_values(tmp_path):
    est = realised_qv(_values_from_increments([[1.0, 0.5], [-0.25, 2.0]]), 0.5)
    dest = tmp_path / "qv.tsv"
    write_qv_table(est, str(dest))
    lines = dest.read_text().strip().split("\n")
    assert lines[0] == "t\tm11\tm12\tm22"
    parsed = [list(map(float, ln.split("\t"))) for ln in lines[1:]]
    for row, m in zip(parsed, est.values):
        assert row[1:] == list(m.upper)
