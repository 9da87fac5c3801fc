"""Tests for path simulation: tail counts, determinism, self-similarity,
grid sampling, volatility-modulated integrals, and the export format."""
import io
import math

import numpy as np
import pytest
from scipy import stats

from stableqv.errors import InvalidGridError, ResourceLimitError
from stableqv.measures import StableLevySpec, iid_H, make_atomic_H
from stableqv.simulate import (
    ConstantVol,
    JumpPath,
    OUDiagonalVol,
    PiecewiseConstantVol,
    accumulate_cell_increments,
    choose_truncation_eps,
    expected_jump_count,
    integral_true_qv,
    path_to_text,
    path_values,
    read_path,
    simulate_integral_path,
    simulate_levy_path,
    transformed_jumps,
)

SPEC_B1 = StableLevySpec(beta=1.0, H=iid_H(2, 0.5))  # H mass 2


def test_tail_count_poisson_mean_and_variance():
    # jumps above u arrive as Poisson with mean T * H(S) * u^-beta / beta
    rng = np.random.default_rng(101)
    n_paths = 2000
    counts = {u: [] for u in (0.1, 0.2, 0.5)}
    for _ in range(n_paths):
        p = simulate_levy_path(SPEC_B1, 1.0, 0.05, rng)
        norms = np.linalg.norm(p.jumps, axis=1)
        for u in counts:
            counts[u].append(np.sum(norms > u))
    for u, cs in counts.items():
        cs = np.asarray(cs, dtype=float)
        lam = expected_jump_count(SPEC_B1, 1.0, u)
        se_mean = math.sqrt(lam / n_paths)
        assert abs(cs.mean() - lam) <= 3.0 * se_mean
        # Poisson fourth central moment lam(1 + 3 lam) gives the variance SE
        se_var = math.sqrt((lam * (1.0 + 3.0 * lam) - lam**2) / n_paths)
        assert abs(cs.var(ddof=1) - lam) <= 3.0 * se_var


def test_same_seed_reproduces_path_exactly():
    a = simulate_levy_path(SPEC_B1, 1.0, 0.01, 42)
    b = simulate_levy_path(SPEC_B1, 1.0, 0.01, 42)
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.jumps, b.jumps)
    assert a.seed == b.seed == 42
    assert a.eps == b.eps and a.truncated_qv_mass == b.truncated_qv_mass


def test_marginal_self_similarity_via_characteristic_function():
    # L_1 and 2^(-1/beta) L_2 agree in law; compare empirical cos-transforms
    # on a fixed grid of 20 arguments.
    n_paths = 100_000
    eps = 0.01
    rng = np.random.default_rng(202)
    l1 = np.empty((n_paths, 2))
    l2 = np.empty((n_paths, 2))
    for i in range(n_paths):
        l1[i] = simulate_levy_path(SPEC_B1, 1.0, eps, rng).jumps.sum(axis=0)
    for i in range(n_paths):
        l2[i] = simulate_levy_path(SPEC_B1, 2.0, eps, rng).jumps.sum(axis=0)
    scaled = 2.0 ** (-1.0 / SPEC_B1.beta) * l2
    angles = np.array([0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4])
    radii = np.array([0.2, 0.45, 0.7, 0.95, 1.2])
    args = np.array([[r * np.cos(a), r * np.sin(a)] for r in radii for a in angles])
    phi1 = np.mean(np.cos(l1 @ args.T), axis=0)
    phi2 = np.mean(np.cos(scaled @ args.T), axis=0)
    assert np.max(np.abs(phi1 - phi2)) <= 0.02


def test_resource_guard_raises():
    with pytest.raises(ResourceLimitError):
        simulate_levy_path(SPEC_B1, 1.0, 1e-12, 0)


def test_path_values_single_jump_step_function():
    path = JumpPath(
        spec=SPEC_B1,
        T=1.0,
        eps=0.1,
        times=np.array([0.5]),
        jumps=np.array([[1.0, 0.0]]),
    )
    vals = path_values(path, 0.25)
    expected = np.array([[0, 0], [0, 0], [1, 0], [1, 0], [1, 0]], dtype=float)
    assert np.array_equal(vals, expected)


def test_path_values_empty_path_and_bad_grid():
    path = JumpPath(
        spec=SPEC_B1, T=1.0, eps=0.1, times=np.empty(0), jumps=np.zeros((0, 2))
    )
    assert np.array_equal(path_values(path, 0.5), np.zeros((3, 2)))
    with pytest.raises(InvalidGridError):
        path_values(path, 0.0)


def test_increments_telescope_to_terminal_value():
    path = simulate_levy_path(SPEC_B1, 1.0, 0.02, 9)
    vals = path_values(path, 2.0**-6)
    total = np.diff(vals, axis=0).sum(axis=0)
    final = path.jumps.sum(axis=0)
    assert np.allclose(total, final, rtol=1e-12, atol=1e-12)
    assert np.array_equal(vals[0], np.zeros(2))


def test_increment_stationarity_two_sample_ks():
    # increments over disjoint equal-length windows are i.i.d.
    rng = np.random.default_rng(33)
    first, second = [], []
    for _ in range(1000):
        p = simulate_levy_path(SPEC_B1, 1.0, 0.02, rng)
        v = p.values_at(np.array([0.0, 0.25, 0.5, 0.75]))
        first.append(v[1] - v[0])
        second.append(v[3] - v[2])
    first = np.array(first)
    second = np.array(second)
    for coord in range(2):
        res = stats.ks_2samp(first[:, coord], second[:, coord])
        assert res.pvalue > 0.01


def test_jump_outer_sums_are_psd():
    rng = np.random.default_rng(8)
    for _ in range(20):
        p = simulate_levy_path(SPEC_B1, 1.0, 0.05, rng)
        q = p.jumps.T @ p.jumps
        assert np.linalg.eigvalsh(q).min() >= -1e-12


def test_accumulate_matches_materialized_binning_in_law():
    # stream accumulator and materialized path agree on summary laws
    rng = np.random.default_rng(55)
    tr_stream = []
    tr_path = []
    for _ in range(400):
        cells, tq, n = accumulate_cell_increments(SPEC_B1, 1.0, 0.05, 64, rng)
        tr_stream.append(np.trace(tq))
        p = simulate_levy_path(SPEC_B1, 1.0, 0.05, rng)
        tr_path.append(float(np.sum(p.jumps**2)))
        assert np.allclose(cells.sum(axis=0).sum(), cells.sum())
    res = stats.ks_2samp(tr_stream, tr_path)
    assert res.pvalue > 0.01


def test_integral_identity_volatility_matches_underlying():
    xvals, path, vol = simulate_integral_path(
        SPEC_B1, ConstantVol(np.eye(2)), 1.0, 0.02, 0.125, 77
    )
    assert np.array_equal(xvals, path_values(path, 0.125))
    assert vol.breaks.size == 0


def test_integral_scalar_volatility_scales_exactly():
    xvals, path, _ = simulate_integral_path(
        SPEC_B1, ConstantVol(2.0 * np.eye(2)), 1.0, 0.02, 0.125, 78
    )
    base = path_values(path, 0.125)
    assert np.array_equal(xvals, 2.0 * base)
    inc_x = np.diff(xvals, axis=0)
    inc_l = np.diff(base, axis=0)
    assert np.array_equal(inc_x.T @ inc_x, 4.0 * (inc_l.T @ inc_l))


def test_integral_piecewise_true_qv_decomposition():
    sig_l = np.array([[1.0, 0.2], [0.0, 1.0]])
    sig_r = np.array([[2.0, 0.0], [0.5, 0.7]])
    vol = PiecewiseConstantVol(breakpoints=[0.5], matrices=[sig_l, sig_r])
    _, path, volpath = simulate_integral_path(SPEC_B1, vol, 1.0, 0.02, 0.125, 79)
    jumps = path.jumps
    left = path.times <= 0.5
    ql = jumps[left].T @ jumps[left]
    qr = jumps[~left].T @ jumps[~left]
    expected = sig_l @ ql @ sig_l.T + sig_r @ qr @ sig_r.T
    got = integral_true_qv(path, volpath, 1.0)
    assert np.allclose(got, expected, rtol=1e-12, atol=1e-14)


def test_left_limit_at_breakpoint_uses_left_matrix():
    vol = PiecewiseConstantVol(
        breakpoints=[0.5], matrices=[np.eye(2), 3.0 * np.eye(2)]
    ).realize(1.0, 0.1, None)
    assert np.array_equal(vol.left_limit(0.5), np.eye(2))
    assert np.array_equal(vol.value(0.5), 3.0 * np.eye(2))
    path = JumpPath(
        spec=SPEC_B1,
        T=1.0,
        eps=0.1,
        times=np.array([0.5]),
        jumps=np.array([[1.0, 0.0]]),
    )
    assert np.array_equal(transformed_jumps(path, vol), np.array([[1.0, 0.0]]))


def test_ou_diagonal_volatility_is_step_path():
    vol = OUDiagonalVol(rate=2.0, level=1.0, vol=0.3)
    sv = vol.realize_d(2, 1.0, 0.25, np.random.default_rng(5))
    assert sv.mats.shape == (5, 2, 2)
    assert np.array_equal(sv.breaks, np.array([0.25, 0.5, 0.75, 1.0]))
    # diagonal with positive-mean entries around the level
    off = sv.mats[:, 0, 1]
    assert np.all(off == 0.0)


def test_path_export_round_trip_bit_exact():
    path = simulate_levy_path(SPEC_B1, 1.0, 0.02, 4242)
    text = path_to_text(path)
    back = read_path(io.StringIO(text))
    assert np.array_equal(back.times, path.times)
    assert np.array_equal(back.jumps, path.jumps)
    assert back.seed == 4242
    assert back.T == path.T and back.eps == path.eps
    # QV recomputed from the re-import is bit-exact
    q0 = path.jumps.T @ path.jumps
    q1 = back.jumps.T @ back.jumps
    assert np.array_equal(q0, q1)


def test_choose_truncation_eps_reports_budget():
    choice = choose_truncation_eps(SPEC_B1, 1.0, 17, budget=1e-3, pilot_paths=16)
    assert choice.eps > 0
    assert choice.truncated_qv_mass >= 0
    lam = expected_jump_count(SPEC_B1, 1.0, choice.eps)
    assert lam <= 1e6 * 1.01
