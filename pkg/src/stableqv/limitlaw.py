"""The matrix-valued stable limit law of the realised QV error.

The rescaled estimation error converges to a matrix-valued beta-stable
Levy process U whose Levy measure, in polar form over the unit sphere of
the Frobenius norm, is

    nu_U(B) = (1 / 2 beta) int mu(dz) int 1_B(rho z) rho^(-1-beta) d rho,

with directional measure

    mu(dz) = 1_z((t1 (*) t2) / ||t1 (*) t2||) (2 (1 + <t1, t2>^2))^(beta/2)
             H(d t1) H(d t2),

where x (*) y = x y^T + y x^T.  Since ||x (*) y||^2 = 2(||x||^2 ||y||^2
+ <x, y>^2), the weight is exactly ||t1 (*) t2||^beta and every direction
is a rank <= 2 symmetric matrix.  Sampling uses the same series
representation as the path simulator, with radial mass mu(S) / (2 beta^2)
above level 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ResourceLimitError
from .measures import DirectionalMeasure, StableLevySpec
from .qv import SymMatrix, _packing
from .simulate import MAX_EXPECTED_JUMPS, StepVolatility, _as_rng


def sym_tensor(x: np.ndarray, y: np.ndarray) -> SymMatrix:
    """x y^T + y x^T as a SymMatrix."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("sym_tensor needs two vectors of equal dimension")
    iu, ju, _ = _packing(len(x))
    return SymMatrix(len(x), x[iu] * y[ju] + y[iu] * x[ju])


def _packed_pair_directions(dirs_i: np.ndarray, dirs_j: np.ndarray):
    """Packed t1 (*) t2, its Frobenius norm, and <t1, t2> for row pairs."""
    d = dirs_i.shape[1]
    iu, ju, _ = _packing(d)
    packed = dirs_i[:, iu] * dirs_j[:, ju] + dirs_j[:, iu] * dirs_i[:, ju]
    dots = np.sum(dirs_i * dirs_j, axis=1)
    norms = np.sqrt(2.0 * (1.0 + dots**2))
    return packed, norms, dots


def unpack_rows(d: int, packed: np.ndarray) -> np.ndarray:
    """Packed upper-triangle rows back to full symmetric matrices (n, d, d)."""
    iu, ju, _ = _packing(d)
    out = np.empty((packed.shape[0], d, d))
    out[:, iu, ju] = packed
    out[:, ju, iu] = packed
    return out


@dataclass
class LimitSpec:
    """Total mass and direction sampler of the limit directional measure mu.

    For atomic H the measure is enumerated exactly over ordered atom
    pairs; for uniform H the mass comes from Monte Carlo integration (the
    standard error is kept) and directions are drawn by rejection, whose
    weight (2 (1 + <t1,t2>^2))^(beta/2) is bounded by 2^beta.

    ``pair_tensors_packed``/``pair_weights`` retain, in the atomic case,
    the unnormalized tensors t1 (*) t2 with plain product weights w1 w2 —
    the alternative "unnormalized direction" representation of nu_U used
    by the exact i.i.d.-case tests.
    """

    base: StableLevySpec
    mu_mass: float
    mu_mass_se: float = 0.0
    # atomic enumeration (None for uniform H)
    dir_packed: np.ndarray | None = None  # (K, P) unit-Frobenius directions
    dir_probs: np.ndarray | None = None  # (K,) categorical probabilities
    pair_tensors_packed: np.ndarray | None = None  # (K, P) unnormalized
    pair_weights: np.ndarray | None = None  # (K,) products w1 * w2
    _cum: np.ndarray | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def beta(self) -> float:
        return self.base.beta

    @property
    def is_atomic(self) -> bool:
        return self.dir_packed is not None

    def sample_directions_packed(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """(n, P) packed unit-Frobenius directions distributed as mu / mu(S)."""
        if self.is_atomic:
            if self._cum is None:
                self._cum = np.cumsum(self.dir_probs)
            idx = np.searchsorted(self._cum, rng.random(n), side="right")
            idx = np.minimum(idx, len(self.dir_probs) - 1)
            return self.dir_packed[idx]
        beta = self.beta
        bound = 2.0**beta
        out = np.empty((n, self.dir_packed_width))
        filled = 0
        while filled < n:
            m = max(64, int(1.3 * (n - filled) / 2 ** (-beta / 2.0)))
            t1 = self.base.H.sample(m, rng)
            t2 = self.base.H.sample(m, rng)
            packed, norms, dots = _packed_pair_directions(t1, t2)
            w = (2.0 * (1.0 + dots**2)) ** (beta / 2.0)
            accept = rng.random(m) < w / bound
            take = packed[accept] / norms[accept, None]
            k = min(len(take), n - filled)
            out[filled : filled + k] = take[:k]
            filled += k
        return out

    @property
    def dir_packed_width(self) -> int:
        d = self.d
        return d * (d + 1) // 2

    def sample_directions(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """(n, d, d) symmetric unit-Frobenius direction matrices."""
        return unpack_rows(self.d, self.sample_directions_packed(n, rng))

    def mu_restricted(self, predicate: Callable[[np.ndarray], bool]) -> float:
        """mu(B) for a predicate on full direction matrices (atomic: exact)."""
        if not self.is_atomic:
            raise ValueError(
                "exact restriction needs atomic H; use mu_restricted_mc"
            )
        full = unpack_rows(self.d, self.dir_packed)
        keep = np.array([bool(predicate(z)) for z in full])
        return float(np.sum(self.dir_probs[keep])) * self.mu_mass

    def mu_restricted_mc(
        self, predicate, rng: np.random.Generator, n_samples: int = 100_000
    ) -> float:
        """Monte Carlo mu(B) via the direction sampler."""
        zs = self.sample_directions(n_samples, rng)
        frac = float(np.mean([bool(predicate(z)) for z in zs]))
        return frac * self.mu_mass

    def mu_prime_mass(self, predicate: Callable[[np.ndarray], bool]) -> float:
        """Mass of the unnormalized-direction measure on a set (atomic only).

        Sums w1 * w2 over ordered atom pairs whose tensor t1 (*) t2
        satisfies the predicate.
        """
        if self.pair_tensors_packed is None:
            raise ValueError("unnormalized pair atoms are enumerable only for atomic H")
        full = unpack_rows(self.d, self.pair_tensors_packed)
        keep = np.array([bool(predicate(z)) for z in full])
        return float(np.sum(self.pair_weights[keep]))


def mu_mass_and_sampler(
    base: StableLevySpec, rng=None, n_mc: int = 1_000_000
) -> LimitSpec:
    """Construct the limit directional measure for a process specification.

    Atomic H: exact enumeration over ordered atom pairs; every pair
    (t1, t2) with weights w1, w2 contributes the direction
    (t1 (*) t2)/||.|| with mass w1 w2 (2 (1 + <t1,t2>^2))^(beta/2).
    Uniform H: the total mass is integrated by Monte Carlo over ``n_mc``
    pairs (``rng`` seeds it; defaults to a fixed stream) and the sampler
    works by rejection.
    """
    H = base.H
    beta = base.beta
    if H.is_atomic:
        dirs = H.directions
        w = H.weights
        n = len(w)
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        ii = ii.ravel()
        jj = jj.ravel()
        packed, norms, dots = _packed_pair_directions(dirs[ii], dirs[jj])
        stable_w = (2.0 * (1.0 + dots**2)) ** (beta / 2.0)
        weights = w[ii] * w[jj] * stable_w
        mass = float(np.sum(weights))
        return LimitSpec(
            base=base,
            mu_mass=mass,
            mu_mass_se=0.0,
            dir_packed=packed / norms[:, None],
            dir_probs=weights / mass,
            pair_tensors_packed=packed,
            pair_weights=w[ii] * w[jj],
        )
    gen, _ = _as_rng(rng if rng is not None else 0)
    h_mass = H.total_mass()
    # <t1, t2> for i.i.d. uniform directions equals the first coordinate of
    # a single uniform direction, by rotation invariance.
    c = gen.standard_normal((n_mc, H.d))
    c = c[:, 0] / np.linalg.norm(c, axis=1)
    vals = (2.0 * (1.0 + c**2)) ** (beta / 2.0)
    mean = float(np.mean(vals))
    se = float(np.std(vals) / math.sqrt(n_mc))
    return LimitSpec(
        base=base,
        mu_mass=h_mass**2 * mean,
        mu_mass_se=h_mass**2 * se,
    )


def nu_u_tail(
    limit: LimitSpec,
    predicate: Callable[[np.ndarray], bool],
    w: float,
    rng=None,
    n_samples: int = 100_000,
) -> float:
    """nu_U({rho z : z in B, rho > w}) = mu(B) w^-beta / (2 beta^2)."""
    if w <= 0:
        raise ValueError(f"tail level must be positive, got {w}")
    if limit.is_atomic:
        mu_b = limit.mu_restricted(predicate)
    else:
        gen, _ = _as_rng(rng if rng is not None else 0)
        mu_b = limit.mu_restricted_mc(predicate, gen, n_samples)
    beta = limit.beta
    return mu_b * w ** (-beta) / (2.0 * beta**2)


def expected_u_jump_count(limit: LimitSpec, t: float, eps: float) -> float:
    """Mean number of U-jumps with Frobenius norm >= eps on [0, t]."""
    beta = limit.beta
    return t * limit.mu_mass * eps ** (-beta) / (2.0 * beta**2)


def u_jump_stream(
    limit: LimitSpec, t: float, eps: float, rng
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jump times, radii and packed directions of U on [0, t], norm >= eps.

    Radii follow rho_i = (2 beta^2 Gamma_i / (t mu(S)))^(-1/beta) for a
    unit-rate Poisson arrival sequence truncated at eps; times are uniform
    on (0, t]; directions i.i.d. from mu / mu(S).  No compensation: nu_U
    is symmetric because H is.
    """
    if eps <= 0:
        raise ValueError(f"truncation eps must be positive, got {eps}")
    lam = expected_u_jump_count(limit, t, eps)
    if lam > MAX_EXPECTED_JUMPS:
        raise ResourceLimitError(
            f"expected U-jump count {lam:.3e} exceeds guard {MAX_EXPECTED_JUMPS:.0e}"
        )
    gen, _ = _as_rng(rng)
    beta = limit.beta
    n = int(gen.poisson(lam))
    gammas = lam * (1.0 - gen.random(n))
    radii = (2.0 * beta**2 * gammas / (t * limit.mu_mass)) ** (-1.0 / beta)
    times = t * (1.0 - gen.random(n))
    dirs = limit.sample_directions_packed(n, gen)
    return times, radii, dirs


def sample_u(limit: LimitSpec, t: float, eps: float, rng) -> SymMatrix:
    """One draw of U_t via the truncated series representation."""
    _, radii, dirs = u_jump_stream(limit, t, eps, rng)
    return SymMatrix(limit.d, radii @ dirs if len(radii) else np.zeros(limit.dir_packed_width))


def sample_u_batch(
    limit: LimitSpec,
    t: float,
    eps: float,
    n: int,
    rng,
    chunk: int = 2_000_000,
) -> np.ndarray:
    """n independent draws of U_t, packed upper triangles; (n, d(d+1)/2).

    Identical in law to n calls of sample_u but consumes the random stream
    in a different order; jumps are generated flat across draws and
    reduced per draw, never holding more than ``chunk`` jumps.
    """
    lam = expected_u_jump_count(limit, t, eps)
    if lam > MAX_EXPECTED_JUMPS:
        raise ResourceLimitError(
            f"expected U-jump count {lam:.3e} exceeds guard {MAX_EXPECTED_JUMPS:.0e}"
        )
    gen, _ = _as_rng(rng)
    beta = limit.beta
    counts = gen.poisson(lam, n)
    ends = np.cumsum(counts)
    out = np.zeros((n, limit.dir_packed_width))
    start_draw = 0
    while start_draw < n:
        # grow the group until it holds roughly `chunk` jumps
        base_jumps = ends[start_draw - 1] if start_draw else 0
        end_draw = int(np.searchsorted(ends, base_jumps + chunk, side="left")) + 1
        end_draw = min(max(end_draw, start_draw + 1), n)
        m = int(ends[end_draw - 1] - base_jumps)
        if m > 0:
            radii = eps * (1.0 - gen.random(m)) ** (-1.0 / beta)
            dirs = limit.sample_directions_packed(m, gen)
            contrib = radii[:, None] * dirs
            draw_idx = np.repeat(
                np.arange(start_draw, end_draw),
                counts[start_draw:end_draw],
            ) - start_draw
            width = end_draw - start_draw
            for p in range(limit.dir_packed_width):
                out[start_draw:end_draw, p] += np.bincount(
                    draw_idx, weights=contrib[:, p], minlength=width
                )
        start_draw = end_draw
    return out


def conditional_limit_sample(
    vol_path: StepVolatility, limit: LimitSpec, eps: float, rng
) -> SymMatrix:
    """One draw of the conditional limit: sum_i sigma(tau_i-) rho_i Z_i sigma(tau_i-)^T.

    The jump stream of U over [0, vol_path.horizon] is weighted by the
    left limit of the realized volatility step path at each jump time —
    the exact jump-sum evaluation of the matrix-valued integral of the
    volatility against U.
    """
    d = limit.d
    if vol_path.d != d:
        raise ValueError(
            f"volatility dimension {vol_path.d} does not match limit dimension {d}"
        )
    times, radii, dirs = u_jump_stream(limit, vol_path.horizon, eps, rng)
    acc = np.zeros((d, d))
    if len(radii):
        seg = vol_path.segment_of_left_limit(times)
        for s in np.unique(seg):
            mask = seg == s
            m = unpack_rows(d, (radii[mask] @ dirs[mask])[None])[0]
            sig = vol_path.mats[s]
            acc = acc + sig @ m @ sig.T
    return SymMatrix.from_array(acc)


class UTruncationChoice(NamedTuple):
    eps: float
    residual_budget: float
    budget_met: bool


def choose_u_truncation(
    limit: LimitSpec,
    t: float,
    rng,
    budget: float = 1e-3,
    pilot_draws: int = 256,
    max_expected: float = 1e6,
) -> UTruncationChoice:
    """Pick the series cutoff from a small-jump residual budget.

    The discarded jumps are symmetric and cancel in law; their absolute
    size is budgeted against a pilot median of ||U_t||: for beta < 1 by
    the expected truncated Frobenius mass
    t mu(S) eps^(1-beta) / (2 beta (1-beta)), and for beta >= 1 (where
    that mass is infinite) by the L2 size of the residual,
    sqrt(t mu(S) eps^(2-beta) / (2 beta (2-beta))).  The result is floored
    at the cutoff implied by ``max_expected`` jumps per draw.
    """
    gen, _ = _as_rng(rng)
    beta = limit.beta
    mass = limit.mu_mass
    eps_pilot = (t * mass / (2.0 * beta**2 * 2000.0)) ** (1.0 / beta)
    norms = [
        sample_u(limit, t, eps_pilot, gen).frobenius() for _ in range(pilot_draws)
    ]
    target = budget * float(np.median(norms))
    if beta < 1.0:
        eps_budget = (
            target * 2.0 * beta * (1.0 - beta) / (t * mass)
        ) ** (1.0 / (1.0 - beta))
    else:
        eps_budget = (
            target**2 * 2.0 * beta * (2.0 - beta) / (t * mass)
        ) ** (1.0 / (2.0 - beta))
    eps_guard = (t * mass / (2.0 * beta**2 * max_expected)) ** (1.0 / beta)
    eps = max(eps_budget, eps_guard)
    if beta < 1.0:
        resid = t * mass * eps ** (1.0 - beta) / (2.0 * beta * (1.0 - beta))
    else:
        resid = math.sqrt(t * mass * eps ** (2.0 - beta) / (2.0 * beta * (2.0 - beta)))
    return UTruncationChoice(
        eps=eps, residual_budget=resid, budget_met=eps_budget >= eps_guard
    )
