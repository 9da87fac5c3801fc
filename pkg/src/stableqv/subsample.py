"""Subsampling machinery for confidence regions without the limit law.

The observation window (0, 1] is split into M equal blocks.  Comparing
each block's QV at a coarse step k*delta with the same block at the fine
step delta, rescaled by the estimated rate, manufactures M asymptotically
independent draws from the limit law of the estimation error:

    zeta_m = rate(k delta; beta_m) * M^(1/beta_m) * (z(k delta)_m - z(delta)_m),

where beta_m is the ratio estimator computed from the block's own
increments.  The empirical law of the zeta_m (or of a smooth functional
of them) then yields quantiles and confidence intervals for functionals
of the QV at time 1 — using observable quantities only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    DegenerateIncrementError,
    DegenerateSpectrumError,
    InsufficientDataError,
    StableQVError,
    UndefinedEstimateError,
)
from .qv import (
    SymMatrix,
    packed_outer_sums,
    rate_delta,
    realised_qv_terminal,
    upper_labels,
)
from .simulate import n_grid_steps
from .spectral import GAP_TOL_REL, eigen_sorted

_SNAP = 1e-9  # index snap against float fuzz on exact block boundaries

BETA_CLAMP = (0.05, 1.99)


@dataclass
class SubsampleConfig:
    """Block count M, coarsening factor k, moment exponent p, fine step delta.

    The horizon is fixed to 1.  The asymptotic regime wants M, k large
    with k*M*delta small; ``violations`` reports every broken condition
    (the degenerate k = 1 is tolerated by zeta_stats as a diagnostic but
    flagged here).
    """

    M: int
    k: int
    delta: float
    p: float = -0.25

    def violations(self) -> list[str]:
        out = []
        if self.M < 2:
            out.append(f"block count M must be >= 2, got {self.M}")
        if self.k < 2:
            out.append(f"coarsening factor k must be >= 2, got {self.k}")
        if not (-0.5 < self.p < 0.0):
            out.append(f"moment exponent p must lie in (-1/2, 0), got {self.p}")
        if not (0.0 < self.delta < 1.0):
            out.append(f"fine step delta must lie in (0, 1), got {self.delta}")
        else:
            if math.floor(1.0 / (self.M * self.delta) + _SNAP) < 2 * self.k:
                out.append(
                    "each block must hold at least two coarse increments: "
                    f"floor(1/(M delta)) >= 2k fails for M={self.M}, k={self.k}, "
                    f"delta={self.delta}"
                )
            if self.k * self.M * self.delta >= 0.1:
                out.append(
                    f"k*M*delta = {self.k * self.M * self.delta:.4g} must stay below 0.1"
                )
        return out


def default_m_k(delta: float) -> int:
    """Power of 2 near delta^(-1/4); grows while k*M*delta shrinks."""
    v = delta ** -0.25
    return max(2, 2 ** int(round(math.log2(v))))


def block_increment_ranges(delta: float, M: int) -> list[tuple[int, int]]:
    """1-based increment index range [lo, hi] interior to each block.

    Increment i covers ((i-1)*delta, i*delta]; it belongs to block m when
    (i-1)*delta >= (m-1)/M and i*delta <= m/M, so increments straddling a
    boundary are dropped.  Exact boundary hits are snapped to counter
    float fuzz on dyadic grids.
    """
    out = []
    for m in range(1, M + 1):
        lo = int(math.ceil((m - 1) / (M * delta) - _SNAP)) + 1
        hi = int(math.floor(m / (M * delta) + _SNAP))
        out.append((lo, hi))
    return out


def block_qv(values: np.ndarray, delta: float, M: int) -> list[SymMatrix]:
    """Per-block QV z(delta)_m from increments interior to each block."""
    values = np.asarray(values, dtype=float)
    n = n_grid_steps(1.0, delta)
    if values.shape[0] < n + 1:
        raise InsufficientDataError(
            f"need {n + 1} grid values on [0, 1] at step {delta}, got {values.shape[0]}"
        )
    if n < M:
        raise InsufficientDataError(f"{n} increments cannot fill {M} blocks")
    d = values.shape[1]
    out = []
    for lo, hi in block_increment_ranges(delta, M):
        if hi < lo:
            raise InsufficientDataError("a block received no interior increment")
        inc = np.diff(values[lo - 1 : hi + 1], axis=0)
        out.append(SymMatrix(d, packed_outer_sums(inc).sum(axis=0)))
    return out


def beta_hat(values: np.ndarray, delta: float, p: float) -> float:
    """Ratio estimator of the stability index from one grid of observations.

    r = sum ||2-step increments||^p / sum ||1-step increments||^p tends to
    2^(p/beta) by self-similarity, so p log 2 / log r estimates beta.  The
    result is clamped to (0.05, 1.99): the rate delta^(-1/beta) explodes
    as beta -> 0, and admissible beta never reaches the bounds.
    """
    if not (-0.5 < p < 0.0):
        raise ValueError(f"moment exponent p must lie in (-1/2, 0), got {p}")
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 3:
        raise InsufficientDataError("beta_hat needs at least 3 grid values")
    one = np.linalg.norm(np.diff(values, axis=0), axis=1)
    if np.any(one == 0.0):
        raise DegenerateIncrementError(
            "zero increment encountered; negative-power sums are undefined"
        )
    two = np.linalg.norm(values[2:] - values[:-2], axis=1)
    r = float(np.sum(two**p) / np.sum(one**p))
    if abs(r - 1.0) <= 1e-12:
        raise UndefinedEstimateError(f"ratio statistic {r} too close to 1")
    raw = p * math.log(2.0) / math.log(r)
    return min(max(raw, BETA_CLAMP[0]), BETA_CLAMP[1])


@dataclass
class SubsampleReport:
    """Per-block estimates, the rescaled block differences, and quantiles."""

    config: SubsampleConfig
    beta_hat_global: float
    beta_hat_blocks: np.ndarray  # (M,)
    zetas: list  # list[SymMatrix], length M
    functional_samples: np.ndarray | None = None  # (M,) when a functional ran
    quantile_levels: np.ndarray | None = None
    quantiles: np.ndarray | None = None

    def to_text(self) -> str:
        cfg = self.config
        lines = [
            "# subsample report",
            f"# M\t{cfg.M}",
            f"# k\t{cfg.k}",
            f"# delta\t{cfg.delta:.17g}",
            f"# p\t{cfg.p:.17g}",
            f"# beta_hat_global\t{self.beta_hat_global:.17g}",
        ]
        d = self.zetas[0].d
        lines.append("block\tbeta_hat\t" + "\t".join(f"zeta_{c}" for c in upper_labels(d)))
        for m, (bh, z) in enumerate(zip(self.beta_hat_blocks, self.zetas), start=1):
            row = "\t".join(f"{x:.17g}" for x in z.upper)
            lines.append(f"{m}\t{bh:.17g}\t{row}")
        if self.quantiles is not None:
            lines.append("quantile_level\tquantile")
            for lv, q in zip(self.quantile_levels, self.quantiles):
                lines.append(f"{lv:.17g}\t{q:.17g}")
        return "\n".join(lines) + "\n"


def _block_pieces(values: np.ndarray, cfg: SubsampleConfig):
    """Shared per-block computation: beta_m, fine and coarse block QV.

    A block whose coarse and fine QV agree exactly (no jumps, or k = 1)
    has zeta_m = 0 regardless of the rate, so a failing block-level
    beta_hat is tolerated there and recorded as NaN; any other block
    failure propagates with the block index attached.
    """
    values = np.asarray(values, dtype=float)
    n = n_grid_steps(1.0, cfg.delta)
    if values.shape[0] < n + 1:
        raise InsufficientDataError(
            f"need {n + 1} grid values on [0, 1] at step {cfg.delta}, "
            f"got {values.shape[0]}"
        )
    if cfg.M < 1 or cfg.k < 1:
        raise ValueError("M and k must be positive integers")
    d = values.shape[1]
    betas = np.empty(cfg.M)
    fines: list[SymMatrix] = []
    coarses: list[SymMatrix] = []
    for m, (lo, hi) in enumerate(block_increment_ranges(cfg.delta, cfg.M), start=1):
        if hi < lo + 1:
            raise InsufficientDataError(f"block {m} holds fewer than 2 increments")
        seg = values[lo - 1 : hi + 1]
        beta_err = None
        try:
            betas[m - 1] = beta_hat(seg, cfg.delta, cfg.p)
        except StableQVError as exc:
            betas[m - 1] = math.nan
            beta_err = exc
        fine = SymMatrix(d, packed_outer_sums(np.diff(seg, axis=0)).sum(axis=0))
        groups = (hi - lo + 1) // cfg.k
        coarse_vals = seg[0 : groups * cfg.k + 1 : cfg.k]
        if groups >= 1:
            cz = packed_outer_sums(np.diff(coarse_vals, axis=0)).sum(axis=0)
        else:
            cz = np.zeros(d * (d + 1) // 2)
        coarse = SymMatrix(d, cz)
        if beta_err is not None and not np.array_equal(coarse.upper, fine.upper):
            raise type(beta_err)(f"block {m}: {beta_err}") from beta_err
        fines.append(fine)
        coarses.append(coarse)
    return values, n, betas, fines, coarses


def _zeta(cfg: SubsampleConfig, bh: float, fine: SymMatrix, coarse: SymMatrix) -> SymMatrix:
    if np.array_equal(coarse.upper, fine.upper):
        return SymMatrix.zeros(fine.d)
    scale = rate_delta(cfg.k * cfg.delta, bh) * cfg.M ** (1.0 / bh)
    return scale * (coarse - fine)


def zeta_stats(values: np.ndarray, cfg: SubsampleConfig) -> SubsampleReport:
    """Rescaled coarse-minus-fine block QV differences zeta_m.

    Per block: beta_m from the block's own increments, the rate at the
    coarse step k*delta, and the factor M^(1/beta_m); coarse increments
    sum k consecutive fine increments inside the block, incomplete groups
    discarded.  Uses observable quantities only.
    """
    values, n, betas, fines, coarses = _block_pieces(values, cfg)
    zetas = [_zeta(cfg, bh, zf, zc) for bh, zf, zc in zip(betas, fines, coarses)]
    try:
        beta_global = beta_hat(values[: n + 1], cfg.delta, cfg.p)
    except StableQVError:
        if any(z.frobenius() != 0.0 for z in zetas):
            raise
        beta_global = math.nan  # jump-free input: every zeta is exactly zero
    return SubsampleReport(
        config=cfg,
        beta_hat_global=beta_global,
        beta_hat_blocks=betas,
        zetas=zetas,
    )


def empirical_law(samples, query) -> float:
    """Empirical frequency of a set (callable) or CDF at a threshold.

    ``samples`` is a nonempty sequence (matrices for the set form, reals
    for the threshold form); ``query`` is either a predicate applied to
    each sample or a real threshold w giving mean(sample <= w).
    """
    n = len(samples)
    if n == 0:
        raise InsufficientDataError("empirical law of an empty sample list")
    if callable(query):
        return float(sum(bool(query(s)) for s in samples)) / n
    w = float(query)
    arr = np.asarray([float(s) for s in samples])
    return float(np.mean(arr <= w))


def parse_functional(tag: str) -> Callable[[SymMatrix], float]:
    """Smooth functional by name: 'trace', 'lambda_max', or 'entry:i,j' (1-based)."""
    if tag == "trace":
        return lambda s: s.trace()
    if tag == "lambda_max":
        return lambda s: float(np.linalg.eigvalsh(s.full)[-1])
    if tag.startswith("entry:"):
        i, j = (int(x) for x in tag.split(":", 1)[1].split(","))
        return lambda s: s.entry(i - 1, j - 1)
    raise ValueError(f"unknown functional tag {tag!r}")


@dataclass
class CIResult:
    lower: float
    upper: float
    point: float
    report: SubsampleReport


def confidence_interval(
    values: np.ndarray, cfg: SubsampleConfig, f: str, alpha: float
) -> CIResult:
    """Subsampling confidence interval for f(QV at time 1).

    zeta(f)_m rescales f(coarse block QV) - f(fine block QV); its
    empirical quantiles q approximate the limit law of the rescaled
    estimation error of f, giving

        [f_hat - q_(1-alpha/2) / rate(delta), f_hat - q_(alpha/2) / rate(delta)]

    with the rate evaluated at the global beta estimate.  For lambda_max
    the realised QV spectrum must be non-degenerate.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"level alpha must lie in (0, 1), got {alpha}")
    func = parse_functional(f)
    values, n, betas, fines, coarses = _block_pieces(values, cfg)
    rv = realised_qv_terminal(values[: n + 1], cfg.delta)
    if f == "lambda_max":
        es = eigen_sorted(rv)
        thr = GAP_TOL_REL * abs(rv.trace())
        if es.gap <= thr:
            raise DegenerateSpectrumError(
                f"realised QV eigen-gap {es.gap:.3e} at or below {thr:.3e}; "
                "lambda_max is not differentiable here"
            )
    zf = np.empty(cfg.M)
    zetas = []
    for m, (bh, fine, coarse) in enumerate(zip(betas, fines, coarses)):
        zetas.append(_zeta(cfg, bh, fine, coarse))
        if np.array_equal(coarse.upper, fine.upper):
            zf[m] = 0.0
        else:
            scale = rate_delta(cfg.k * cfg.delta, bh) * cfg.M ** (1.0 / bh)
            zf[m] = scale * (func(coarse) - func(fine))
    beta_global = beta_hat(values[: n + 1], cfg.delta, cfg.p)
    rate = rate_delta(cfg.delta, beta_global)
    levels = np.array([alpha / 2.0, 1.0 - alpha / 2.0])
    q = np.quantile(zf, levels)
    point = func(rv)
    report = SubsampleReport(
        config=cfg,
        beta_hat_global=beta_global,
        beta_hat_blocks=betas,
        zetas=zetas,
        functional_samples=zf,
        quantile_levels=levels,
        quantiles=q,
    )
    return CIResult(
        lower=point - q[1] / rate,
        upper=point - q[0] / rate,
        point=point,
        report=report,
    )
