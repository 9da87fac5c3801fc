"""Path generation for symmetric stable processes and jump-driven integrals.

Jumps with norm above a truncation level eps arrive as a Poisson process
with mean T * H(S_d) * eps^-beta / beta; their radii follow the series
representation rho_i = (beta * Gamma_i / (T * H(S_d)))^(-1/beta) for a
unit-rate Poisson arrival sequence Gamma_i, directions are i.i.d. from
H / H(S_d), and jump times are i.i.d. uniform on (0, T].  No compensating
drift is needed because H is symmetric.  Every path keeps its full jump
list, so the true quadratic variation is available exactly.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidGridError, ResourceLimitError
from .measures import DirectionalMeasure, StableLevySpec, spec_from_dict

# Guard on the expected number of retained jumps per path.
MAX_EXPECTED_JUMPS = 1e8


def expected_jump_count(spec: StableLevySpec, T: float, eps: float) -> float:
    """Mean number of jumps with norm >= eps on [0, T]."""
    return T * spec.tail_mass(eps)


def truncated_qv_mass(spec: StableLevySpec, T: float, eps: float) -> float:
    """Expected quadratic-variation mass lost to truncation at eps.

    Integrates rho^2 against the radial density below the cutoff:
    T * H(S_d) * eps^(2-beta) / (2-beta).
    """
    return (
        T * spec.H.total_mass() * eps ** (2.0 - spec.beta) / (2.0 - spec.beta)
    )


def _as_rng(rng) -> tuple[np.random.Generator, int | None]:
    """Accept an int seed or a Generator; report the seed when known."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    seed = int(rng)
    return np.random.default_rng(seed), seed


@dataclass(eq=False)
class JumpPath:
    """A simulated pure-jump path: sorted jump times and jump vectors.

    The path value at t is the sum of all jumps with time <= t.  Metadata
    records the truncation level, the expected QV mass it discarded, and
    the seed when the path was built from an integer seed.
    """

    spec: StableLevySpec
    T: float
    eps: float
    times: np.ndarray  # (n,), strictly increasing in (0, T]
    jumps: np.ndarray  # (n, d)
    seed: int | None = None
    truncated_qv_mass: float = 0.0

    @property
    def n_jumps(self) -> int:
        return len(self.times)

    def values_at(self, grid: np.ndarray) -> np.ndarray:
        """Path values L_t at the given times; (len(grid), d)."""
        cum = np.vstack([np.zeros(self.spec.d), np.cumsum(self.jumps, axis=0)])
        idx = np.searchsorted(self.times, grid, side="right")
        return cum[idx]


def simulate_levy_path(spec: StableLevySpec, T: float, eps: float, rng) -> JumpPath:
    """Simulate all jumps of norm >= eps of the stable process on [0, T]."""
    if eps <= 0:
        raise ValueError(f"truncation eps must be positive, got {eps}")
    if T <= 0:
        raise ValueError(f"horizon must be positive, got {T}")
    lam = expected_jump_count(spec, T, eps)
    if lam > MAX_EXPECTED_JUMPS:
        raise ResourceLimitError(
            f"expected jump count {lam:.3e} exceeds guard {MAX_EXPECTED_JUMPS:.0e}; "
            "increase eps"
        )
    gen, seed = _as_rng(rng)
    mass = spec.H.total_mass()
    n = int(gen.poisson(lam))
    # Poisson arrivals on [0, lam] are n sorted uniforms; (1-u) keeps them in (0, lam].
    gammas = np.sort(lam * (1.0 - gen.random(n)))
    radii = (spec.beta * gammas / (T * mass)) ** (-1.0 / spec.beta)
    dirs = spec.H.sample(n, gen)
    raw_times = T * (1.0 - gen.random(n))
    # continuous times collide only by floating-point accident; redraw any ties
    while n > 1:
        dup = np.flatnonzero(np.diff(np.sort(raw_times)) == 0.0)
        if dup.size == 0:
            break
        sorted_t = np.sort(raw_times)
        clash = np.isin(raw_times, sorted_t[dup])
        raw_times[clash] = T * (1.0 - gen.random(int(np.sum(clash))))
    order = np.argsort(raw_times, kind="stable")
    return JumpPath(
        spec=spec,
        T=T,
        eps=eps,
        times=raw_times[order],
        jumps=(radii[:, None] * dirs)[order],
        seed=seed,
        truncated_qv_mass=truncated_qv_mass(spec, T, eps),
    )


def n_grid_steps(T: float, delta: float) -> int:
    """floor(T / delta) with a snap against float fuzz on exact divisions."""
    return int(math.floor(T / delta + 1e-9))


def path_values(path: JumpPath, delta: float) -> np.ndarray:
    """Sample the path at 0, delta, ..., floor(T/delta)*delta; (n+1, d)."""
    if delta <= 0 or delta > path.T:
        raise InvalidGridError(f"grid step must lie in (0, T], got {delta}")
    n = n_grid_steps(path.T, delta)
    grid = np.arange(n + 1) * delta
    return path.values_at(grid)


class TruncationChoice(NamedTuple):
    eps: float
    truncated_qv_mass: float
    qv_budget_met: bool


def choose_truncation_eps(
    spec: StableLevySpec,
    T: float,
    rng,
    budget: float = 1e-4,
    pilot_paths: int = 64,
    max_expected: float = 1e6,
) -> TruncationChoice:
    """Pick eps so the truncated QV mass is <= budget * median tr([L]_T).

    A pilot run at a coarse cutoff estimates the median trace.  The exact
    budget can demand more jumps than is computable for beta well above 1,
    so the result is floored at the cutoff implied by ``max_expected``
    jumps per path; ``qv_budget_met`` reports whether the budget survived.
    """
    gen, _ = _as_rng(rng)
    mass = spec.H.total_mass()
    eps_pilot = (T * mass / (spec.beta * 2e4)) ** (1.0 / spec.beta)
    traces = []
    for _ in range(pilot_paths):
        p = simulate_levy_path(spec, T, eps_pilot, gen)
        traces.append(float(np.sum(p.jumps**2)))
    med = float(np.median(traces))
    target = budget * med
    eps_budget = (target * (2.0 - spec.beta) / (T * mass)) ** (1.0 / (2.0 - spec.beta))
    eps_guard = (T * mass / (spec.beta * max_expected)) ** (1.0 / spec.beta)
    eps = max(eps_budget, eps_guard)
    return TruncationChoice(
        eps=eps,
        truncated_qv_mass=truncated_qv_mass(spec, T, eps),
        qv_budget_met=eps_budget >= eps_guard,
    )


def accumulate_cell_increments(
    spec: StableLevySpec,
    T: float,
    eps: float,
    n_cells: int,
    rng,
    chunk: int = 2_000_000,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Per-cell jump sums and exact jump-sum QV, streamed in chunks.

    Bins every jump into the regular grid of ``n_cells`` cells over [0, T]
    without materializing the jump list: given the Poisson count, radii are
    i.i.d. Pareto(beta, eps), which is the series representation with the
    arrival order forgotten.  Returns (cell_sums (n_cells, d),
    true_qv (d, d), n_jumps).  cell_sums[i] is the increment of the path
    over ((i)T/n, (i+1)T/n].
    """
    lam = expected_jump_count(spec, T, eps)
    if lam > MAX_EXPECTED_JUMPS:
        raise ResourceLimitError(
            f"expected jump count {lam:.3e} exceeds guard {MAX_EXPECTED_JUMPS:.0e}"
        )
    gen, _ = _as_rng(rng)
    d = spec.d
    inv_beta = -1.0 / spec.beta
    cell_sums = np.zeros((n_cells, d))
    qv = np.zeros((d, d))
    n = int(gen.poisson(lam))
    left = n
    while left > 0:
        m = min(left, chunk)
        left -= m
        radii = eps * (1.0 - gen.random(m)) ** inv_beta
        dirs = spec.H.sample(m, gen)
        jumps = radii[:, None] * dirs
        idx = np.minimum(
            (gen.random(m) * n_cells).astype(np.int64), n_cells - 1
        )
        for j in range(d):
            cell_sums[:, j] += np.bincount(idx, weights=jumps[:, j], minlength=n_cells)
        qv += jumps.T @ jumps
    return cell_sums, 0.5 * (qv + qv.T), n


# ---------------------------------------------------------------------------
# Volatility specifications and jump-driven integrals
# ---------------------------------------------------------------------------

@dataclass
class StepVolatility:
    """Piecewise-constant matrix path on [0, horizon].

    ``mats[0]`` applies on [0, breaks[0]), ``mats[i]`` on
    [breaks[i-1], breaks[i]), and ``mats[-1]`` after the last breakpoint.
    """

    breaks: np.ndarray  # (K,) interior breakpoints, strictly increasing
    mats: np.ndarray  # (K+1, d, d)
    horizon: float

    @property
    def d(self) -> int:
        return self.mats.shape[1]

    def segment_of_left_limit(self, t: np.ndarray) -> np.ndarray:
        """Index of the segment governing the left limit at each time."""
        return np.searchsorted(self.breaks, t, side="left")

    def left_limit(self, t: float) -> np.ndarray:
        return self.mats[int(np.searchsorted(self.breaks, t, side="left"))]

    def value(self, t: float) -> np.ndarray:
        return self.mats[int(np.searchsorted(self.breaks, t, side="right"))]


@dataclass
class ConstantVol:
    matrix: np.ndarray

    def realize(self, T: float, delta: float, rng) -> StepVolatility:
        m = np.asarray(self.matrix, dtype=float)
        return StepVolatility(breaks=np.empty(0), mats=m[None], horizon=T)


@dataclass
class PiecewiseConstantVol:
    breakpoints: np.ndarray  # increasing times in [0, T)
    matrices: list  # len(breakpoints) + 1 matrices

    def realize(self, T: float, delta: float, rng) -> StepVolatility:
        b = np.asarray(self.breakpoints, dtype=float)
        mats = np.asarray(self.matrices, dtype=float)
        if len(mats) != len(b) + 1:
            raise ValueError("need one more matrix than breakpoints")
        if np.any(b < 0) or np.any(b >= T) or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be increasing within [0, T)")
        return StepVolatility(breaks=b, mats=mats, horizon=T)


@dataclass
class OUDiagonalVol:
    """Diagonal volatility with mean-reverting entries, independent of L.

    Each diagonal entry follows dS = rate (level - S) dt + vol dB, sampled
    exactly at the grid times and frozen between them, so the realized
    volatility is itself a step path and the integral stays a finite
    jump-weighted sum.
    """

    rate: float
    level: float
    vol: float

    def realize_d(self, d: int, T: float, delta: float, rng) -> StepVolatility:
        gen, _ = _as_rng(rng)
        n = n_grid_steps(T, delta)
        phi = math.exp(-self.rate * delta)
        sd = self.vol * math.sqrt((1.0 - phi * phi) / (2.0 * self.rate))
        s = np.empty((n + 1, d))
        s[0] = self.level
        for i in range(n):
            s[i + 1] = self.level + (s[i] - self.level) * phi + sd * gen.standard_normal(d)
        mats = np.zeros((n + 1, d, d))
        rows = np.arange(d)
        mats[:, rows, rows] = s
        return StepVolatility(
            breaks=np.arange(1, n + 1) * delta, mats=mats, horizon=T
        )


def _realize_vol(vol, d: int, T: float, delta: float, rng) -> StepVolatility:
    if isinstance(vol, StepVolatility):
        return vol
    if isinstance(vol, OUDiagonalVol):
        return vol.realize_d(d, T, delta, rng)
    return vol.realize(T, delta, rng)


def transformed_jumps(path: JumpPath, vol: StepVolatility) -> np.ndarray:
    """sigma(t_j-) @ dL_j for every jump; (n, d)."""
    seg = vol.segment_of_left_limit(path.times)
    out = np.empty_like(path.jumps)
    for s in np.unique(seg):
        mask = seg == s
        out[mask] = path.jumps[mask] @ vol.mats[s].T
    return out


def simulate_integral_path(
    spec: StableLevySpec, vol, T: float, eps: float, delta: float, rng
) -> tuple[np.ndarray, JumpPath, StepVolatility]:
    """Simulate X_t = sum_{t_j <= t} sigma(t_j-) dL_j on the grid.

    The volatility path is realized first from the same stream (it is
    independent of L), then the jump path.  Returns (grid values of X,
    the underlying JumpPath, the realized step volatility).
    """
    gen, _ = _as_rng(rng)
    volpath = _realize_vol(vol, spec.d, T, delta, gen)
    if volpath.d != spec.d:
        raise ValueError(
            f"volatility dimension {volpath.d} does not match process dimension {spec.d}"
        )
    path = simulate_levy_path(spec, T, eps, gen)
    tj = transformed_jumps(path, volpath)
    cum = np.vstack([np.zeros(spec.d), np.cumsum(tj, axis=0)])
    n = n_grid_steps(T, delta)
    grid = np.arange(n + 1) * delta
    idx = np.searchsorted(path.times, grid, side="right")
    return cum[idx], path, volpath


def integral_true_qv(path: JumpPath, vol: StepVolatility, t: float) -> np.ndarray:
    """Exact QV of the integral process at t from the jump list; (d, d)."""
    tj = transformed_jumps(path, vol)
    keep = path.times <= t
    q = tj[keep].T @ tj[keep]
    return 0.5 * (q + q.T)


# ---------------------------------------------------------------------------
# Columnar export / import
# ---------------------------------------------------------------------------

def write_path(path: JumpPath, dest) -> None:
    """Write the jump list as delimited text; 17 significant digits."""
    close = False
    if isinstance(dest, (str, bytes)):
        dest = open(dest, "w")
        close = True
    try:
        dest.write(f"# spec\t{path.spec.to_json()}\n")
        dest.write(f"# T\t{path.T:.17g}\n")
        dest.write(f"# eps\t{path.eps:.17g}\n")
        dest.write(f"# seed\t{'' if path.seed is None else path.seed}\n")
        dest.write(f"# truncated_qv_mass\t{path.truncated_qv_mass:.17g}\n")
        cols = "\t".join(f"dL{j + 1}" for j in range(path.spec.d))
        dest.write(f"t\t{cols}\n")
        for t, jump in zip(path.times, path.jumps):
            row = "\t".join(f"{x:.17g}" for x in jump)
            dest.write(f"{t:.17g}\t{row}\n")
    finally:
        if close:
            dest.close()


def read_path(src) -> JumpPath:
    """Inverse of write_path; reproduces the jump list bit-exactly."""
    close = False
    if isinstance(src, (str, bytes)):
        src = open(src, "r")
        close = True
    try:
        meta = {}
        header_seen = False
        times, jumps = [], []
        for line in src:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# "):
                key, _, val = line[2:].partition("\t")
                meta[key] = val
            elif not header_seen:
                header_seen = True  # column header row
            else:
                parts = line.split("\t")
                times.append(float(parts[0]))
                jumps.append([float(x) for x in parts[1:]])
        spec = spec_from_dict(json.loads(meta["spec"]))
        return JumpPath(
            spec=spec,
            T=float(meta["T"]),
            eps=float(meta["eps"]),
            times=np.array(times, dtype=float),
            jumps=np.array(jumps, dtype=float).reshape(len(times), spec.d),
            seed=int(meta["seed"]) if meta.get("seed") else None,
            truncated_qv_mass=float(meta["truncated_qv_mass"]),
        )
    finally:
        if close:
            src.close()


def path_to_text(path: JumpPath) -> str:
    buf = io.StringIO()
    write_path(path, buf)
    return buf.getvalue()
