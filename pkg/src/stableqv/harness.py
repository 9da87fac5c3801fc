"""Experiment harness: config validation, seeded replication, result tables.

An experiment is described by one JSON config (a single canonical text
format) naming its kind, the process specification, grid and truncation
parameters, a replication count and a master seed.  Replication r uses
the generator seeded by SeedSequence(master, spawn_key=(r,)), so seeds
are pairwise distinct and reproducible from (master, r) alone; results
are reduced in replication order, which keeps output files byte-identical
across thread counts.  Every run writes a manifest with the config hash,
toolkit version, per-replication seeds, wall-clock and output list (the
manifest's wall-clock field is the one timing-dependent byte in a run).
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, StableQVError
from .limitlaw import (
    expected_u_jump_count,
    mu_mass_and_sampler,
    sample_u,
)
from .measures import StableLevySpec, spec_from_dict
from .qv import SymMatrix, realised_qv, realised_qv_terminal, true_qv, write_qv_table
from .simulate import (
    MAX_EXPECTED_JUMPS,
    accumulate_cell_increments,
    expected_jump_count,
    n_grid_steps,
    path_values,
    read_path,
    simulate_levy_path,
    write_path,
)
from .spectral import eigen_sorted
from .subsample import SubsampleConfig, confidence_interval, parse_functional

EXPERIMENT_KINDS = (
    "simulate",
    "qv-convergence",
    "limit-distribution",
    "spectrum",
    "subsample-coverage",
)


@dataclass
class RunManifest:
    config_hash: str
    version: str
    wall_clock_s: float
    seeds: list
    outputs: list


def canonical_config_text(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_config_text(cfg).encode()).hexdigest()


def replication_seed(master: int, r: int) -> int:
    """Distinct reproducible 64-bit seed for replication r."""
    ss = np.random.SeedSequence(master, spawn_key=(r,))
    return int(ss.generate_state(1, np.uint64)[0])


def replication_rng(master: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(r,)))


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


class _Emitter:
    """Writes result files and can remove everything it created."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: list[Path] = []

    def table(self, name: str, header, rows) -> None:
        path = self.out_dir / name
        with open(path, "w") as f:
            f.write("\t".join(header) + "\n")
            for row in rows:
                f.write("\t".join(_fmt(x) for x in row) + "\n")
        self.files.append(path)

    def text(self, name: str, content: str) -> None:
        path = self.out_dir / name
        path.write_text(content)
        self.files.append(path)

    def writer(self, name: str, fn) -> None:
        path = self.out_dir / name
        with open(path, "w") as f:
            fn(f)
        self.files.append(path)

    def cleanup(self) -> None:
        for f in self.files:
            f.unlink(missing_ok=True)


def _map_ordered(fn, n: int, threads: int) -> list:
    if threads <= 1:
        return [fn(r) for r in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _check_common(cfg: dict, out: list[str]) -> None:
    n = cfg.get("replications", 1)
    if not isinstance(n, int) or n < 1:
        out.append(f"replications must be a positive integer, got {n!r}")
    if not isinstance(cfg.get("seed"), int):
        out.append("seed must be an integer (set it in the config or via --seed)")


def _check_spec(cfg: dict, out: list[str]) -> StableLevySpec | None:
    try:
        return spec_from_dict(cfg["spec"])
    except KeyError:
        out.append("missing 'spec' block")
    except Exception as exc:
        out.append(f"invalid 'spec' block: {exc}")
    return None


def _check_path_sim(cfg: dict, spec, out: list[str]) -> None:
    T = cfg.get("horizon", 1.0)
    eps = cfg.get("eps")
    if not (isinstance(T, (int, float)) and T > 0):
        out.append(f"horizon must be positive, got {T!r}")
    if not (isinstance(eps, (int, float)) and eps > 0):
        out.append(f"eps must be positive, got {eps!r}")
    elif spec is not None and T > 0:
        lam = expected_jump_count(spec, T, eps)
        if lam > MAX_EXPECTED_JUMPS:
            out.append(
                f"expected jump count {lam:.3e} exceeds the guard {MAX_EXPECTED_JUMPS:.0e}"
            )


def validate_config(cfg: dict) -> list[str]:
    """Return every violated precondition of the configuration."""
    out: list[str] = []
    kind = cfg.get("kind")
    if kind == "qv-table":
        if not cfg.get("path_file"):
            out.append("qv-table needs 'path_file'")
        gs = cfg.get("grid_step")
        if not (isinstance(gs, (int, float)) and gs > 0):
            out.append(f"grid_step must be positive, got {gs!r}")
        return out
    if kind not in EXPERIMENT_KINDS:
        out.append(f"unknown experiment kind {kind!r}; known: {EXPERIMENT_KINDS}")
        return out
    _check_common(cfg, out)
    spec = _check_spec(cfg, out)
    if kind == "simulate":
        _check_path_sim(cfg, spec, out)
        gs = cfg.get("grid_step")
        if not (isinstance(gs, (int, float)) and gs > 0):
            out.append(f"grid_step must be positive, got {gs!r}")
    elif kind == "qv-convergence":
        _check_path_sim(cfg, spec, out)
        steps = cfg.get("grid_steps")
        if not steps or not all(
            isinstance(s, (int, float)) and 0 < s < 1 for s in steps
        ):
            out.append("grid_steps must be a nonempty list of steps in (0, 1)")
    elif kind == "limit-distribution":
        eps = cfg.get("eps")
        t = cfg.get("horizon", 1.0)
        if not (isinstance(eps, (int, float)) and eps > 0):
            out.append(f"eps must be positive, got {eps!r}")
        if not (isinstance(t, (int, float)) and t > 0):
            out.append(f"horizon must be positive, got {t!r}")
    elif kind == "spectrum":
        _check_path_sim(cfg, spec, out)
    elif kind == "subsample-coverage":
        _check_path_sim(cfg, spec, out)
        sub = cfg.get("subsample")
        if not isinstance(sub, dict):
            out.append("missing 'subsample' block with M, k, delta (and optional p)")
        else:
            try:
                sc = SubsampleConfig(
                    M=sub["M"], k=sub["k"], delta=sub["delta"], p=sub.get("p", -0.25)
                )
                out.extend(sc.violations())
            except Exception as exc:
                out.append(f"invalid 'subsample' block: {exc}")
        try:
            parse_functional(cfg.get("functional", "trace"))
        except ValueError as exc:
            out.append(str(exc))
        alpha = cfg.get("alpha", 0.1)
        if not (0.0 < alpha < 1.0):
            out.append(f"alpha must lie in (0, 1), got {alpha!r}")
    return out


# ---------------------------------------------------------------------------
# Experiment runners
# ---------------------------------------------------------------------------

def _run_simulate(cfg: dict, em: _Emitter, threads: int) -> None:
    spec = spec_from_dict(cfg["spec"])
    T = float(cfg.get("horizon", 1.0))
    eps = float(cfg["eps"])
    gs = float(cfg["grid_step"])
    master = cfg["seed"]
    n = cfg.get("replications", 1)

    def one(r: int):
        path = simulate_levy_path(spec, T, eps, replication_seed(master, r))
        est = realised_qv(path_values(path, gs), gs)
        return path, est

    results = _map_ordered(one, n, threads)
    for r, (path, est) in enumerate(results):
        em.writer(f"path_{r:04d}.tsv", lambda f, p=path: write_path(p, f))
        em.writer(f"qv_{r:04d}.tsv", lambda f, e=est: write_qv_table(e, f))


def _run_qv_table(cfg: dict, em: _Emitter, threads: int) -> None:
    path = read_path(cfg["path_file"])
    gs = float(cfg["grid_step"])
    est = realised_qv(path_values(path, gs), gs)
    em.writer("qv_table.tsv", lambda f: write_qv_table(est, f))


def _run_qv_convergence(cfg: dict, em: _Emitter, threads: int) -> None:
    spec = spec_from_dict(cfg["spec"])
    T = float(cfg.get("horizon", 1.0))
    eps = float(cfg["eps"])
    steps = [float(s) for s in cfg["grid_steps"]]
    master = cfg["seed"]
    n = cfg.get("replications", 1)

    def one(r: int):
        path = simulate_levy_path(spec, T, eps, replication_seed(master, r))
        rows = []
        for gs in steps:
            t_end = n_grid_steps(T, gs) * gs
            est = realised_qv_terminal(path_values(path, gs), gs)
            tru = true_qv(path, t_end)
            rows.append((gs, (est - tru).frobenius(), tru.trace()))
        return rows

    rows = [row for rep in _map_ordered(one, n, threads) for row in rep]
    em.table("results.tsv", ["delta", "err_tr", "tr_true"], rows)


def _run_limit_distribution(cfg: dict, em: _Emitter, threads: int) -> None:
    spec = spec_from_dict(cfg["spec"])
    t = float(cfg.get("horizon", 1.0))
    eps = float(cfg["eps"])
    master = cfg["seed"]
    n = cfg.get("replications", 1)
    limit = mu_mass_and_sampler(spec, rng=replication_rng(master, 2**31))
    lam = expected_u_jump_count(limit, t, eps)
    if lam > MAX_EXPECTED_JUMPS:
        raise ConfigError(
            f"expected U-jump count {lam:.3e} exceeds the guard {MAX_EXPECTED_JUMPS:.0e}"
        )

    def one(r: int):
        return tuple(sample_u(limit, t, eps, replication_rng(master, r)).upper)

    from .qv import upper_labels

    rows = _map_ordered(one, n, threads)
    em.table(
        "samples.tsv",
        [f"u{lbl[1:]}" for lbl in upper_labels(spec.d)],
        rows,
    )


def _run_spectrum(cfg: dict, em: _Emitter, threads: int) -> None:
    spec = spec_from_dict(cfg["spec"])
    T = float(cfg.get("horizon", 1.0))
    eps = float(cfg["eps"])
    master = cfg["seed"]
    n = cfg.get("replications", 1)

    def one(r: int):
        path = simulate_levy_path(spec, T, eps, replication_seed(master, r))
        es = eigen_sorted(true_qv(path, T))
        return tuple(es.eigenvalues) + (es.gap, es.min_eig)

    rows = _map_ordered(one, n, threads)
    labels = [f"lambda_{i + 1}" for i in range(spec.d)] + ["min_gap", "lambda_min"]
    em.table("spectra.tsv", labels, rows)


def _run_subsample_coverage(cfg: dict, em: _Emitter, threads: int) -> None:
    spec = spec_from_dict(cfg["spec"])
    eps = float(cfg["eps"])
    sub = cfg["subsample"]
    scfg = SubsampleConfig(
        M=sub["M"], k=sub["k"], delta=sub["delta"], p=sub.get("p", -0.25)
    )
    f_tag = cfg.get("functional", "trace")
    func = parse_functional(f_tag)
    alpha = float(cfg.get("alpha", 0.1))
    master = cfg["seed"]
    n = cfg.get("replications", 1)
    n_cells = n_grid_steps(1.0, scfg.delta)

    def one(r: int):
        rng = replication_rng(master, r)
        cells, tq, _ = accumulate_cell_increments(spec, 1.0, eps, n_cells, rng)
        values = np.vstack([np.zeros(spec.d), np.cumsum(cells, axis=0)])
        ci = confidence_interval(values, scfg, f_tag, alpha)
        f_true = func(SymMatrix.from_array(tq))
        covered = int(ci.lower <= f_true <= ci.upper)
        row = (
            r,
            f_true,
            ci.point,
            ci.lower,
            ci.upper,
            covered,
            ci.report.beta_hat_global,
        )
        report_text = ci.report.to_text() if r == 0 else None
        return row, report_text

    results = _map_ordered(one, n, threads)
    rows = [row for row, _ in results]
    em.table(
        "replications.tsv",
        ["replication", "f_true", "f_hat", "ci_lo", "ci_hi", "covered", "beta_hat"],
        rows,
    )
    covered_count = sum(row[5] for row in rows)
    em.table(
        "summary.tsv",
        ["replications", "covered_count", "coverage", "nominal"],
        [(n, covered_count, covered_count / n, 1.0 - alpha)],
    )
    if results and results[0][1] is not None:
        em.text("report_0000.txt", results[0][1])


_RUNNERS = {
    "simulate": _run_simulate,
    "qv-table": _run_qv_table,
    "qv-convergence": _run_qv_convergence,
    "limit-distribution": _run_limit_distribution,
    "spectrum": _run_spectrum,
    "subsample-coverage": _run_subsample_coverage,
}


def run_experiment(cfg: dict, out_dir, threads: int = 1) -> RunManifest:
    """Validate, execute all replications, write tables and the manifest.

    Raises ConfigError listing every violated precondition before any
    work starts; on a failure mid-run every file already written by the
    run is removed.
    """
    violations = validate_config(cfg)
    if violations:
        raise ConfigError("; ".join(violations))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    em = _Emitter(out)
    t0 = time.perf_counter()
    try:
        _RUNNERS[cfg["kind"]](cfg, em, threads)
    except Exception:
        em.cleanup()
        raise
    n = cfg.get("replications", 1)
    master = cfg.get("seed", 0)
    manifest = RunManifest(
        config_hash=config_hash(cfg),
        version=__version__,
        wall_clock_s=time.perf_counter() - t0,
        seeds=[replication_seed(master, r) for r in range(n)]
        if cfg["kind"] != "qv-table"
        else [],
        outputs=sorted(f.name for f in em.files),
    )
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest.__dict__, f, sort_keys=True, indent=2)
        f.write("\n")
    return manifest
