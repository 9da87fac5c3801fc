"""Simulation and inference toolkit for the quadratic variation of
multivariate symmetric stable processes: path generation with exact jump
bookkeeping, realised QV and its rescaled error, the matrix-valued stable
limit law, spectral perturbation maps, and a subsampling procedure for
confidence regions."""

__version__ = "0.1.0"

from .measures import (
    DirectionalMeasure,
    StableLevySpec,
    iid_H,
    make_atomic_H,
    measure_from_dict,
    measure_from_json,
    sample_direction,
    span_check,
    spec_from_dict,
    total_mass,
    uniform_H,
)
from .simulate import (
    ConstantVol,
    JumpPath,
    OUDiagonalVol,
    PiecewiseConstantVol,
    StepVolatility,
    accumulate_cell_increments,
    choose_truncation_eps,
    expected_jump_count,
    path_values,
    read_path,
    simulate_integral_path,
    simulate_levy_path,
    write_path,
)
from .qv import (
    QVEstimate,
    SymMatrix,
    error_process,
    rate_delta,
    realised_qv,
    realised_qv_terminal,
    true_qv,
    write_qv_table,
)
from .spectral import (
    EigenSystem,
    eigen_sorted,
    linearize_spectrum,
    pseudo_inverse,
    spectral_limit_sample,
)
from .limitlaw import (
    LimitSpec,
    choose_u_truncation,
    conditional_limit_sample,
    mu_mass_and_sampler,
    nu_u_tail,
    sample_u,
    sample_u_batch,
    sym_tensor,
    u_jump_stream,
)
from .subsample import (
    CIResult,
    SubsampleConfig,
    SubsampleReport,
    beta_hat,
    block_qv,
    confidence_interval,
    default_m_k,
    empirical_law,
    parse_functional,
    zeta_stats,
)
from .harness import RunManifest, load_config, run_experiment, validate_config
