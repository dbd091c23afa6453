"""Simulation and validation toolkit for diffusive quantum stochastic master equations.

Integrates the linear and trace-preserving nonlinear filtering equations for
pure and mixed states, the weighted-ensemble unraveling, and their mean-field
(McKean-Vlasov) extension, and ships statistical test engines that turn the
theory's martingale, positivity, growth and continuity claims into pinned-seed
checks at finite dimension.
"""

from .errors import TrajectoryAbort
from .linalg import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    Propagator,
    bracket,
    dress,
    evolution_factor,
    hermitian_spectrum,
    hermitianize,
    norms,
    positive_parts,
)
from .noise import ItoPath, WienerPath, convert_noise, sample_wiener, sample_wiener_batch
from .pure import (
    PureFilterParams,
    expectation,
    jacobian_norm_estimate,
    linear_pure_step,
    mean_map,
    nonlinear_pure_step,
    norm_process_step,
    run_linear,
    run_nonlinear,
)
from .master import (
    SMEParams,
    TrajectoryRecord,
    deterministic_lindblad_solve,
    lindblad_generator,
    linear_sme_step,
    nonlinear_sme_step,
    normalize_path,
    reconstruct_path,
    run_linear_sme,
    run_nonlinear_sme,
    trace_process_step,
)
from .ensemble import (
    WeightedEnsemble,
    decompose_state,
    ensemble_step,
    reconstruct_density,
    run_ensemble,
    shared_feedback,
)
from .meanfield import (
    InteractionMap,
    MeanFieldConfig,
    PicardReport,
    apply_interaction,
    frozen_field_step,
    mckean_vlasov_solve,
    reweighted_expectation,
)
from .validation import (
    MonteCarloConfig,
    convergence_order,
    hamiltonian_continuity_experiment,
    martingale_test,
    moment_bound_check,
    trace_inequality_check,
)

__version__ = "0.1.0"
