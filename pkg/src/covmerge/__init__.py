"""covmerge: combine partially overlapping covariance/relationship matrices.

The estimator treats each partial matrix as the observed block of a Wishart
draw and maximizes the joint likelihood by EM, completing missing blocks with
their conditional expectations. Around it: kernel construction from genomic
features, GBLUP prediction, a low-rank feature-imputation baseline, and
seeded simulation/cross-validation harnesses.
"""

from .errors import (
    CovmergeError,
    DegenerateCovariance,
    DegenerateDesign,
    DimensionGuardExceeded,
    DuplicateLabel,
    EmptyGroup,
    EmptyRowOrColumn,
    EmptySampleSet,
    LabelMismatch,
    MatrixFormatError,
    MissingDosages,
    MonomorphicPanel,
    NegativeBandwidth,
    NonPositiveDiagonal,
    NonzeroDiagonal,
    NotPositiveDefinite,
    SingularInformation,
    SingularSubmatrix,
    UnknownLabel,
)
from .imputation import (
    CompletionResult,
    IncompleteFeatureMatrix,
    grm_from_imputed,
    soft_impute,
)
from .kernels import (
    MarkerMatrix,
    dist_to_grm,
    gaussian_kernel,
    grm_rowcentered,
    grm_to_dist,
    grm_vanraden,
    polynomial_kernel,
    read_marker_csv,
    write_marker_csv,
)
from .matcore import (
    LabeledSymMatrix,
    UnionIndex,
    build_union_index,
    embed,
    near_pd,
    read_matrix_csv,
    to_correlation,
    write_matrix_csv,
)
from .mixedmodel import (
    MixedModelFit,
    PhenotypeTable,
    fit_gblup,
    fit_rrblup,
    predict_gebv,
    read_phenotype_csv,
)
from .simlab import (
    MetricReport,
    SimConfig,
    cv_leave_group_out,
    cv_random_kfold,
    make_partials,
    merge_vs_impute_bench,
    mse_upper,
    pearson_upper,
    run_supp_ex1,
    run_supp_ex2,
    sample_wishart,
    simulate_markers,
)
from .wishart_em import (
    EMConfig,
    EMResult,
    PartialSampleSet,
    asymptotic_se,
    combine,
    conditional_blocks,
    em_step,
    expected_complete,
    partial_loglik,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
