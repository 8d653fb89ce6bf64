"""Power analysis of blocking designs for the Cochran-Mantel-Haenszel test.

The package covers the full pipeline for two-arm randomized experiments with
a binary endpoint and covariates known before allocation:

- ``population``: fixed covariates, per-subject response probabilities under
  treatment and control, and Bernoulli response draws.
- ``designs``: block structures (quantile slicing, hierarchical two-covariate
  blocking, BCRD), balanced within-block randomization, and the implicit
  block-diagonal design covariance.
- ``matching``: Mahalanobis distances and exact minimum-weight pairwise
  matching for multivariate covariates.
- ``cmh``: the Cochran-Mantel-Haenszel statistic in contingency-table and
  quadratic forms, the signed root, and the rejection rule.
- ``theory``: asymptotic variance functionals, the small-block second-order
  penalty, and asymptotic power under local alternatives.
- ``harness``: deterministic Monte Carlo sweeps over sample size, block
  count, covariate dimension and effect size.
- ``cli``: command-line front end.
"""

from blockpower.population import (
    CovariateMatrix,
    EffectSummary,
    PotentialOutcomes,
    draw_responses,
    effect_summary,
    logistic_outcomes,
)
from blockpower.designs import (
    Assignment,
    BlockStructure,
    DesignCovariance,
    design_moment,
    hierarchical_blocks,
    quadratic_form,
    quantile_blocks,
    sample_assignment,
)
from blockpower.matching import (
    DistanceMatrix,
    Matching,
    mahalanobis_distances,
    min_weight_perfect_matching,
    pm_blockstructure,
)
from blockpower.cmh import (
    MHResult,
    StratifiedTables,
    chi2_threshold,
    mh_quadratic_form,
    mh_table_form,
    reject,
    tabulate,
)
from blockpower.theory import (
    TheorySummary,
    asymptotic_power,
    block_eta,
    eta_n,
    second_order_penalty,
)
from blockpower.harness import (
    CellSpec,
    DesignKind,
    PowerCellResult,
    bonferroni_size_report,
    draw_population,
    enumerate_cells,
    run_cell,
    sweep,
)

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "BlockStructure",
    "CellSpec",
    "CovariateMatrix",
    "DesignCovariance",
    "DesignKind",
    "DistanceMatrix",
    "EffectSummary",
    "MHResult",
    "Matching",
    "PotentialOutcomes",
    "PowerCellResult",
    "StratifiedTables",
    "TheorySummary",
    "asymptotic_power",
    "block_eta",
    "bonferroni_size_report",
    "chi2_threshold",
    "design_moment",
    "draw_population",
    "draw_responses",
    "effect_summary",
    "enumerate_cells",
    "eta_n",
    "hierarchical_blocks",
    "logistic_outcomes",
    "mahalanobis_distances",
    "mh_quadratic_form",
    "mh_table_form",
    "min_weight_perfect_matching",
    "pm_blockstructure",
    "quadratic_form",
    "quantile_blocks",
    "reject",
    "run_cell",
    "sample_assignment",
    "second_order_penalty",
    "sweep",
    "tabulate",
]
