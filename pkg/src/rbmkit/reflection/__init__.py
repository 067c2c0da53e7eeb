from .assumptions import BCReport, DfReport, check_bc, check_df, fit_bc1, fit_geometric, restricted_b
from .bounds import (
    BC_FREE, DF_FREE, RANK_FREE, WAS_FREE, BoundError, RateConstants, bc_bound, bc_trel_bound,
    df_bound, rank_bound, rank_trel_bound, rate_constants, trel_bound, wasthm_bound,
    wasthm_threshold,
)
from .core import (
    ContractionError, HRReport, NeumannError, ReflectionError, ReflectionSpec, asym_atlas_P,
    asym_atlas_rinv, atlas_P, atlas_rinv, check_harrison_reiman, contraction_coefficient,
    exact_rinv, generator, inverse_via_neumann, power_norms,
)
from .params import ParamError, RankParams, RbmParams, stability_vector
