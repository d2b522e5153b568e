"""Beta regression for areal rate data on triangulated regions.

Pipeline: triangulate a polygonal region into areal units, aggregate
point-located count data onto the triangles, select covariates with a
lasso-logistic screen, then fit Beta regressions with optional spatially
structured (intrinsic CAR) and unstructured random effects by empirical
Bayes with a Laplace approximation. An MCMC sampler serves as a slow,
exact cross-check. Model comparison uses DIC and WAIC in sample and
concordance (CCC) and root squared error out of sample.
"""

from .beta import (
    LINKS,
    beta_logpdf,
    beta_variance,
    link_apply,
    link_invert,
    link_mu_eta,
    link_mu_eta2,
    shapes_from,
)
from .mesh import (
    InvalidRegionError,
    NeighborGraph,
    Region,
    TriMesh,
    build_mesh,
    build_neighbor_graph,
    load_region,
    locate_point,
    locate_points,
    mesh_to_geojson,
    precision_matrix,
)
from .model import (
    MODEL_KINDS,
    Hyper,
    LatentState,
    ModelData,
    ModelSpec,
    PriorSpec,
    car_conditional,
    car_logdensity,
    joint_gradient,
    joint_logposterior,
    linear_predictor,
)
from .inference import (
    FitControls,
    FitError,
    PosteriorFit,
    PosteriorSamples,
    fit_laplace,
    fit_mcmc,
    latent_mode,
    model_data_from_dataset,
    predict,
)
from .lasso import (
    binarize_response,
    cv_select,
    default_lambda_grid,
    kkt_residual,
    lasso_logistic_path,
)
from .metrics import ccc, dic, rse, waic
from .ingest import (
    AreaDataset,
    SchemaError,
    aggregate_providers,
    aggregate_tax,
    build_area_dataset,
    compute_brandrate,
    read_provider_csv,
    read_schema,
    read_tax_csv,
    read_zipgeo_csv,
    split_train_test,
    transform_covariates,
    yeo_johnson,
)

__version__ = "0.1.0"
