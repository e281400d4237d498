"""Ordered-variance autoencoders for unsupervised extraction of nonlinear
relations among measured variables, with a PCA baseline and a CLI harness."""

from .autoencoder import (
    AutoencoderModel,
    Layer,
    LossConfig,
    build_model,
    flatten_params,
    forward,
    loss,
    loss_and_grad,
    loss_grad,
    partition,
    with_params,
)
from .data import (
    Dataset,
    NormStats,
    denormalize,
    gen_five_var,
    gen_two_var,
    load_csv,
    normalize,
    save_csv,
)
from .extraction import (
    ExplicitRelation,
    ImplicitRelation,
    build_explicit,
    build_implicit,
    explicit_predict,
    load_relation,
    prediction_mse,
    relation_residual,
    save_relation,
    solve_over_samples,
    solve_residual,
)
from .linalg import (
    LINEAR,
    TANH,
    Rng,
    activate,
    activate_deriv,
    frobenius_sq,
    matmul,
    svd,
)
from .optimize import OptimResult, check_gradient, minimize, solve_system
from .pca import (
    LinearRelation,
    PCAModel,
    extract_linear_model,
    fit_pca,
    pca_reconstruct,
    pca_transform,
    predict_from_relation,
)
from .training import (
    LatentReport,
    OptimOptions,
    TrainConfig,
    TrainOutcome,
    detect_trivial,
    retrain_explicit,
    retrain_normalized,
    train,
    variance_report,
)

__version__ = "0.1.0"
