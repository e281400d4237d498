"""Model fitting, latent-variance reporting, and the constrained retrains.

Training minimizes the ordered-variance loss full-batch from several seeded
restarts and keeps the lowest final loss. Two retraining modes handle the
degenerate cases: `retrain_normalized` pins the residual encoder rows to
unit Frobenius norm by projection (escape hatch for the collapsed-weights
solution), and `retrain_explicit` holds the residual input columns of the
first encoder layer at exactly zero so the learned constraint can be
rearranged into closed form afterwards.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .autoencoder import (
    SKIP_IDENTITY,
    SKIP_NONE,
    AutoencoderModel,
    LossConfig,
    build_model,
    flatten_params,
    forward,
    loss,
    loss_and_grad,
    param_slices,
    with_params,
)
from .data import Dataset
from .errors import ContractViolation, NumericalError, TrainingError
from .linalg import Rng
from .optimize import minimize

ORDER_TOL = 1e-9


@dataclass
class OptimOptions:
    method: str = "lbfgs"
    max_iter: int = 2000
    grad_tol: float = 1e-6
    memory: int = 10
    step_size: float = 1e-2     # only used by the gradient-descent fallback
    f_tol: float = 0.0          # relative function-change stop; 0 disables


@dataclass
class TrainConfig:
    latent_dim: int
    enc_hidden: tuple
    dec_hidden: tuple
    loss: LossConfig
    encoder_skip: str = SKIP_NONE
    decoder_skip: str = SKIP_NONE
    seed: int = 0
    restarts: int = 5
    eps: float = 1e-4
    use_bias: bool = False
    optimizer: OptimOptions = field(default_factory=OptimOptions)

    def __post_init__(self):
        if self.restarts < 1:
            raise ContractViolation("restarts must be >= 1")


@dataclass(frozen=True)
class LatentReport:
    variances: np.ndarray
    means: np.ndarray
    ordered: bool
    residual_set: tuple
    p: int
    eps: float


@dataclass
class TrainOutcome:
    model: AutoencoderModel
    report: LatentReport
    loss_terms: dict
    trivial: bool
    converged: bool
    best_seed: int
    explicit_ok: bool | None = None


def _build_from_config(cfg: TrainConfig, n: int, rng: Rng) -> AutoencoderModel:
    return build_model(
        n, cfg.latent_dim, cfg.enc_hidden, cfg.dec_hidden, rng,
        encoder_skip=cfg.encoder_skip, decoder_skip=cfg.decoder_skip,
        use_bias=cfg.use_bias,
    )


def variance_report(model: AutoencoderModel, d: Dataset, eps: float) -> LatentReport:
    Y = forward(model, d.X).Y
    variances = Y.var(axis=1, ddof=1)
    means = Y.mean(axis=1)
    ordered = bool(np.all(np.diff(variances) <= ORDER_TOL))
    residual = tuple(int(i) for i in np.nonzero(variances < eps)[0])
    return LatentReport(variances, means, ordered, residual,
                        int(variances.size - len(residual)), eps)


def _residual_weight_rows(model: AutoencoderModel, residual_set):
    return model.encoder[-1].weight[list(residual_set)]


def _is_trivial(model, report, weight_tol=1e-6, mean_tol=1e-6) -> bool:
    if not report.residual_set:
        return False
    a_er = _residual_weight_rows(model, report.residual_set)
    norm = float(np.linalg.norm(a_er))
    means = report.means[list(report.residual_set)]
    return norm < weight_tol * np.sqrt(a_er.size) and bool(np.all(np.abs(means) < mean_tol))


def detect_trivial(outcome: TrainOutcome, *, weight_tol=1e-6, mean_tol=1e-6) -> bool:
    """True when the residual encoder rows and residual latent means are all
    (numerically) zero, i.e. the variance term was silenced without encoding
    any relationship."""
    return _is_trivial(outcome.model, outcome.report, weight_tol, mean_tol)


def _check_training_data(d: Dataset, cfg: TrainConfig):
    if d.n_samples <= cfg.latent_dim:
        raise ContractViolation("need more samples than latent variables")
    mu = np.abs(d.X.mean(axis=1)).max()
    sd = np.abs(d.X.std(axis=1, ddof=1) - 1.0).max()
    if mu > 1e-8 or sd > 1e-6:
        warnings.warn(
            "training data is not standardized; variance thresholds and the "
            "loss weights assume mean-0/variance-1 variables",
            stacklevel=3,
        )


def _optimize_restarts(d, cfg, make_theta0, objective, project=None):
    """Run cfg.restarts seeded optimizations; return (best result, seed)."""
    best = None
    best_seed = None
    failures = []
    for r in range(cfg.restarts):
        seed = cfg.seed + r
        theta0 = make_theta0(seed)
        try:
            res = minimize(
                objective, theta0,
                max_iter=cfg.optimizer.max_iter,
                grad_tol=cfg.optimizer.grad_tol,
                memory=cfg.optimizer.memory,
                method=cfg.optimizer.method,
                step_size=cfg.optimizer.step_size,
                project=project,
                f_tol=cfg.optimizer.f_tol,
            )
        except NumericalError as exc:
            failures.append(f"seed {seed}: {exc}")
            continue
        if best is None or res.loss < best.loss:
            best, best_seed = res, seed
    if best is None:
        raise TrainingError(
            "optimizer failed on every restart: " + "; ".join(failures)
        )
    return best, best_seed


def _finish_outcome(template, d, cfg, res, seed, explicit_ok=None) -> TrainOutcome:
    model = with_params(template, res.params)
    report = variance_report(model, d, cfg.eps)
    terms = loss(model, d.X, cfg.loss)
    return TrainOutcome(model, report, terms, _is_trivial(model, report),
                        res.converged, seed, explicit_ok)


def train(d: Dataset, cfg: TrainConfig) -> TrainOutcome:
    """Fit the configured model to the dataset; best of cfg.restarts runs
    (seeds cfg.seed .. cfg.seed+restarts-1) by final loss. Deterministic for
    identical (dataset, config, seed)."""
    _check_training_data(d, cfg)
    template = _build_from_config(cfg, d.n_vars, Rng(cfg.seed))

    def objective(theta):
        return loss_and_grad(with_params(template, theta), d.X, cfg.loss)

    def theta0(seed):
        return flatten_params(_build_from_config(cfg, d.n_vars, Rng(seed)))

    res, seed = _optimize_restarts(d, cfg, theta0, objective)
    return _finish_outcome(template, d, cfg, res, seed)


def _weight_slice(model, section, layer_index):
    for sec, idx, fieldname, start, stop, shape in param_slices(model):
        if sec == section and idx == layer_index and fieldname == "weight":
            return start, stop, shape
    raise ContractViolation("weight slice not found")


def _a_er_flat_indices(model, residual_set):
    start, _, shape = _weight_slice(model, "encoder", len(model.encoder) - 1)
    cols = shape[1]
    idx = [start + i * cols + j for i in residual_set for j in range(cols)]
    return np.asarray(idx, dtype=int)


def _a_1r_flat_indices(model, p):
    start, _, shape = _weight_slice(model, "encoder", 0)
    rows, cols = shape
    idx = [start + i * cols + j for i in range(rows) for j in range(p, cols)]
    return np.asarray(idx, dtype=int)


def retrain_normalized(d: Dataset, cfg: TrainConfig, prev: TrainOutcome) -> TrainOutcome:
    """Escape the collapsed solution by retraining with the residual encoder
    rows held at unit Frobenius norm (renormalized after every accepted
    step). Non-trivial outcomes are returned unchanged."""
    if not prev.trivial:
        return prev
    if not prev.report.residual_set:
        raise ContractViolation("previous outcome has no residual variables")
    _check_training_data(d, cfg)
    template = _build_from_config(cfg, d.n_vars, Rng(cfg.seed))
    idx = _a_er_flat_indices(template, prev.report.residual_set)
    prev_theta = flatten_params(prev.model)

    def objective(theta):
        return loss_and_grad(with_params(template, theta), d.X, cfg.loss)

    def project(theta):
        block = theta[idx]
        norm = float(np.linalg.norm(block))
        if norm > 0.0:
            theta[idx] = block / norm
        return theta

    def theta0(seed):
        theta = prev_theta.copy()
        # Fresh unit-norm residual rows; the rest of the model is kept.
        rng = Rng(seed + 7919)
        block = rng.uniform(-1.0, 1.0, idx.size)
        theta[idx] = block / np.linalg.norm(block)
        return theta

    res, seed = _optimize_restarts(d, cfg, theta0, objective, project=project)
    res.params = project(res.params.copy())
    return _finish_outcome(template, d, cfg, res, seed)


def retrain_explicit(d: Dataset, cfg: TrainConfig, p: int) -> TrainOutcome:
    """Train with the residual input columns of the first encoder weight
    masked to zero, so the residual latents depend on the significant inputs
    only. explicit_ok reports whether all residual latent variances fell
    below cfg.eps; failure to achieve that is a result, not an error."""
    if cfg.encoder_skip != SKIP_IDENTITY:
        raise ContractViolation(
            "explicit extraction requires the identity encoder skip"
        )
    _check_training_data(d, cfg)
    n = d.n_vars
    if not 1 <= p < cfg.latent_dim:
        raise ContractViolation(f"p must be in [1, {cfg.latent_dim - 1}]")
    if cfg.latent_dim != n:
        raise ContractViolation("explicit extraction requires m = n")
    template = _build_from_config(cfg, n, Rng(cfg.seed))
    masked = _a_1r_flat_indices(template, p)

    def objective(theta):
        value, grad = loss_and_grad(with_params(template, theta), d.X, cfg.loss)
        grad[masked] = 0.0
        return value, grad

    def theta0(seed):
        theta = flatten_params(_build_from_config(cfg, n, Rng(seed)))
        theta[masked] = 0.0
        return theta

    res, seed = _optimize_restarts(d, cfg, theta0, objective)
    if np.any(res.params[masked] != 0.0):
        raise NumericalError("masked parameters moved during optimization")
    outcome = _finish_outcome(template, d, cfg, res, seed)
    outcome.explicit_ok = bool(np.all(outcome.report.variances[p:] < cfg.eps))
    return outcome


def config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "latent_dim": cfg.latent_dim,
        "enc_hidden": list(cfg.enc_hidden),
        "dec_hidden": list(cfg.dec_hidden),
        "loss": cfg.loss.to_dict(),
        "encoder_skip": cfg.encoder_skip,
        "decoder_skip": cfg.decoder_skip,
        "seed": cfg.seed,
        "restarts": cfg.restarts,
        "eps": cfg.eps,
        "use_bias": cfg.use_bias,
        "optimizer": {
            "method": cfg.optimizer.method,
            "max_iter": cfg.optimizer.max_iter,
            "grad_tol": cfg.optimizer.grad_tol,
            "memory": cfg.optimizer.memory,
            "step_size": cfg.optimizer.step_size,
            "f_tol": cfg.optimizer.f_tol,
        },
    }


def config_from_dict(dd: dict) -> TrainConfig:
    return TrainConfig(
        latent_dim=dd["latent_dim"],
        enc_hidden=tuple(dd["enc_hidden"]),
        dec_hidden=tuple(dd["dec_hidden"]),
        loss=LossConfig.from_dict(dd["loss"]),
        encoder_skip=dd["encoder_skip"],
        decoder_skip=dd["decoder_skip"],
        seed=dd["seed"],
        restarts=dd["restarts"],
        eps=dd["eps"],
        use_bias=dd["use_bias"],
        optimizer=OptimOptions(**dd["optimizer"]),
    )


def report_to_dict(report: LatentReport) -> dict:
    return {
        "variances": report.variances.tolist(),
        "means": report.means.tolist(),
        "ordered": report.ordered,
        "residual_set": list(report.residual_set),
        "p": report.p,
        "eps": report.eps,
    }


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)
