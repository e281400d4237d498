"""Materializing and solving relations among input variables.

A trained model whose trailing latent variables are (numerically) constant
pins those latents to their means, which turns the encoder into a system of
constraints on x. Without a skip the constraint reads

    A_er * sigma(... sigma(A_1 x)) - ybar_r = 0            (implicit)

and with the identity encoder skip the residual components of x enter
additively:

    x_r + A_er * sigma(... sigma(A_1 x)) - ybar_r = 0      (implicit)

If additionally the first-layer columns that touch x_r are zero, the skip
form rearranges into a closed-form map x_r = ybar_r - A_er * sigma(...x_p),
evaluated without any solver. Relations operate in the normalized
coordinates they were trained in; attached normalization stats convert raw
units at the boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autoencoder import LINEAR, Layer, forward
from .data import Dataset, NormStats
from .errors import (
    ContractViolation,
    NoConvergenceError,
    NothingToExtractError,
    TrivialSolutionError,
)
from .linalg import activate
from .optimize import solve_system
from .training import TrainOutcome

KIND_PLAIN = "plain"       # encoder without skip
KIND_SKIP = "skip"         # identity encoder skip; x_r appears additively


@dataclass(frozen=True)
class ImplicitRelation:
    kind: str
    hidden_layers: tuple          # encoder layers up to (not including) the last
    a_er: np.ndarray              # residual rows of the final encoder weight
    ybar_r: np.ndarray
    n: int
    p: int
    residual_indices: tuple
    names: tuple | None = None
    norm: NormStats | None = None

    @property
    def significant_indices(self) -> tuple:
        return tuple(i for i in range(self.n) if i not in self.residual_indices)


@dataclass(frozen=True)
class ExplicitRelation:
    hidden_layers: tuple          # first layer already restricted to x_p columns
    a_er: np.ndarray
    ybar_r: np.ndarray
    n: int
    p: int
    residual_indices: tuple
    names: tuple | None = None
    norm: NormStats | None = None

    @property
    def significant_indices(self) -> tuple:
        return tuple(i for i in range(self.n) if i not in self.residual_indices)


def _hidden_eval(layers, u):
    for layer in layers:
        z = layer.weight @ u
        if layer.bias is not None:
            z = z + (layer.bias[:, None] if u.ndim == 2 else layer.bias)
        u = activate(layer.activation, z)
    return u


def _require_extraction_mode(model):
    if not model.extraction_mode:
        raise ContractViolation(
            "relation extraction requires a bias-free model with linear output layers"
        )
    if model.encoder[-1].activation != LINEAR:
        raise ContractViolation("final encoder activation must be linear")


def _resolve_partition(outcome: TrainOutcome, p):
    m = outcome.model.latent_dim
    if p is None:
        residual = outcome.report.residual_set
        if not residual:
            raise NothingToExtractError(
                "no latent variable has variance below the tolerance"
            )
        return tuple(residual)
    if not 1 <= p < m:
        raise ContractViolation(f"p must be in [1, {m - 1}], got {p}")
    return tuple(range(p, m))


def build_implicit(outcome: TrainOutcome, *, p=None, names=None,
                   norm=None) -> ImplicitRelation:
    """Capture the constraint defined by the (near-)constant latents.

    By default the residual set comes from the outcome's variance report; an
    explicit p overrides it with the trailing m - p latents, which is how the
    experiment harness imposes the known structural count. Trivial outcomes
    are refused: their constraint rows are zero and carry no relationship.
    """
    model = outcome.model
    _require_extraction_mode(model)
    if outcome.trivial:
        raise TrivialSolutionError(
            "residual weights collapsed to zero; retrain with the unit-norm "
            "constraint before extracting"
        )
    residual = _resolve_partition(outcome, p)
    if model.encoder_skip_kind == "identity":
        if model.latent_dim != model.n_inputs:
            raise ContractViolation("skip-form extraction requires m = n")
        kind = KIND_SKIP
    elif model.encoder_skip_kind == "none":
        kind = KIND_PLAIN
    else:
        raise ContractViolation(
            "extraction supports no skip or the identity encoder skip only"
        )
    a_e = model.encoder[-1].weight
    return ImplicitRelation(
        kind=kind,
        hidden_layers=model.encoder[:-1],
        a_er=a_e[list(residual)].copy(),
        ybar_r=outcome.report.means[list(residual)].copy(),
        n=model.n_inputs,
        p=model.latent_dim - len(residual),
        residual_indices=residual,
        names=tuple(names) if names is not None else None,
        norm=norm,
    )


def relation_residual(rel: ImplicitRelation, x):
    """Evaluate the constraint at x (n-vector or (n, N) matrix); zero on the
    solution manifold."""
    x = np.asarray(x, dtype=float)
    hidden = _hidden_eval(rel.hidden_layers, x)
    res = rel.a_er @ hidden
    res = res - (rel.ybar_r[:, None] if x.ndim == 2 else rel.ybar_r)
    if rel.kind == KIND_SKIP:
        res = res + x[list(rel.residual_indices)]
    return res


def solve_residual(rel: ImplicitRelation, x_p, x0_r=None, *,
                   resid_tol=1e-10, max_iter=200) -> np.ndarray:
    """Solve the implicit relation for the residual variables given x_p.

    x0_r defaults to zeros; passing the sample's actual residual values makes
    the solve easier but leaks the answer when measuring model fidelity.
    """
    x_p = np.atleast_1d(np.asarray(x_p, dtype=float))
    sig = list(rel.significant_indices)
    res_idx = list(rel.residual_indices)
    if x_p.size != len(sig):
        raise ContractViolation(
            f"expected {len(sig)} significant values, got {x_p.size}"
        )
    if x0_r is None:
        x0_r = np.zeros(len(res_idx))

    def system(xr):
        full = np.empty(rel.n)
        full[sig] = x_p
        full[res_idx] = xr
        return relation_residual(rel, full)

    return solve_system(system, x0_r, resid_tol=resid_tol, max_iter=max_iter)


def solve_over_samples(rel: ImplicitRelation, X, *, leak_initial_guess=False,
                       resid_tol=1e-10):
    """Per-sample solve across a data matrix X (n, N) in normalized units.

    Returns (predictions (n_residual, N), residual_norms (N,), failed sample
    indices). Failed solves fall back to the solver's best iterate so the
    outputs stay aligned; callers should inspect the failure list.
    """
    X = np.asarray(X, dtype=float)
    sig = list(rel.significant_indices)
    res_idx = list(rel.residual_indices)
    n_samples = X.shape[1]
    preds = np.empty((len(res_idx), n_samples))
    norms = np.empty(n_samples)
    failures = []
    for j in range(n_samples):
        x0 = X[res_idx, j] if leak_initial_guess else None
        try:
            xr = solve_residual(rel, X[sig, j], x0, resid_tol=resid_tol)
            full = np.empty(rel.n)
            full[sig] = X[sig, j]
            full[res_idx] = xr
            norms[j] = float(np.linalg.norm(relation_residual(rel, full)))
        except NoConvergenceError as exc:
            failures.append(j)
            xr = exc.best_x if exc.best_x is not None else np.zeros(len(res_idx))
            norms[j] = exc.best_residual_norm if exc.best_residual_norm is not None else np.nan
        preds[:, j] = xr
    return preds, norms, failures


def build_explicit(outcome: TrainOutcome, p: int, *, names=None,
                   norm=None) -> ExplicitRelation:
    """Closed-form relation from a masked retrain (first-layer residual
    columns identically zero, identity encoder skip)."""
    model = outcome.model
    _require_extraction_mode(model)
    if model.encoder_skip_kind != "identity":
        raise ContractViolation("explicit extraction requires the identity encoder skip")
    if outcome.explicit_ok is None:
        raise ContractViolation(
            "outcome does not come from a masked retrain; run retrain_explicit first"
        )
    if not outcome.explicit_ok:
        raise ContractViolation(
            "masked retrain left residual variance above tolerance; "
            "the closed-form map would not hold on the data"
        )
    first = model.encoder[0]
    if np.any(first.weight[:, p:] != 0.0):
        raise ContractViolation("residual columns of the first layer are not zero")
    residual = tuple(range(p, model.latent_dim))
    restricted = (Layer(first.weight[:, :p].copy(), None, first.activation),
                  *model.encoder[1:-1])
    a_e = model.encoder[-1].weight
    return ExplicitRelation(
        hidden_layers=restricted,
        a_er=a_e[list(residual)].copy(),
        ybar_r=outcome.report.means[list(residual)].copy(),
        n=model.n_inputs,
        p=p,
        residual_indices=residual,
        names=tuple(names) if names is not None else None,
        norm=norm,
    )


def explicit_predict(rel: ExplicitRelation, x_p):
    """Evaluate x_r = ybar_r - A_er * sigma(...(A_1p x_p)); no solver."""
    x_p = np.asarray(x_p, dtype=float)
    hidden = _hidden_eval(rel.hidden_layers, x_p)
    out = rel.a_er @ hidden
    if x_p.ndim == 2:
        return rel.ybar_r[:, None] - out
    return rel.ybar_r - out


def prediction_mse(d: Dataset, predicted, target_var: int) -> float:
    """Mean squared difference between a variable of the dataset and its
    prediction, sample-aligned."""
    predicted = np.asarray(predicted, dtype=float)
    actual = d.X[target_var]
    if predicted.shape != actual.shape:
        raise ContractViolation(
            f"prediction shape {predicted.shape} does not match {actual.shape}"
        )
    diff = actual - predicted
    return float(np.mean(diff * diff))


def _normalize_boundary(rel, x_raw):
    if rel.norm is None:
        raise ContractViolation("relation carries no normalization stats")
    x_raw = np.asarray(x_raw, dtype=float)
    means, scales = rel.norm.means, rel.norm.scales
    if x_raw.ndim == 2:
        return (x_raw - means[:, None]) / scales[:, None]
    return (x_raw - means) / scales


def residual_raw(rel: ImplicitRelation, x_raw):
    """Evaluate the implicit relation at a raw-unit point."""
    return relation_residual(rel, _normalize_boundary(rel, x_raw))


def explicit_predict_raw(rel: ExplicitRelation, x_p_raw):
    """Raw-unit closed-form prediction: normalizes x_p, evaluates, and maps
    the residual variables back to raw units."""
    if rel.norm is None:
        raise ContractViolation("relation carries no normalization stats")
    x_p_raw = np.asarray(x_p_raw, dtype=float)
    sig = list(rel.significant_indices)
    res_idx = list(rel.residual_indices)
    mp, sp = rel.norm.means[sig], rel.norm.scales[sig]
    mr, sr = rel.norm.means[res_idx], rel.norm.scales[res_idx]
    if x_p_raw.ndim == 2:
        xp_n = (x_p_raw - mp[:, None]) / sp[:, None]
        return explicit_predict(rel, xp_n) * sr[:, None] + mr[:, None]
    return explicit_predict(rel, (x_p_raw - mp) / sp) * sr + mr


def _layers_to_list(layers):
    return [
        {"weight": l.weight.tolist(),
         "bias": l.bias.tolist() if l.bias is not None else None,
         "activation": l.activation}
        for l in layers
    ]


def _layers_from_list(items):
    return tuple(
        Layer(np.asarray(it["weight"], dtype=float),
              np.asarray(it["bias"], dtype=float) if it["bias"] is not None else None,
              it["activation"])
        for it in items
    )


def relation_to_dict(rel) -> dict:
    form = "explicit" if isinstance(rel, ExplicitRelation) else "implicit"
    d = {
        "form": form,
        "hidden_layers": _layers_to_list(rel.hidden_layers),
        "a_er": rel.a_er.tolist(),
        "ybar_r": rel.ybar_r.tolist(),
        "n": rel.n,
        "p": rel.p,
        "residual_indices": list(rel.residual_indices),
        "names": list(rel.names) if rel.names is not None else None,
        "norm": None if rel.norm is None else {
            "means": rel.norm.means.tolist(),
            "scales": rel.norm.scales.tolist(),
        },
    }
    if form == "implicit":
        d["kind"] = rel.kind
    return d


def relation_from_dict(d: dict):
    norm = None
    if d.get("norm"):
        norm = NormStats(np.asarray(d["norm"]["means"], dtype=float),
                         np.asarray(d["norm"]["scales"], dtype=float))
    names = tuple(d["names"]) if d.get("names") else None
    common = dict(
        hidden_layers=_layers_from_list(d["hidden_layers"]),
        a_er=np.asarray(d["a_er"], dtype=float),
        ybar_r=np.asarray(d["ybar_r"], dtype=float),
        n=d["n"], p=d["p"],
        residual_indices=tuple(d["residual_indices"]),
        names=names, norm=norm,
    )
    if d["form"] == "explicit":
        return ExplicitRelation(**common)
    return ImplicitRelation(kind=d["kind"], **common)


def save_relation(path, rel) -> None:
    with open(path, "w") as fh:
        json.dump(relation_to_dict(rel), fh)


def load_relation(path):
    with open(path) as fh:
        return relation_from_dict(json.load(fh))
