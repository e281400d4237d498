"""Layered autoencoder with optional fixed skip connections and the
ordered-variance training loss.

The encoder and decoder are plain dense chains, v = sigma(W u + b). A fixed
(never trained) skip matrix may be added around either chain, so the latent
code is y = A_e x + chain_e(x) and the reconstruction is
xhat = A_d y + chain_d(y). The loss

    J = alpha*||X - Xhat||_F^2
      + beta*sum_i q_i * sum_t (y_it - ybar_i)^2
      + gamma*(sum of squared trainable weights and biases)

penalizes reconstruction error, weighted latent variances (the q_i grow with
i, so later latent variables are squeezed harder, ordering the variances),
and parameter magnitude. Gradients are exact, by reverse accumulation
through both chains, both skip paths, and the centered variance term.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .linalg import LINEAR, TANH, ACTIVATIONS, Rng

SKIP_NONE = "none"
SKIP_IDENTITY = "identity"
SKIP_MATRIX = "matrix"


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray          # (out, in)
    bias: np.ndarray | None     # (out,) or None when the layer has no bias
    activation: str


@dataclass(frozen=True)
class LossConfig:
    alpha: float
    beta: float
    gamma: float
    q: np.ndarray               # (m,) ordering weights, nondecreasing

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ContractViolation("alpha, beta, gamma must be nonnegative")
        q = self.q
        if q.ndim != 1 or q.size == 0:
            raise ContractViolation("q must be a nonempty vector")
        if np.any(q < 0) or np.any(np.diff(q) < 0):
            raise ContractViolation("ordering weights must be nonnegative and nondecreasing")
        if np.any(np.diff(q) == 0):
            warnings.warn(
                "ordering weights are not strictly increasing; "
                "ties leave the affected latent variances unordered",
                stacklevel=2,
            )

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta,
                "gamma": self.gamma, "q": self.q.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "LossConfig":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return LossConfig(d["alpha"], d["beta"], d["gamma"],
                              np.asarray(d["q"], dtype=float))


@dataclass(frozen=True)
class AutoencoderModel:
    encoder: tuple              # tuple[Layer, ...]
    decoder: tuple
    encoder_skip_kind: str = SKIP_NONE
    decoder_skip_kind: str = SKIP_NONE
    encoder_skip: np.ndarray | None = None   # (m, n), fixed
    decoder_skip: np.ndarray | None = None   # (n, m), fixed

    @property
    def n_inputs(self) -> int:
        return self.encoder[0].weight.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].weight.shape[0]

    @property
    def extraction_mode(self) -> bool:
        """True when biases are absent and both output layers are linear,
        the regime in which closed-form relations can be read off."""
        no_bias = all(l.bias is None for l in self.encoder + self.decoder)
        return (no_bias and self.encoder[-1].activation == LINEAR
                and self.decoder[-1].activation == LINEAR)


@dataclass
class ForwardPass:
    Y: np.ndarray
    Xhat: np.ndarray
    enc_pre: list               # pre-activations per encoder layer
    enc_out: list
    dec_pre: list
    dec_out: list


def _init_weight(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, (fan_out, fan_in))


def _materialize_skip(kind, matrix, rows, cols):
    if kind == SKIP_NONE:
        return None
    if kind == SKIP_IDENTITY:
        return np.eye(rows, cols)
    if kind == SKIP_MATRIX:
        m = np.asarray(matrix, dtype=float)
        if m.shape != (rows, cols):
            raise ContractViolation(
                f"skip matrix must be {(rows, cols)}, got {m.shape}"
            )
        return m
    raise ContractViolation(f"unknown skip kind {kind!r}")


def build_model(n: int, m: int, enc_hidden, dec_hidden, rng: Rng, *,
                encoder_skip=SKIP_NONE, decoder_skip=SKIP_NONE,
                encoder_skip_matrix=None, decoder_skip_matrix=None,
                use_bias=False, hidden_activation=TANH,
                output_activation=LINEAR) -> AutoencoderModel:
    """Construct a model with seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
    weights and zero biases. With use_bias=False (the default) the model is
    in extraction mode: no biases anywhere, linear output layers."""
    if hidden_activation not in ACTIVATIONS or output_activation not in ACTIVATIONS:
        raise ContractViolation("unknown activation")

    def chain(dims):
        layers = []
        for i in range(len(dims) - 1):
            act = output_activation if i == len(dims) - 2 else hidden_activation
            w = _init_weight(rng, dims[i + 1], dims[i])
            b = np.zeros(dims[i + 1]) if use_bias else None
            layers.append(Layer(w, b, act))
        return tuple(layers)

    encoder = chain([n, *enc_hidden, m])
    decoder = chain([m, *dec_hidden, n])
    e_skip = _materialize_skip(encoder_skip, encoder_skip_matrix, m, n)
    d_skip = _materialize_skip(decoder_skip, decoder_skip_matrix, n, m)
    return AutoencoderModel(encoder, decoder, encoder_skip, decoder_skip,
                            e_skip, d_skip)


def _run_chain(layers, u):
    pres, outs = [], []
    for layer in layers:
        z = layer.weight @ u
        if layer.bias is not None:
            z = z + layer.bias[:, None]
        if layer.activation == TANH:
            u = np.tanh(z)
        else:
            u = z
        pres.append(z)
        outs.append(u)
    return pres, outs


def forward(model: AutoencoderModel, X) -> ForwardPass:
    """Evaluate the model on a data matrix X (n x N)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != model.n_inputs:
        raise ContractViolation(
            f"X must be ({model.n_inputs}, N), got {X.shape}"
        )
    enc_pre, enc_out = _run_chain(model.encoder, X)
    Y = enc_out[-1]
    if model.encoder_skip is not None:
        Y = Y + model.encoder_skip @ X
    dec_pre, dec_out = _run_chain(model.decoder, Y)
    Xhat = dec_out[-1]
    if model.decoder_skip is not None:
        Xhat = Xhat + model.decoder_skip @ Y
    return ForwardPass(Y, Xhat, enc_pre, enc_out, dec_pre, dec_out)


def _check_loss_args(model, X, cfg):
    if X.ndim != 2 or X.shape[1] < 2:
        raise ContractViolation("loss needs a 2-D data matrix with at least 2 samples")
    if cfg.q.size != model.latent_dim:
        raise ContractViolation(
            f"q has {cfg.q.size} entries for latent dimension {model.latent_dim}"
        )


def _penalty_sq(model) -> float:
    total = 0.0
    for layer in model.encoder + model.decoder:
        total += float(np.sum(layer.weight * layer.weight))
        if layer.bias is not None:
            total += float(np.sum(layer.bias * layer.bias))
    return total


def loss(model: AutoencoderModel, X, cfg: LossConfig) -> dict:
    """Loss terms {J, J1, J2, J3} on the data matrix X."""
    X = np.asarray(X, dtype=float)
    _check_loss_args(model, X, cfg)
    fp = forward(model, X)
    diff = X - fp.Xhat
    j1 = cfg.alpha * float(np.sum(diff * diff))
    yc = fp.Y - fp.Y.mean(axis=1, keepdims=True)
    j2 = cfg.beta * float(np.sum(cfg.q[:, None] * yc * yc))
    j3 = cfg.gamma * _penalty_sq(model)
    return {"J": j1 + j2 + j3, "J1": j1, "J2": j2, "J3": j3}


def _backprop_chain(layers, pres, outs, chain_input, grad_out, gamma):
    """Accumulate parameter gradients through one dense chain; returns the
    gradient with respect to the chain input."""
    grads = []
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        if layer.activation == TANH:
            out = outs[i]
            gz = g * (1.0 - out * out)
        else:
            gz = g
        inp = outs[i - 1] if i > 0 else chain_input
        gw = gz @ inp.T + 2.0 * gamma * layer.weight
        gb = None
        if layer.bias is not None:
            gb = gz.sum(axis=1) + 2.0 * gamma * layer.bias
        grads.append((gw, gb))
        g = layer.weight.T @ gz
    grads.reverse()
    return g, grads


def loss_and_grad(model: AutoencoderModel, X, cfg: LossConfig):
    """Loss value and its exact gradient (flattened as in flatten_params)."""
    X = np.asarray(X, dtype=float)
    _check_loss_args(model, X, cfg)
    fp = forward(model, X)

    diff = X - fp.Xhat
    j1 = cfg.alpha * float(np.sum(diff * diff))
    yc = fp.Y - fp.Y.mean(axis=1, keepdims=True)
    j2 = cfg.beta * float(np.sum(cfg.q[:, None] * yc * yc))
    j3 = cfg.gamma * _penalty_sq(model)

    g_xhat = -2.0 * cfg.alpha * diff
    g_y_mlp, dec_grads = _backprop_chain(
        model.decoder, fp.dec_pre, fp.dec_out, fp.Y, g_xhat, cfg.gamma
    )
    g_y = g_y_mlp
    if model.decoder_skip is not None:
        g_y = g_y + model.decoder_skip.T @ g_xhat
    g_y = g_y + 2.0 * cfg.beta * (cfg.q[:, None] * yc)
    # The encoder skip is fixed, so only the chain receives the latent gradient.
    _, enc_grads = _backprop_chain(
        model.encoder, fp.enc_pre, fp.enc_out, X, g_y, cfg.gamma
    )

    flat = []
    for gw, gb in enc_grads + dec_grads:
        flat.append(gw.ravel())
        if gb is not None:
            flat.append(gb)
    return j1 + j2 + j3, np.concatenate(flat)


def loss_grad(model: AutoencoderModel, X, cfg: LossConfig) -> np.ndarray:
    return loss_and_grad(model, X, cfg)[1]


def flatten_params(model: AutoencoderModel) -> np.ndarray:
    """Trainable parameters as one vector: encoder then decoder layers, each
    contributing weight entries (row-major) then bias entries. Skips are
    fixed and excluded."""
    parts = []
    for layer in model.encoder + model.decoder:
        parts.append(layer.weight.ravel())
        if layer.bias is not None:
            parts.append(layer.bias)
    return np.concatenate(parts)


def param_count(model: AutoencoderModel) -> int:
    return sum(
        layer.weight.size + (layer.bias.size if layer.bias is not None else 0)
        for layer in model.encoder + model.decoder
    )


def param_slices(model: AutoencoderModel) -> list:
    """Layout records (section, layer_index, field, start, stop, shape) in
    flatten_params order; section is 'encoder' or 'decoder'."""
    records = []
    offset = 0
    for section, layers in (("encoder", model.encoder), ("decoder", model.decoder)):
        for i, layer in enumerate(layers):
            size = layer.weight.size
            records.append((section, i, "weight", offset, offset + size,
                            layer.weight.shape))
            offset += size
            if layer.bias is not None:
                records.append((section, i, "bias", offset, offset + layer.bias.size,
                                layer.bias.shape))
                offset += layer.bias.size
    return records


def with_params(model: AutoencoderModel, theta) -> AutoencoderModel:
    theta = np.asarray(theta, dtype=float)
    if theta.size != param_count(model):
        raise ContractViolation(
            f"expected {param_count(model)} parameters, got {theta.size}"
        )
    offset = 0

    def rebuild(layers):
        nonlocal offset
        out = []
        for layer in layers:
            w = theta[offset:offset + layer.weight.size].reshape(layer.weight.shape)
            offset += layer.weight.size
            b = None
            if layer.bias is not None:
                b = theta[offset:offset + layer.bias.size].copy()
                offset += layer.bias.size
            out.append(Layer(w.copy(), b, layer.activation))
        return tuple(out)

    encoder = rebuild(model.encoder)
    decoder = rebuild(model.decoder)
    return AutoencoderModel(encoder, decoder, model.encoder_skip_kind,
                            model.decoder_skip_kind, model.encoder_skip,
                            model.decoder_skip)


@dataclass(frozen=True)
class Partition:
    a_ep: np.ndarray    # first p rows of the final encoder weight
    a_er: np.ndarray    # remaining rows
    a_1p: np.ndarray    # first p columns of the first encoder weight
    a_1r: np.ndarray    # remaining columns


def partition(model: AutoencoderModel, p: int) -> Partition:
    """Split the boundary weights at p significant latent variables; the
    residual input variables are taken as the last n - p slots."""
    m = model.latent_dim
    if not 1 <= p < m:
        raise ContractViolation(f"p must be in [1, {m - 1}], got {p}")
    a_e = model.encoder[-1].weight
    a_1 = model.encoder[0].weight
    return Partition(a_e[:p], a_e[p:], a_1[:, :p], a_1[:, p:])


def _skip_to_dict(kind, matrix):
    return {"kind": kind,
            "matrix": matrix.tolist() if kind == SKIP_MATRIX else None}


def model_to_dict(model: AutoencoderModel, *, seed=None, loss_config=None) -> dict:
    def layers_to_list(layers):
        return [
            {"weight": l.weight.tolist(),
             "bias": l.bias.tolist() if l.bias is not None else None,
             "activation": l.activation}
            for l in layers
        ]

    return {
        "n": model.n_inputs,
        "m": model.latent_dim,
        "encoder": layers_to_list(model.encoder),
        "decoder": layers_to_list(model.decoder),
        "encoder_skip": _skip_to_dict(model.encoder_skip_kind, model.encoder_skip),
        "decoder_skip": _skip_to_dict(model.decoder_skip_kind, model.decoder_skip),
        "seed": seed,
        "loss": loss_config.to_dict() if loss_config is not None else None,
    }


def model_from_dict(d: dict) -> AutoencoderModel:
    def layers_from_list(items):
        return tuple(
            Layer(np.asarray(it["weight"], dtype=float),
                  np.asarray(it["bias"], dtype=float) if it["bias"] is not None else None,
                  it["activation"])
            for it in items
        )

    encoder = layers_from_list(d["encoder"])
    decoder = layers_from_list(d["decoder"])
    n, m = d["n"], d["m"]
    e_kind = d["encoder_skip"]["kind"]
    d_kind = d["decoder_skip"]["kind"]
    e_skip = _materialize_skip(e_kind, d["encoder_skip"]["matrix"], m, n)
    d_skip = _materialize_skip(d_kind, d["decoder_skip"]["matrix"], n, m)
    return AutoencoderModel(encoder, decoder, e_kind, d_kind, e_skip, d_skip)


def save_model(path, model: AutoencoderModel, *, seed=None, loss_config=None) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, seed=seed, loss_config=loss_config), fh)


def load_model(path):
    """Returns (model, metadata dict with 'seed' and 'loss' entries)."""
    with open(path) as fh:
        d = json.load(fh)
    meta = {"seed": d.get("seed"), "loss": d.get("loss")}
    return model_from_dict(d), meta
