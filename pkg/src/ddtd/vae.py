"""Fully connected variational autoencoder on principal-component scores.

Plain numpy with hand-written backpropagation, so that every gradient is
inspectable and training is bit-reproducible for a fixed seed.

Encoder: ``k_in -> hidden[0] -> hidden[1]`` with ReLU, then two linear heads
giving the latent mean and log-variance. Decoder mirrors the hidden sizes and
ends in a linear output layer (scores are unbounded).
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

_MAGIC = b"DDTDVAE1"

FULL_SCALE_HIDDEN = (10000, 500)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, epoch, batch, reconstruction, kl):
        self.epoch, self.batch = epoch, batch
        self.reconstruction, self.kl = reconstruction, kl
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}: "
            f"reconstruction={reconstruction!r}, kl={kl!r}"
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 20
    epochs: int = 400
    n_latent: int = 8
    beta: float = 4.0
    rng_seed: int = 0
    hidden: tuple[int, ...] | None = None  # None: size from the score dimension

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "epochs", "n_latent"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    reconstruction: float
    kl: float


def default_hidden(k_in: int, n_latent: int) -> tuple[int, int]:
    if k_in < 100:
        return (4 * k_in, max(2 * n_latent, k_in))
    return FULL_SCALE_HIDDEN


@dataclass
class VaeModel:
    """Weights keyed ``"<layer>.W"`` / ``"<layer>.b"``; see :meth:`layer_shapes`."""

    k_in: int
    hidden: tuple[int, ...]
    n_latent: int
    params: dict[str, np.ndarray] = field(default_factory=dict)
    adam_steps: int = 0

    @property
    def encoder_names(self):
        return [f"enc{i}" for i in range(len(self.hidden))]

    @property
    def decoder_names(self):
        return [f"dec{i}" for i in range(len(self.hidden) + 1)]

    def layer_shapes(self) -> dict[str, tuple[int, int]]:
        enc = [self.k_in, *self.hidden]
        dec = [self.n_latent, *self.hidden[::-1], self.k_in]
        shapes = {f"enc{i}": (enc[i], enc[i + 1]) for i in range(len(self.hidden))}
        shapes["mu"] = (enc[-1], self.n_latent)
        shapes["logvar"] = (enc[-1], self.n_latent)
        shapes.update({f"dec{i}": (dec[i], dec[i + 1]) for i in range(len(dec) - 1)})
        return shapes

    def copy(self) -> "VaeModel":
        return VaeModel(self.k_in, self.hidden, self.n_latent,
                        {k: v.copy() for k, v in self.params.items()})


def init_model(k_in: int, hidden, n_latent: int, rng) -> VaeModel:
    """Glorot-uniform weights, zero biases."""
    model = VaeModel(int(k_in), tuple(int(h) for h in hidden), int(n_latent))
    for name, (fan_in, fan_out) in model.layer_shapes().items():
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        model.params[name + ".W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        model.params[name + ".b"] = np.zeros(fan_out)
    return model


def zero_model(k_in: int, hidden, n_latent: int) -> VaeModel:
    model = VaeModel(int(k_in), tuple(hidden), int(n_latent))
    for name, shape in model.layer_shapes().items():
        model.params[name + ".W"] = np.zeros(shape)
        model.params[name + ".b"] = np.zeros(shape[1])
    return model


def _check_width(x, width, what):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != width:
        raise ValueError(f"{what} has width {x.shape[-1]}, expected {width}")
    return x


def _encoder_forward(model, X):
    P = model.params
    acts = [X]
    h = X
    for name in model.encoder_names:
        h = np.maximum(h @ P[name + ".W"] + P[name + ".b"], 0.0)
        acts.append(h)
    mu = h @ P["mu.W"] + P["mu.b"]
    log_var = h @ P["logvar.W"] + P["logvar.b"]
    return mu, log_var, acts


def _decoder_forward(model, Z):
    P = model.params
    acts = [Z]
    h = Z
    names = model.decoder_names
    for name in names[:-1]:
        h = np.maximum(h @ P[name + ".W"] + P[name + ".b"], 0.0)
        acts.append(h)
    out = h @ P[names[-1] + ".W"] + P[names[-1] + ".b"]
    return out, acts


def encode(model: VaeModel, x):
    """Latent mean and log-variance for a score row (or a batch of rows)."""
    x = _check_width(x, model.k_in, "score row")
    mu, log_var, _ = _encoder_forward(model, x)
    return mu, log_var


def decode(model: VaeModel, z):
    z = _check_width(z, model.n_latent, "latent vector")
    out, _ = _decoder_forward(model, z)
    return out


def reparameterize(mu, log_var, epsilon):
    mu, log_var, epsilon = (np.asarray(a, dtype=float) for a in (mu, log_var, epsilon))
    return mu + np.exp(0.5 * log_var) * epsilon


def kl_loss(mu, log_var) -> float:
    """KL divergence of N(mu, exp(log_var)) from N(0, I), summed over components."""
    mu = np.asarray(mu, dtype=float)
    log_var = np.asarray(log_var, dtype=float)
    if mu.shape != log_var.shape:
        raise ValueError("mu and log_var differ in shape")
    return float(-0.5 * np.sum(1.0 + log_var - mu**2 - np.exp(log_var)))


def loss_and_gradients(model: VaeModel, batch, beta: float, epsilons, need_grad: bool = True):
    """Loss breakdown and, optionally, gradients for every parameter.

    ``reconstruction`` is the squared error averaged over batch rows and score
    components; ``kl`` is the per-row KL divergence averaged over the batch.
    """
    X = np.atleast_2d(_check_width(batch, model.k_in, "batch"))
    B = X.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    eps = np.atleast_2d(_check_width(epsilons, model.n_latent, "epsilon"))
    if eps.shape[0] != B:
        raise ValueError("need one epsilon row per batch row")

    mu, log_var, enc_acts = _encoder_forward(model, X)
    sigma = np.exp(0.5 * log_var)
    Z = mu + sigma * eps
    out, dec_acts = _decoder_forward(model, Z)

    diff = out - X
    rcn = float(np.mean(diff**2))
    kl = float(-0.5 * np.sum(1.0 + log_var - mu**2 - np.exp(log_var)) / B)
    breakdown = LossBreakdown(rcn + beta * kl, rcn, kl)
    if not need_grad:
        return breakdown, None

    P = model.params
    grads = {}
    g = 2.0 * diff / diff.size
    names = model.decoder_names
    for idx in range(len(names) - 1, -1, -1):
        name = names[idx]
        a_in = dec_acts[idx]
        grads[name + ".W"] = a_in.T @ g
        grads[name + ".b"] = g.sum(axis=0)
        g = g @ P[name + ".W"].T
        if idx > 0:
            g = g * (a_in > 0)
    dZ = g
    d_mu = dZ + beta * mu / B
    d_lv = dZ * eps * 0.5 * sigma + beta * 0.5 * (np.exp(log_var) - 1.0) / B

    h = enc_acts[-1]
    grads["mu.W"] = h.T @ d_mu
    grads["mu.b"] = d_mu.sum(axis=0)
    grads["logvar.W"] = h.T @ d_lv
    grads["logvar.b"] = d_lv.sum(axis=0)
    g = d_mu @ P["mu.W"].T + d_lv @ P["logvar.W"].T
    enc = model.encoder_names
    for idx in range(len(enc) - 1, -1, -1):
        name = enc[idx]
        g = g * (enc_acts[idx + 1] > 0)
        grads[name + ".W"] = enc_acts[idx].T @ g
        grads[name + ".b"] = g.sum(axis=0)
        if idx > 0:
            g = g @ P[name + ".W"].T
    return breakdown, grads


def loss(model: VaeModel, batch, beta: float, epsilons) -> LossBreakdown:
    return loss_and_gradients(model, batch, beta, epsilons, need_grad=False)[0]


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, gradients, state: AdamState, learning_rate: float):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = gradients[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params[name] = p - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)


def train(S, config: TrainConfig, init: VaeModel | None = None):
    """Fit a VAE to score rows. Returns ``(model, trace)``.

    ``trace`` holds one ``(epoch, total, reconstruction, kl)`` tuple per epoch,
    each the mean over that epoch's mini-batches. Batches are reshuffled every
    epoch and the last short batch is kept.
    """
    S = np.asarray(S, dtype=float)
    m, k_in = S.shape
    if m < config.batch_size:
        raise ValueError(f"{m} training rows is fewer than batch_size={config.batch_size}")
    rng = np.random.default_rng(config.rng_seed)
    if init is None:
        hidden = config.hidden or default_hidden(k_in, config.n_latent)
        model = init_model(k_in, hidden, config.n_latent, rng)
    else:
        if init.k_in != k_in or init.n_latent != config.n_latent:
            raise ValueError("warm-start model does not match the score dimension")
        model = init.copy()
    state = AdamState.zeros_like(model.params)
    params = model.params
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(m)
        sums = np.zeros(3)
        n_batches = 0
        for b, start in enumerate(range(0, m, config.batch_size)):
            rows = order[start:start + config.batch_size]
            eps = rng.standard_normal((rows.size, config.n_latent))
            model.params = params
            with np.errstate(over="ignore", invalid="ignore"):
                lb, grads = loss_and_gradients(model, S[rows], config.beta, eps)
            if not (math.isfinite(lb.total) and all(np.all(np.isfinite(g)) for g in grads.values())):
                raise TrainingDivergedError(epoch, b, lb.reconstruction, lb.kl)
            params, state = adam_step(params, grads, state, config.learning_rate)
            sums += (lb.total, lb.reconstruction, lb.kl)
            n_batches += 1
        mean = sums / n_batches
        trace.append((epoch, float(mean[0]), float(mean[1]), float(mean[2])))
    model.params = params
    model.adam_steps = state.t
    return model, trace


# -- latent sampling ---------------------------------------------------------

def blend(parent_a, parent_b, weights):
    """Per-component affine combination ``a + w * (b - a)``."""
    a = np.asarray(parent_a, dtype=float)
    b = np.asarray(parent_b, dtype=float)
    return a + np.asarray(weights, dtype=float) * (b - a)


def blx_crossover(parent_a, parent_b, alpha: float, rng):
    """BLX-alpha: each component uniform on the parents' interval widened by alpha."""
    w = rng.uniform(-alpha, 1.0 + alpha, size=np.shape(parent_a))
    return blend(parent_a, parent_b, w)


def sample_latents(model: VaeModel, S, n_gen: int, rng, method: str = "crossover",
                   alpha: float = 0.5):
    """Latent points for generation.

    ``"crossover"`` encodes each training row to its latent mean and blends
    random parent pairs (two distinct rows per pair); ``"prior"`` draws from
    the standard normal.
    """
    if n_gen < 1:
        raise ValueError(f"n_gen must be >= 1, got {n_gen}")
    if method == "prior":
        return rng.standard_normal((n_gen, model.n_latent))
    if method != "crossover":
        raise ValueError(f"unknown sampling method {method!r}")
    mu, _ = encode(model, np.atleast_2d(S))
    m = mu.shape[0]
    Z = np.empty((n_gen, model.n_latent))
    for i in range(n_gen):
        if m >= 2:
            a, b = rng.choice(m, size=2, replace=False)
        else:
            a = b = 0
        Z[i] = blx_crossover(mu[a], mu[b], alpha, rng)
    return Z


def generate(model: VaeModel, S, n_gen: int, rng_seed=None, method: str = "crossover",
             alpha: float = 0.5):
    """Decode ``n_gen`` new score rows from sampled latent points."""
    rng = np.random.default_rng(rng_seed)
    return decode(model, sample_latents(model, S, n_gen, rng, method, alpha))


# -- persistence -------------------------------------------------------------

def save_model(model: VaeModel, path) -> None:
    """Manifest (JSON, length-prefixed) followed by little-endian float64 tensors."""
    names = sorted(model.params)
    manifest = {
        "k_in": model.k_in,
        "hidden": list(model.hidden),
        "n_latent": model.n_latent,
        "tensors": [[n, list(model.params[n].shape)] for n in names],
    }
    blob = json.dumps(manifest).encode()
    body = b"".join(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes() for n in names)
    Path(path).write_bytes(_MAGIC + struct.pack("<I", len(blob)) + blob + body)


def load_model(path) -> VaeModel:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ValueError(f"{path}: not a VAE checkpoint")
    (size,) = struct.unpack_from("<I", raw, len(_MAGIC))
    start = len(_MAGIC) + 4
    manifest = json.loads(raw[start:start + size])
    offset = start + size
    model = VaeModel(manifest["k_in"], tuple(manifest["hidden"]), manifest["n_latent"])
    for name, shape in manifest["tensors"]:
        count = int(np.prod(shape))
        if offset + 8 * count > len(raw):
            raise ValueError(f"{path}: truncated checkpoint")
        model.params[name] = np.frombuffer(raw, "<f8", count, offset).reshape(shape).astype(float)
        offset += 8 * count
    return model


def write_trace_csv(trace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "total", "rcn", "kl"])
        for epoch, total, rcn, kl in trace:
            w.writerow([epoch, repr(total), repr(rcn), repr(kl)])


class ScoreVAE(BaseEstimator):
    """Estimator wrapper: ``fit`` on score rows, ``generate`` new ones.

    Parameters mirror :class:`TrainConfig`; ``sampling`` selects latent
    crossover or prior sampling and ``blend_alpha`` widens the crossover
    interval.
    """

    def __init__(self, learning_rate=1e-4, batch_size=20, epochs=400, n_latent=8, beta=4.0,
                 hidden=None, sampling="crossover", blend_alpha=0.5, random_state=0):
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.n_latent = n_latent
        self.beta = beta
        self.hidden = hidden
        self.sampling = sampling
        self.blend_alpha = blend_alpha
        self.random_state = random_state

    def _config(self):
        return TrainConfig(self.learning_rate, self.batch_size, self.epochs, self.n_latent,
                           self.beta, self.random_state,
                           tuple(self.hidden) if self.hidden else None)

    def fit(self, S, y=None, init=None):
        S = check_array(S, dtype=np.float64)
        self.model_, self.loss_trace_ = train(S, self._config(), init=init)
        self.training_scores_ = S
        self.n_features_in_ = S.shape[1]
        return self

    def transform(self, S):
        """Latent means of score rows."""
        check_is_fitted(self, "model_")
        return encode(self.model_, check_array(S, dtype=np.float64))[0]

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        return decode(self.model_, np.atleast_2d(Z))

    def generate(self, n_gen=None, random_state=None):
        check_is_fitted(self, "model_")
        if n_gen is None:
            n_gen = self.training_scores_.shape[0]
        return generate(self.model_, self.training_scores_, n_gen, random_state,
                        method=self.sampling, alpha=self.blend_alpha)
