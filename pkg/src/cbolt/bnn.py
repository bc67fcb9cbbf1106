"""Bayesian neural-network binary classifier for the feasibility constraint.

A factorized Gaussian posterior over all weights and biases is trained
by minimizing an alpha-divergence energy estimated with reparameterized
Monte Carlo samples.  The energy interpolates between mean-field
variational Bayes (alpha near 0, selectable exactly via a config
switch) and an expectation-propagation-like objective (alpha = 1).

The predictive probability Pr(C(z)) is the average of the logistic
network output over posterior weight draws.  Helpers expose frozen
weight samples and input-space gradients so the acquisition optimizer
can hold the Monte Carlo noise fixed while it moves z.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .gp import NumericalError
from .optim import Adam


class DegenerateDataError(ValueError):
    """Training data contains only one class."""


@dataclass
class BnnArchitecture:
    layer_widths: list[int]
    hidden_activation: str = "gaussian_rbf"

    def __post_init__(self):
        if len(self.layer_widths) < 3:
            raise ValueError("need at least one hidden layer (input, hidden..., output)")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("layer widths must be positive")
        if self.layer_widths[-1] != 1:
            raise ValueError("output layer width must be 1")
        if self.hidden_activation not in ("gaussian_rbf", "relu"):
            raise ValueError(f"unknown activation {self.hidden_activation!r}")

    def num_params(self) -> int:
        ws = self.layer_widths
        return sum(ws[i] * ws[i + 1] + ws[i + 1] for i in range(len(ws) - 1))


@dataclass
class WeightPosterior:
    arch: BnnArchitecture
    mean: np.ndarray
    log_variance: np.ndarray
    input_mean: np.ndarray
    input_scale: np.ndarray


@dataclass
class AlphaTrainConfig:
    alpha: float = 0.5
    mc_samples: int = 50
    minibatch_size: int = 10
    learning_rate: float = 0.01
    epochs: int = 120
    seed: int = 0
    use_vb_limit: bool = False
    prior_variance: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be positive")


@dataclass
class LabeledLatentPoint:
    z: np.ndarray
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


def _layer_slices(arch: BnnArchitecture):
    ws = arch.layer_widths
    out, off = [], 0
    for i in range(len(ws) - 1):
        nw = ws[i] * ws[i + 1]
        out.append((off, off + nw, off + nw + ws[i + 1], (ws[i], ws[i + 1])))
        off += nw + ws[i + 1]
    return out


def init_posterior(arch: BnnArchitecture, seed: int) -> WeightPosterior:
    """Glorot-style init: means N(0, 2/(d_in+d_out)), bias means 0,
    log-variances log(1e-6 * 2/(d_in+d_out))."""
    rng = np.random.default_rng(seed)
    mean = np.zeros(arch.num_params())
    logv = np.zeros(arch.num_params())
    for w0, w1, b1, (din, dout) in _layer_slices(arch):
        scale = 2.0 / (din + dout)
        mean[w0:w1] = rng.normal(0.0, np.sqrt(scale), size=w1 - w0)
        logv[w0:b1] = np.log(1e-6 * scale)
    d = arch.layer_widths[0]
    return WeightPosterior(arch, mean, logv, np.zeros(d), np.ones(d))


def draw_weight_samples(post: WeightPosterior, mc_samples: int, seed: int) -> np.ndarray:
    """(mc_samples, P) reparameterized draws w = m + sqrt(v) * eps."""
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((mc_samples, post.mean.size))
    return post.mean[None, :] + np.exp(0.5 * post.log_variance)[None, :] * eps


def _forward(arch: BnnArchitecture, weights: np.ndarray, X: np.ndarray):
    """Forward pass for a stack of weight samples.

    weights: (K, P); X: (b, d) already standardized.
    Returns final activations (K, b) plus per-layer inputs and
    pre-activations for backprop.
    """
    K = weights.shape[0]
    slices = _layer_slices(arch)
    A = np.broadcast_to(X, (K,) + X.shape)
    inputs, pres = [], []
    for li, (w0, w1, b1, shape) in enumerate(slices):
        W = weights[:, w0:w1].reshape((K,) + shape)
        b = weights[:, w1:b1]
        inputs.append(A)
        pre = np.einsum("kbi,kij->kbj", A, W) + b[:, None, :]
        pres.append(pre)
        if li < len(slices) - 1:
            A = np.exp(-pre * pre) if arch.hidden_activation == "gaussian_rbf" else np.maximum(pre, 0.0)
    return pres[-1][:, :, 0], inputs, pres


def _activation_grad(arch: BnnArchitecture, pre: np.ndarray) -> np.ndarray:
    if arch.hidden_activation == "gaussian_rbf":
        return -2.0 * pre * np.exp(-pre * pre)
    return (pre > 0.0).astype(float)


def _backward_params(arch: BnnArchitecture, weights: np.ndarray, inputs, pres,
                     delta_out: np.ndarray) -> np.ndarray:
    """Gradient of sum(delta_out * a_out) w.r.t. each weight sample, (K, P)."""
    K = weights.shape[0]
    slices = _layer_slices(arch)
    grad = np.zeros_like(weights)
    delta = delta_out[:, :, None]
    for li in range(len(slices) - 1, -1, -1):
        w0, w1, b1, shape = slices[li]
        grad[:, w0:w1] = np.einsum("kbi,kbj->kij", inputs[li], delta).reshape(K, -1)
        grad[:, w1:b1] = delta.sum(axis=1)
        if li > 0:
            W = weights[:, w0:w1].reshape((K,) + shape)
            delta = np.einsum("kbj,kij->kbi", delta, W) * _activation_grad(arch, pres[li - 1])
    return grad


def _backward_input(arch: BnnArchitecture, weights: np.ndarray, pres,
                    delta_out: np.ndarray) -> np.ndarray:
    """Gradient of the final activation w.r.t. the network input, (K, b, d)."""
    K = weights.shape[0]
    slices = _layer_slices(arch)
    delta = delta_out[:, :, None]
    for li in range(len(slices) - 1, -1, -1):
        w0, w1, b1, shape = slices[li]
        W = weights[:, w0:w1].reshape((K,) + shape)
        delta = np.einsum("kbj,kij->kbi", delta, W)
        if li > 0:
            delta = delta * _activation_grad(arch, pres[li - 1])
    return delta


def _log_likelihood(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """log p(y | a) = -softplus((1-2y) a) elementwise, computed stably."""
    x = (1.0 - 2.0 * y)[None, :] * a
    return -(np.logaddexp(0.0, x))


def _standardize(post: WeightPosterior, X: np.ndarray) -> np.ndarray:
    return (np.atleast_2d(X) - post.input_mean) / post.input_scale


def _split_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([np.asarray(p.z, dtype=float) for p in batch])
    y = np.array([float(p.label) for p in batch])
    return X, y


def _energy_parts(post: WeightPosterior, X: np.ndarray, y: np.ndarray,
                  cfg: AlphaTrainConfig, n_total: int, weights: np.ndarray):
    """Energy value plus the per-sample output deltas needed for backprop."""
    Xs = _standardize(post, X)
    a, inputs, pres = _forward(post.arch, weights, Xs)
    ll = _log_likelihood(a, y)                       # (K, b)
    K, b = ll.shape
    scale = n_total / b
    vp = cfg.prior_variance
    v = np.exp(post.log_variance) / vp
    kl = 0.5 * float(np.sum(v + post.mean ** 2 / vp - 1.0 - np.log(v)))
    if cfg.use_vb_limit:
        data_term = float(np.sum(np.mean(ll, axis=0)))
        omega = np.full((K, b), 1.0 / K)
    else:
        data_term = float(np.sum(logsumexp(cfg.alpha * ll, axis=0) - np.log(K)) / cfg.alpha)
        omega = softmax(cfg.alpha * ll, axis=0)
    value = kl - scale * data_term
    delta_out = -scale * omega * (y[None, :] - expit(a))
    return value, delta_out, inputs, pres


def alpha_energy(post: WeightPosterior, batch: list[LabeledLatentPoint],
                 cfg: AlphaTrainConfig, n_total: int) -> float:
    """Minibatch alpha-divergence energy, MC-estimated with cfg.mc_samples
    draws seeded by cfg.seed (so repeated calls share the noise)."""
    X, y = _split_batch(batch)
    weights = draw_weight_samples(post, cfg.mc_samples, cfg.seed)
    value, _, _, _ = _energy_parts(post, X, y, cfg, n_total, weights)
    if not np.isfinite(value):
        raise NumericalError("alpha energy is not finite")
    return value


def alpha_energy_gradients(post: WeightPosterior, batch: list[LabeledLatentPoint],
                           cfg: AlphaTrainConfig, n_total: int,
                           weights: np.ndarray | None = None):
    """(value, d/d mean, d/d log_variance) of the minibatch energy."""
    X, y = _split_batch(batch)
    if weights is None:
        weights = draw_weight_samples(post, cfg.mc_samples, cfg.seed)
    value, delta_out, inputs, pres = _energy_parts(post, X, y, cfg, n_total, weights)
    if not np.isfinite(value):
        raise NumericalError("alpha energy is not finite")
    gw = _backward_params(post.arch, weights, inputs, pres, delta_out)   # (K, P)
    sd = np.exp(0.5 * post.log_variance)
    eps = (weights - post.mean[None, :]) / sd[None, :]
    vp = cfg.prior_variance
    grad_mean = gw.sum(axis=0) + post.mean / vp
    grad_logv = (np.sum(gw * 0.5 * sd[None, :] * eps, axis=0)
                 + 0.5 * (np.exp(post.log_variance) / vp - 1.0))
    return value, grad_mean, grad_logv


def train_constraint(data: list[LabeledLatentPoint], arch: BnnArchitecture,
                     cfg: AlphaTrainConfig) -> WeightPosterior:
    """Train the posterior by seeded minibatch Adam on the energy.

    Inputs are standardized per dimension and the transform is stored on
    the posterior.  The full-data energy is evaluated with a fixed noise
    draw once per epoch and the best parameters seen (including the
    initial ones) are kept.  Deterministic for a fixed cfg.seed.
    """
    labels = {p.label for p in data}
    if labels != {0, 1}:
        raise DegenerateDataError(f"training data has labels {sorted(labels)}; need both classes")
    X, y = _split_batch(data)
    if X.shape[1] != arch.layer_widths[0]:
        raise ValueError(f"data dimension {X.shape[1]} != input width {arch.layer_widths[0]}")
    n = len(data)

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    init_seed, perm_seed, noise_seed = (int(s.generate_state(1)[0]) for s in seeds)
    post = init_posterior(arch, init_seed)
    post.input_mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-8] = 1.0
    post.input_scale = scale

    P = post.mean.size
    params = np.concatenate([post.mean, post.log_variance])
    opt = Adam(params.size, cfg.learning_rate)
    perm_rng = np.random.default_rng(perm_seed)
    noise_rng = np.random.default_rng(noise_seed)
    eval_eps = np.random.default_rng(noise_seed + 1).standard_normal((cfg.mc_samples, P))

    def as_posterior(p: np.ndarray) -> WeightPosterior:
        return WeightPosterior(arch, p[:P].copy(), p[P:].copy(),
                               post.input_mean, post.input_scale)

    def full_energy(p: np.ndarray) -> float:
        cand = as_posterior(p)
        w = cand.mean[None, :] + np.exp(0.5 * cand.log_variance)[None, :] * eval_eps
        value, _, _, _ = _energy_parts(cand, X, y, cfg, n, w)
        return value

    best = params.copy()
    best_energy = full_energy(params)
    if not np.isfinite(best_energy):
        raise NumericalError("initial energy is not finite")

    for _ in range(cfg.epochs):
        perm = perm_rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start:start + cfg.minibatch_size]
            cand = as_posterior(params)
            eps = noise_rng.standard_normal((cfg.mc_samples, P))
            w = cand.mean[None, :] + np.exp(0.5 * cand.log_variance)[None, :] * eps
            batch = [LabeledLatentPoint(X[i], int(y[i])) for i in idx]
            _, gm, gv = alpha_energy_gradients(cand, batch, cfg, n, weights=w)
            params = opt.step(params, np.concatenate([gm, gv]))
        energy = full_energy(params)
        if not np.isfinite(energy):
            raise NumericalError("training energy diverged")
        if energy < best_energy:
            best_energy = energy
            best = params.copy()

    return as_posterior(best)


def predict_prob_with_weights(post: WeightPosterior, Zq: np.ndarray,
                              weights: np.ndarray) -> np.ndarray:
    """Mean logistic output under explicitly supplied weight draws."""
    Xs = _standardize(post, Zq)
    a, _, _ = _forward(post.arch, weights, Xs)
    return np.mean(expit(a), axis=0)


def predict_prob(post: WeightPosterior, Zq: np.ndarray, mc_samples: int = 50,
                 seed: int = 0) -> np.ndarray:
    """Mean logistic output over mc_samples posterior weight draws."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be positive")
    return predict_prob_with_weights(post, Zq, draw_weight_samples(post, mc_samples, seed))


def log_prob_and_grad(post: WeightPosterior, z: np.ndarray,
                      weights: np.ndarray) -> tuple[float, np.ndarray]:
    """log Pr(C(z)) and its gradient w.r.t. z under frozen weight draws.

    log of the sample mean of logistic outputs, computed in log space so
    probabilities far below float range still yield usable gradients.
    """
    z = np.asarray(z, dtype=float).ravel()
    Xs = _standardize(post, z[None, :])
    a, _, pres = _forward(post.arch, weights, Xs)          # (K, 1)
    K = weights.shape[0]
    log_sig = -np.logaddexp(0.0, -a[:, 0])                 # log sigmoid(a_k)
    logp = float(logsumexp(log_sig) - np.log(K))
    w = softmax(log_sig)                                   # sample weights of the LSE
    delta_out = (w * expit(-a[:, 0]))[:, None]             # d logp / d a_k
    din = _backward_input(post.arch, weights, pres, delta_out)   # (K, 1, d)
    grad = din.sum(axis=(0, 1)) / post.input_scale
    return logp, grad


def to_json(post: WeightPosterior) -> str:
    doc = {
        "layer_widths": post.arch.layer_widths,
        "hidden_activation": post.arch.hidden_activation,
        "mean": post.mean.tolist(),
        "log_variance": post.log_variance.tolist(),
        "input_mean": post.input_mean.tolist(),
        "input_scale": post.input_scale.tolist(),
    }
    return json.dumps(doc)


def from_json(doc: str) -> WeightPosterior:
    raw = json.loads(doc)
    arch = BnnArchitecture(list(raw["layer_widths"]), raw["hidden_activation"])
    return WeightPosterior(arch, np.asarray(raw["mean"]), np.asarray(raw["log_variance"]),
                           np.asarray(raw["input_mean"]), np.asarray(raw["input_scale"]))
