"""Constrained expected-improvement acquisition and its optimizer.

Everything here runs in minimization convention: the objective model
predicts a quantity to be minimized and improvement is measured below
the incumbent eta.  The acquisition is EI(z) * Pr(C(z)) once a feasible
incumbent exists; before that it is Pr(C(z)) alone, which drives the
search toward the feasible region without consulting the objective.

The optimizer runs multi-start L-BFGS-B on the log acquisition.  Log
space keeps the surface usable where EI or Pr underflow; the constraint
probability uses weight samples frozen per optimization run, so the
surface each restart sees is smooth and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import erfcx, log_ndtr
from scipy.stats import norm

from . import bnn

_LOG_2PI = np.log(2.0 * np.pi)
_MIN_STD = 1e-9


@dataclass
class ProbabilisticConstraintSpec:
    delta: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")


@dataclass
class Incumbent:
    eta: float | None
    feasible_found: bool

    def __post_init__(self):
        if self.feasible_found != (self.eta is not None):
            raise ValueError("eta must be present exactly when feasible_found")


@dataclass
class AcquisitionConfig:
    bounds: np.ndarray
    restarts: int = 10
    max_quasi_newton_steps: int = 100
    convergence_tolerance: float = 1e-9
    seed: int = 0
    mc_samples: int = 50

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float)
        if self.bounds.ndim != 2 or self.bounds.shape[1] != 2:
            raise ValueError("bounds must have shape (d, 2)")
        if np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise ValueError("each lower bound must be below its upper bound")
        if self.restarts < 1:
            raise ValueError("restarts must be positive")


@dataclass
class AcquisitionResult:
    z: np.ndarray
    value: float
    log_value: float
    degraded: bool
    restart_index: int


def expected_improvement(mean: float, std: float, eta: float) -> float:
    """Closed-form EI below eta; max(0, eta - mean) in the std = 0 limit."""
    if std < 0.0:
        raise ValueError("std must be non-negative")
    if std == 0.0:
        return max(0.0, eta - mean)
    gamma = (eta - mean) / std
    return float((eta - mean) * norm.cdf(gamma) + std * norm.pdf(gamma))


def eic(ei_value: float, pr_constraint: float) -> float:
    return ei_value * pr_constraint


def _log_h(gamma: float) -> float:
    """log(gamma*Phi(gamma) + phi(gamma)), stable across the whole line.

    For gamma << 0 the direct form cancels; a Mills-ratio series takes
    over once the direct subtraction loses precision.
    """
    log_phi = -0.5 * gamma * gamma - 0.5 * _LOG_2PI
    t = -gamma
    if t < 1.0:
        return float(np.log(gamma * norm.cdf(gamma) + np.exp(log_phi)))
    if t <= 1e4:
        bracket = 1.0 - t * np.sqrt(np.pi / 2.0) * erfcx(t / np.sqrt(2.0))
        return float(log_phi + np.log(bracket))
    return float(log_phi - 2.0 * np.log(t) + np.log1p(-3.0 / (t * t)))


def log_expected_improvement_and_grad(z: np.ndarray, gp_model, eta: float):
    """log EI at z plus its gradient through the GP mean and variance."""
    z = np.asarray(z, dtype=float).ravel()
    pred = gp_model.predict(z[None, :])
    mu = float(pred.mean[0])
    s = max(float(np.sqrt(pred.latent_variance[0])), _MIN_STD)
    gamma = (eta - mu) / s
    log_h = _log_h(gamma)
    log_ei = np.log(s) + log_h
    mean_grad, var_grad = gp_model.predict_gradients(z)
    std_grad = var_grad / (2.0 * s)
    r_cdf = np.exp(log_ndtr(gamma) - log_h)
    r_pdf = np.exp(-0.5 * gamma * gamma - 0.5 * _LOG_2PI - log_h)
    grad = (-r_cdf * mean_grad + r_pdf * std_grad) / s
    return float(log_ei), grad


def _constraint_prob(cbnn, Zq: np.ndarray, mc_samples: int, seed: int) -> np.ndarray:
    if isinstance(cbnn, bnn.WeightPosterior):
        return bnn.predict_prob(cbnn, Zq, mc_samples, seed)
    return cbnn.predict_prob(Zq, mc_samples, seed)


def _constraint_weights(cbnn, mc_samples: int, seed: int):
    if isinstance(cbnn, bnn.WeightPosterior):
        return bnn.draw_weight_samples(cbnn, mc_samples, seed)
    return cbnn.draw_weights(mc_samples, seed)


def _constraint_prob_with_weights(cbnn, Zq: np.ndarray, weights) -> np.ndarray:
    if isinstance(cbnn, bnn.WeightPosterior):
        return bnn.predict_prob_with_weights(cbnn, Zq, weights)
    return cbnn.predict_prob_with_weights(Zq, weights)


def _constraint_log_prob_grad(cbnn, z: np.ndarray, weights):
    if isinstance(cbnn, bnn.WeightPosterior):
        return bnn.log_prob_and_grad(cbnn, z, weights)
    return cbnn.log_prob_and_grad(z, weights)


def select_incumbent(gp_model, cbnn, candidates: np.ndarray,
                     spec: ProbabilisticConstraintSpec, mc_samples: int = 200,
                     seed: int = 0) -> Incumbent:
    """Minimum posterior mean over candidates meeting Pr(C) >= 1 - delta."""
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    prob = _constraint_prob(cbnn, candidates, mc_samples, seed)
    mask = prob >= 1.0 - spec.delta
    if not np.any(mask):
        return Incumbent(None, False)
    means = gp_model.predict(candidates[mask]).mean
    return Incumbent(float(np.min(means)), True)


def log_acquisition_and_grad(z: np.ndarray, gp_model, cbnn, incumbent: Incumbent,
                             weights) -> tuple[float, np.ndarray]:
    """Log of the two-phase acquisition and its gradient w.r.t. z."""
    z = np.asarray(z, dtype=float).ravel()
    log_pr, pr_grad = _constraint_log_prob_grad(cbnn, z, weights)
    if not incumbent.feasible_found:
        return log_pr, pr_grad
    log_ei, ei_grad = log_expected_improvement_and_grad(z, gp_model, incumbent.eta)
    return log_pr + log_ei, pr_grad + ei_grad


def acquisition_value(z: np.ndarray, gp_model, cbnn, incumbent: Incumbent,
                      spec: ProbabilisticConstraintSpec, mc_samples: int = 200,
                      seed: int = 0, weights=None) -> float:
    """Plain-space acquisition: Pr(C(z)) before a feasible incumbent exists,
    EI(z) * Pr(C(z)) afterwards."""
    z = np.asarray(z, dtype=float).ravel()
    if weights is None:
        weights = _constraint_weights(cbnn, mc_samples, seed)
    pr = float(_constraint_prob_with_weights(cbnn, z[None, :], weights)[0])
    if not incumbent.feasible_found:
        return pr
    pred = gp_model.predict(z[None, :])
    ei = expected_improvement(float(pred.mean[0]),
                              float(np.sqrt(pred.latent_variance[0])), incumbent.eta)
    return eic(ei, pr)


def acquisition_value_and_grad(z: np.ndarray, gp_model, cbnn, incumbent: Incumbent,
                               weights) -> tuple[float, np.ndarray]:
    """Plain acquisition value and gradient, for gradient verification."""
    log_val, log_grad = log_acquisition_and_grad(z, gp_model, cbnn, incumbent, weights)
    value = float(np.exp(log_val))
    return value, value * log_grad


def optimize_acquisition(gp_model, cbnn, incumbent: Incumbent,
                         spec: ProbabilisticConstraintSpec,
                         cfg: AcquisitionConfig) -> AcquisitionResult:
    """Multi-start bounded L-BFGS-B maximization of the log acquisition.

    Starts are seeded uniform draws in the box; the constraint weight
    samples are drawn once and shared by every restart.  Ties between
    restarts break toward the lowest restart index.  If every restart
    fails its line search, the best evaluated start point is returned
    with the degraded flag set.
    """
    d = cfg.bounds.shape[0]
    ss = np.random.SeedSequence(cfg.seed).spawn(2)
    start_rng = np.random.default_rng(ss[0])
    weights = _constraint_weights(cbnn, cfg.mc_samples, int(ss[1].generate_state(1)[0]))
    starts = start_rng.uniform(cfg.bounds[:, 0], cfg.bounds[:, 1], size=(cfg.restarts, d))

    def objective(z):
        val, grad = log_acquisition_and_grad(z, gp_model, cbnn, incumbent, weights)
        return -val, -grad

    best_idx, best_log, best_z = -1, -np.inf, None
    start_best_idx, start_best_log = 0, -np.inf
    for i, z0 in enumerate(starts):
        start_log = -objective(z0)[0]
        if np.isfinite(start_log) and start_log > start_best_log:
            start_best_idx, start_best_log = i, start_log
        res = minimize(objective, z0, jac=True, method="L-BFGS-B",
                       bounds=list(map(tuple, cfg.bounds)),
                       options={"maxiter": cfg.max_quasi_newton_steps,
                                "ftol": cfg.convergence_tolerance,
                                "gtol": cfg.convergence_tolerance})
        if not res.success:
            continue
        log_val = -float(res.fun)
        if log_val > best_log:
            best_idx, best_log, best_z = i, log_val, res.x.copy()

    if best_idx < 0:
        z = starts[start_best_idx]
        return AcquisitionResult(z, float(np.exp(start_best_log)), start_best_log,
                                 True, start_best_idx)
    z = np.clip(best_z, cfg.bounds[:, 0], cfg.bounds[:, 1])
    return AcquisitionResult(z, float(np.exp(best_log)), best_log, False, best_idx)
