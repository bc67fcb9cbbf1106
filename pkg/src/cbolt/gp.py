"""Sparse Gaussian process regression with the FITC approximation.

The model keeps an ARD exponentiated-quadratic kernel, a set of inducing
locations, and a Gaussian noise variance, all trained jointly by
minibatch Adam on the FITC negative log marginal likelihood.  All
hyperparameters live in log space.  With the inducing set placed at the
training inputs the FITC objective and predictions coincide with an
exact GP, which is the main correctness anchor for this module.

Predictions report latent variance and noise variance separately; the
acquisition layer consumes the latent part only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.linalg import LinAlgError

from .optim import Adam

_LAM_FLOOR = 1e-12


class NumericalError(RuntimeError):
    """A covariance factorization failed after jitter was applied."""


class StaleModelError(RuntimeError):
    """predict was called on a model without a current factorization."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite training loss at epoch {epoch}")


@dataclass
class KernelHyperparams:
    log_lengthscales: np.ndarray
    log_signal_variance: float

    def copy(self) -> "KernelHyperparams":
        return KernelHyperparams(self.log_lengthscales.copy(), float(self.log_signal_variance))


@dataclass
class GpPrediction:
    mean: np.ndarray
    latent_variance: np.ndarray
    noise_variance: float


@dataclass
class AdamConfig:
    learning_rate: float = 0.005
    epochs: int = 400
    minibatch_size: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    optimize_inducing: bool = True


@dataclass
class _Factorization:
    X: np.ndarray
    y: np.ndarray
    Lm: np.ndarray
    Lb: np.ndarray
    w: np.ndarray       # A^{-1} Kmn lam^{-1} y, so mean(z) = k(z) @ w
    E: np.ndarray       # Kmm^{-1} - A^{-1}, so var(z) = s2 - k(z) @ E @ k(z)


@dataclass
class FitcModel:
    kernel: KernelHyperparams
    inducing_locations: np.ndarray
    log_noise_variance: float
    jitter: float = 1e-5
    cached_factorization: _Factorization | None = None

    # -- convenience accessors used by the acquisition layer ------------
    def predict(self, Zq: np.ndarray) -> GpPrediction:
        return predict(self, Zq)

    def predict_gradients(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return predict_gradients(self, z)

    def condition(self, z: np.ndarray, y_value: float) -> "FitcModel":
        """Return a model additionally conditioned on one observation."""
        fac = self._require_factorization()
        X = np.vstack([fac.X, np.atleast_2d(z)])
        y = np.append(fac.y, y_value)
        return factorize(self, X, y)

    def inducing_points(self) -> np.ndarray:
        return self.inducing_locations

    def _require_factorization(self) -> _Factorization:
        if self.cached_factorization is None:
            raise StaleModelError("model has no factorization; call factorize or fit first")
        return self.cached_factorization


def ard_kernel(A: np.ndarray, B: np.ndarray, kernel: KernelHyperparams) -> np.ndarray:
    """ARD exponentiated-quadratic cross-covariance between row sets."""
    ls = np.exp(kernel.log_lengthscales)
    s2 = np.exp(kernel.log_signal_variance)
    As = np.atleast_2d(A) / ls
    Bs = np.atleast_2d(B) / ls
    d2 = np.sum(As * As, axis=1)[:, None] + np.sum(Bs * Bs, axis=1)[None, :] - 2.0 * As @ Bs.T
    return s2 * np.exp(-0.5 * np.maximum(d2, 0.0))


def make_model(X: np.ndarray, y: np.ndarray, num_inducing: int, seed: int = 0,
               jitter: float = 1e-5) -> FitcModel:
    """Data-driven initialization; inducing points are a uniform subsample."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if not 1 <= num_inducing <= n:
        raise ValueError(f"num_inducing must be in [1, {n}], got {num_inducing}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=num_inducing, replace=False)
    ls0 = np.std(X, axis=0)
    ls0[ls0 < 1e-6] = 1.0
    var_y = float(np.var(y))
    if var_y < 1e-12:
        var_y = 1.0
    kernel = KernelHyperparams(np.log(ls0), float(np.log(var_y)))
    return FitcModel(kernel, X[idx].copy(), float(np.log(0.01 * var_y)), jitter)


def _chol(mat: np.ndarray, name: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except LinAlgError as exc:
        raise NumericalError(f"{name} is not positive definite after jitter") from exc


def _solve_lower(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular
    return solve_triangular(L, B, lower=True, check_finite=False)


def _solve_upper(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular
    return solve_triangular(L.T, B, lower=False, check_finite=False)


def _fitc_pieces(model: FitcModel, X: np.ndarray, y: np.ndarray):
    Z = model.inducing_locations
    M = Z.shape[0]
    s2 = np.exp(model.kernel.log_signal_variance)
    noise = np.exp(model.log_noise_variance)
    Kmm = ard_kernel(Z, Z, model.kernel) + model.jitter * np.eye(M)
    Knm = ard_kernel(X, Z, model.kernel)
    Lm = _chol(Kmm, "inducing covariance Kmm")
    V = _solve_lower(Lm, Knm.T)                      # (M, n)
    q = np.sum(V * V, axis=0)
    lam = np.maximum(s2 - q + noise, _LAM_FLOOR)
    B = np.eye(M) + (V / lam) @ V.T
    Lb = _chol(B, "FITC auxiliary matrix B")
    ylam = y / lam
    beta = _solve_lower(Lb, V @ ylam)
    return Knm, Lm, V, lam, Lb, ylam, beta


def fitc_negative_log_marginal(model: FitcModel, X: np.ndarray, y: np.ndarray) -> float:
    """FITC NLML of the given data under the model's current parameters."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    _, _, _, lam, Lb, ylam, beta = _fitc_pieces(model, X, y)
    return 0.5 * (n * np.log(2.0 * np.pi) + np.sum(np.log(lam))
                  + 2.0 * np.sum(np.log(np.diag(Lb)))
                  + float(y @ ylam) - float(beta @ beta))


def _nlml_value_and_grad(model: FitcModel, X: np.ndarray, y: np.ndarray,
                         with_inducing: bool):
    """NLML and gradients w.r.t. log-hyperparameters and inducing locations.

    Uses the dense Woodbury identity on the minibatch covariance; the
    heteroscedastic FITC correction cancels the diagonal of the
    sensitivity matrix, so only the zero-diagonal part survives in the
    kernel-matrix coefficients.
    """
    Z = model.inducing_locations
    n, d = X.shape
    ls = np.exp(model.kernel.log_lengthscales)
    s2 = np.exp(model.kernel.log_signal_variance)
    noise = np.exp(model.log_noise_variance)

    Knm, Lm, V, lam, Lb, ylam, beta = _fitc_pieces(model, X, y)
    value = 0.5 * (n * np.log(2.0 * np.pi) + np.sum(np.log(lam))
                   + 2.0 * np.sum(np.log(np.diag(Lb)))
                   + float(y @ ylam) - float(beta @ beta))

    W = _solve_lower(Lb, V)                          # (M, n)
    Wl = W / lam
    Cinv = np.diag(1.0 / lam) - Wl.T @ Wl
    alpha = Cinv @ y
    G = Cinv - np.outer(alpha, alpha)
    gdiag = np.diag(G).copy()
    Ghat = G - np.diag(gdiag)
    sum_g = float(np.sum(gdiag))

    P = _solve_upper(Lm, V)                          # Kmm^{-1} Kmn, (M, n)
    Wnm = 2.0 * (Ghat @ P.T)                         # coefficient of dKnm
    Wmm = -(P @ Ghat @ P.T)                          # coefficient of dKmm
    Kmm_nj = ard_kernel(Z, Z, model.kernel)

    A_nm = Wnm * Knm
    B_mm = Wmm * Kmm_nj

    diff_xz = X[:, None, :] - Z[None, :, :]          # (n, M, d)
    diff_zz = Z[:, None, :] - Z[None, :, :]          # (M, M, d)
    inv_ls2 = 1.0 / (ls * ls)

    grad_logls = 0.5 * inv_ls2 * (
        np.einsum("nm,nmd->d", A_nm, diff_xz * diff_xz)
        + np.einsum("ab,abd->d", B_mm, diff_zz * diff_zz))
    grad_logs2 = 0.5 * (float(np.sum(A_nm)) + float(np.sum(B_mm)) + s2 * sum_g)
    grad_lognoise = 0.5 * noise * sum_g

    grad_Z = None
    if with_inducing:
        term_nm = A_nm.T @ X - np.sum(A_nm, axis=0)[:, None] * Z
        term_mm = 2.0 * (B_mm @ Z - np.sum(B_mm, axis=1)[:, None] * Z)
        grad_Z = 0.5 * (term_nm + term_mm) * inv_ls2[None, :]

    return value, grad_logls, grad_logs2, grad_lognoise, grad_Z


def fitc_gradients(model: FitcModel, X: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
    """Analytic NLML gradients, keyed by parameter name (test surface)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    _, gls, gs2, gn, gz = _nlml_value_and_grad(model, X, y, with_inducing=True)
    return {"log_lengthscales": gls, "log_signal_variance": np.array(gs2),
            "log_noise_variance": np.array(gn), "inducing_locations": gz}


def _pack(model: FitcModel, with_inducing: bool) -> np.ndarray:
    parts = [model.kernel.log_lengthscales,
             [model.kernel.log_signal_variance, model.log_noise_variance]]
    if with_inducing:
        parts.append(model.inducing_locations.ravel())
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def _unpack(model: FitcModel, params: np.ndarray, with_inducing: bool) -> FitcModel:
    d = model.kernel.log_lengthscales.size
    kernel = KernelHyperparams(params[:d].copy(), float(params[d]))
    Z = model.inducing_locations
    if with_inducing:
        Z = params[d + 2:].reshape(Z.shape).copy()
    return FitcModel(kernel, Z, float(params[d + 1]), model.jitter)


def fit(model: FitcModel, X: np.ndarray, y: np.ndarray, cfg: AdamConfig) -> FitcModel:
    """Minibatch Adam training of all log-hyperparameters (and, unless
    frozen, the inducing locations) on the FITC NLML.

    The minibatch objective is the minibatch NLML rescaled by
    n/batch_size.  The full-data NLML is evaluated once per epoch and
    the best parameters seen (including the initial ones) are returned,
    so the result never degrades the initial model.  Deterministic for
    a fixed cfg.seed.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    if cfg.minibatch_size < 1 or cfg.minibatch_size > n:
        raise ValueError(f"minibatch_size must be in [1, {n}], got {cfg.minibatch_size}")

    with_inducing = cfg.optimize_inducing
    params = _pack(model, with_inducing)
    best_params = params.copy()
    best_nlml = fitc_negative_log_marginal(model, X, y)
    if not np.isfinite(best_nlml):
        raise TrainingDivergedError(0)

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(params.size, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start:start + cfg.minibatch_size]
            if not np.all(np.isfinite(params)):
                raise TrainingDivergedError(epoch)
            cur = _unpack(model, params, with_inducing)
            try:
                value, gls, gs2, gn, gz = _nlml_value_and_grad(cur, X[idx], y[idx], with_inducing)
            except NumericalError as exc:
                raise TrainingDivergedError(epoch) from exc
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch)
            scale = n / idx.size
            grad = [gls * scale, [gs2 * scale, gn * scale]]
            if with_inducing:
                grad.append(gz.ravel() * scale)
            flat = np.concatenate([np.asarray(g, dtype=float).ravel() for g in grad])
            params = opt.step(params, flat)
        cur = _unpack(model, params, with_inducing)
        try:
            nlml = fitc_negative_log_marginal(cur, X, y)
        except NumericalError as exc:
            raise TrainingDivergedError(epoch) from exc
        if not np.isfinite(nlml):
            raise TrainingDivergedError(epoch)
        if nlml < best_nlml:
            best_nlml = nlml
            best_params = params.copy()

    return factorize(_unpack(model, best_params, with_inducing), X, y)


def factorize(model: FitcModel, X: np.ndarray, y: np.ndarray) -> FitcModel:
    """Return a copy of the model carrying the solver state for predict."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    _, Lm, V, lam, Lb, ylam, beta = _fitc_pieces(model, X, y)
    w = _solve_upper(Lm, _solve_upper(Lb, beta))
    M = Lm.shape[0]
    Kmm_inv = _solve_upper(Lm, _solve_lower(Lm, np.eye(M)))
    Binv = _solve_upper(Lb, _solve_lower(Lb, np.eye(M)))
    A_inv = _solve_upper(Lm, (_solve_upper(Lm, Binv)).T)
    fac = _Factorization(X, y, Lm, Lb, w, Kmm_inv - A_inv)
    return replace(model, cached_factorization=fac)


def predict(model: FitcModel, Zq: np.ndarray) -> GpPrediction:
    """Posterior mean and latent variance at query points.

    Raises StaleModelError when the model carries no factorization.
    """
    fac = model._require_factorization()
    Zq = np.atleast_2d(np.asarray(Zq, dtype=float))
    s2 = np.exp(model.kernel.log_signal_variance)
    Kq = ard_kernel(Zq, model.inducing_locations, model.kernel)   # (q, M)
    mean = Kq @ fac.w
    var = s2 - np.einsum("qm,mk,qk->q", Kq, fac.E, Kq)
    return GpPrediction(mean, np.maximum(var, 0.0), float(np.exp(model.log_noise_variance)))


def predict_gradients(model: FitcModel, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of posterior mean and latent variance at one point."""
    fac = model._require_factorization()
    z = np.asarray(z, dtype=float).ravel()
    ls2 = np.exp(2.0 * model.kernel.log_lengthscales)
    k = ard_kernel(z[None, :], model.inducing_locations, model.kernel).ravel()   # (M,)
    J = (k[:, None] * (model.inducing_locations - z[None, :])) / ls2[None, :]    # (M, d)
    mean_grad = J.T @ fac.w
    var_grad = -2.0 * (J.T @ (fac.E @ k))
    return mean_grad, var_grad


def to_json(model: FitcModel) -> str:
    """Serialize the model snapshot (schema documented in the README)."""
    doc = {
        "log_lengthscales": model.kernel.log_lengthscales.tolist(),
        "log_signal_variance": model.kernel.log_signal_variance,
        "log_noise_variance": model.log_noise_variance,
        "inducing_locations": model.inducing_locations.tolist(),
        "jitter": model.jitter,
    }
    return json.dumps(doc, indent=2)


def from_json(doc: str) -> FitcModel:
    raw = json.loads(doc)
    kernel = KernelHyperparams(np.asarray(raw["log_lengthscales"], dtype=float),
                               float(raw["log_signal_variance"]))
    return FitcModel(kernel, np.asarray(raw["inducing_locations"], dtype=float),
                     float(raw["log_noise_variance"]), float(raw["jitter"]))
