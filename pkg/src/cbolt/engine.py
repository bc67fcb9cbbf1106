"""Outer-loop constrained Bayesian optimization.

Sequential and Kriging-Believer parallel collection, a random-sampling
baseline, and trace recording.  A problem supplies `bounds` (d, 2) and
`evaluate(z) -> (objective or None, constraint_bool)`; it may optionally
supply `initial_observations(n, seed)` and `initial_constraint_pool()`.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import acquisition, bnn, gp
from .acquisition import AcquisitionConfig, Incumbent, ProbabilisticConstraintSpec


@dataclass
class Observation:
    """One evaluated point. objective is None when nothing scoreable came back."""

    z: np.ndarray
    objective: float | None
    constraint_satisfied: int
    iteration: int

    def __post_init__(self) -> None:
        self.z = np.asarray(self.z, dtype=float).ravel()
        if self.iteration < 0:
            raise ValueError(f"iteration must be >= 0, got {self.iteration}")
        if self.constraint_satisfied not in (0, 1):
            raise ValueError(f"constraint label must be 0 or 1, got {self.constraint_satisfied}")


@dataclass
class BoConfig:
    """Outer-loop settings plus model and acquisition knobs."""

    iterations: int = 10
    batch_size: int = 1
    init_points: int = 10
    spec: ProbabilisticConstraintSpec = field(default_factory=ProbabilisticConstraintSpec)
    seed: int = 0
    # Inducing count and minibatch sizes are clamped to the data size each
    # refit, so these defaults give full-batch training and M = n at BO
    # scales; small M starves the believer step of variance reduction.
    gp_num_inducing: int = 64
    gp_jitter: float = 1e-5
    gp_adam: gp.AdamConfig = field(default_factory=lambda: gp.AdamConfig(
        learning_rate=0.005, epochs=400, minibatch_size=512))
    bnn_hidden_widths: tuple[int, ...] = (50,)
    bnn_activation: str = "gaussian_rbf"
    bnn_train: bnn.AlphaTrainConfig = field(default_factory=lambda: bnn.AlphaTrainConfig(
        alpha=0.5, mc_samples=50, minibatch_size=512, learning_rate=0.01,
        epochs=200, prior_variance=25.0))
    acq_restarts: int = 10
    acq_steps: int = 100
    acq_tolerance: float = 1e-9
    acq_mc_samples: int = 50

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.init_points < 1:
            raise ValueError(f"init_points must be >= 1, got {self.init_points}")


@dataclass
class BoTrace:
    """Ordered observations plus the running best feasible objective.

    best_feasible_per_iteration holds one entry per recording point (the
    initial design, then each outer iteration); entries are None until a
    feasible observation with an objective exists, and non-increasing after.
    """

    observations: list[Observation]
    best_feasible_per_iteration: list[float | None]

    def final_best_feasible(self) -> float | None:
        return self.best_feasible_per_iteration[-1] if self.best_feasible_per_iteration else None


@dataclass(frozen=True)
class ConstantProbabilityModel:
    """Constraint model with a flat success probability.

    Stands in for the BNN when the constraint is forced on (probability 1)
    or when the accumulated labels are single-class.
    """

    probability: float

    def predict_prob(self, Zq: np.ndarray, mc_samples: int = 50, seed: int = 0) -> np.ndarray:
        return np.full(np.atleast_2d(Zq).shape[0], self.probability)

    def draw_weights(self, mc_samples: int, seed: int) -> None:
        return None

    def predict_prob_with_weights(self, Zq: np.ndarray, weights) -> np.ndarray:
        return self.predict_prob(Zq)

    def log_prob_and_grad(self, z: np.ndarray, weights) -> tuple[float, np.ndarray]:
        z = np.asarray(z, dtype=float).ravel()
        return math.log(max(self.probability, 1e-9)), np.zeros_like(z)


@dataclass
class StandardizedGp:
    """FITC model trained on standardized inputs and targets.

    Exposes the prediction interface in raw units so the acquisition layer
    and the outer loop never see the transform.
    """

    model: gp.FitcModel
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, num_inducing: int,
            adam: gp.AdamConfig, jitter: float = 1e-5) -> "StandardizedGp":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        x_mean = X.mean(axis=0)
        x_scale = X.std(axis=0)
        x_scale[x_scale < 1e-8] = 1.0
        y_mean = float(y.mean())
        y_scale = float(y.std())
        if y_scale < 1e-8:
            y_scale = 1.0
        Xs = (X - x_mean) / x_scale
        ys = (y - y_mean) / y_scale
        model = gp.make_model(Xs, ys, num_inducing, seed=adam.seed, jitter=jitter)
        model = gp.fit(model, Xs, ys, adam)
        return cls(model, x_mean, x_scale, y_mean, y_scale)

    def _to_internal(self, Z: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(np.asarray(Z, dtype=float)) - self.x_mean) / self.x_scale

    def predict(self, Zq: np.ndarray) -> gp.GpPrediction:
        pred = self.model.predict(self._to_internal(Zq))
        scale_sq = self.y_scale**2
        return gp.GpPrediction(
            mean=self.y_mean + self.y_scale * pred.mean,
            latent_variance=scale_sq * pred.latent_variance,
            noise_variance=scale_sq * pred.noise_variance,
        )

    def predict_gradients(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        zs = self._to_internal(z)[0]
        mean_grad, var_grad = self.model.predict_gradients(zs)
        return (self.y_scale * mean_grad / self.x_scale,
                self.y_scale**2 * var_grad / self.x_scale)

    def condition(self, z: np.ndarray, y_value: float) -> "StandardizedGp":
        zs = self._to_internal(z)[0]
        ys = (float(y_value) - self.y_mean) / self.y_scale
        return StandardizedGp(self.model.condition(zs, ys),
                              self.x_mean, self.x_scale, self.y_mean, self.y_scale)

    def inducing_points(self) -> np.ndarray:
        return self.model.inducing_locations * self.x_scale + self.x_mean


def kriging_believer_batch(gp_model, cbnn, incumbent: Incumbent,
                           spec: ProbabilisticConstraintSpec, batch_size: int,
                           cfg: AcquisitionConfig) -> list[acquisition.AcquisitionResult]:
    """Select batch_size points greedily under hallucinated observations.

    After each selection the GP is conditioned on its own posterior mean at
    the selected point; the conditioned copies are local to this call, so
    hallucinations never outlive the batch.  With batch_size=1 this is a
    single optimize_acquisition call.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    results = []
    current = gp_model
    for j in range(batch_size):
        if j == 0:
            slot_cfg = cfg
        else:
            slot_seed = int(np.random.SeedSequence([cfg.seed, j]).generate_state(1)[0])
            slot_cfg = replace(cfg, seed=slot_seed)
        res = acquisition.optimize_acquisition(current, cbnn, incumbent, spec, slot_cfg)
        results.append(res)
        if j + 1 < batch_size and current is not None:
            believed = float(current.predict(np.atleast_2d(res.z)).mean[0])
            current = current.condition(res.z, believed)
    return results


def _evaluate_safe(problem, z: np.ndarray) -> tuple[float | None, int]:
    # Evaluator failure is recorded as an infeasible label with no objective.
    try:
        objective, satisfied = problem.evaluate(z)
    except Exception:
        return None, 0
    if objective is not None:
        objective = float(objective)
    return objective, int(bool(satisfied))


def _best_feasible(observations: list[Observation]) -> float | None:
    values = [o.objective for o in observations
              if o.constraint_satisfied == 1 and o.objective is not None]
    return min(values) if values else None


def _initial_observations(problem, n: int, ss: np.random.SeedSequence) -> list[Observation]:
    if hasattr(problem, "initial_observations"):
        return list(problem.initial_observations(n, int(ss.generate_state(1)[0])))
    rng = np.random.default_rng(ss)
    bounds = np.asarray(problem.bounds, dtype=float)
    out = []
    for _ in range(n):
        z = rng.uniform(bounds[:, 0], bounds[:, 1])
        objective, satisfied = _evaluate_safe(problem, z)
        out.append(Observation(z, objective, satisfied, 0))
    return out


def _fit_objective_gp(observations: list[Observation], cfg: BoConfig,
                      seed: int) -> StandardizedGp | None:
    scored = [(o.z, o.objective) for o in observations if o.objective is not None]
    if not scored:
        return None
    X = np.stack([z for z, _ in scored])
    y = np.array([v for _, v in scored])
    adam = replace(cfg.gp_adam, seed=seed,
                   minibatch_size=min(cfg.gp_adam.minibatch_size, len(y)))
    return StandardizedGp.fit(X, y, min(cfg.gp_num_inducing, len(y)), adam,
                              jitter=cfg.gp_jitter)


def _fit_constraint_model(observations: list[Observation],
                          pool: list[bnn.LabeledLatentPoint], cfg: BoConfig,
                          seed: int):
    data = [bnn.LabeledLatentPoint(o.z, o.constraint_satisfied) for o in observations]
    data.extend(pool)
    d = data[0].z.size
    arch = bnn.BnnArchitecture([d, *cfg.bnn_hidden_widths, 1], cfg.bnn_activation)
    train_cfg = replace(cfg.bnn_train, seed=seed,
                        minibatch_size=min(cfg.bnn_train.minibatch_size, len(data)))
    try:
        return bnn.train_constraint(data, arch, train_cfg)
    except bnn.DegenerateDataError:
        # Single-class labels carry no separating signal; fall back to the
        # observed class frequency (0 or 1 here by construction).
        return ConstantProbabilityModel(float(data[0].label))


def _select_incumbent(gp_model, cbnn, observations: list[Observation],
                      cfg: BoConfig, seed: int) -> Incumbent:
    if gp_model is None:
        return Incumbent(None, False)
    candidates = np.vstack([np.stack([o.z for o in observations]),
                            gp_model.inducing_points()])
    return acquisition.select_incumbent(gp_model, cbnn, candidates, cfg.spec,
                                        mc_samples=cfg.acq_mc_samples, seed=seed)


def _run_bo(problem, cfg: BoConfig, constrained: bool) -> BoTrace:
    bounds = np.asarray(problem.bounds, dtype=float)
    root = np.random.SeedSequence(cfg.seed)
    init_ss, *iter_ss = root.spawn(1 + cfg.iterations)

    observations = _initial_observations(problem, cfg.init_points, init_ss)
    if hasattr(problem, "initial_constraint_pool"):
        pool = list(problem.initial_constraint_pool())
    else:
        pool = []
    best_per_iteration = [_best_feasible(observations)]

    for t in range(1, cfg.iterations + 1):
        gp_seed, bnn_seed, inc_seed, acq_seed = (
            int(s.generate_state(1)[0]) for s in iter_ss[t - 1].spawn(4))
        gp_model = _fit_objective_gp(observations, cfg, gp_seed)
        if constrained:
            cbnn = _fit_constraint_model(observations, pool, cfg, bnn_seed)
        else:
            cbnn = ConstantProbabilityModel(1.0)
        incumbent = _select_incumbent(gp_model, cbnn, observations, cfg, inc_seed)
        acq_cfg = AcquisitionConfig(
            bounds=bounds, restarts=cfg.acq_restarts,
            max_quasi_newton_steps=cfg.acq_steps,
            convergence_tolerance=cfg.acq_tolerance,
            seed=acq_seed, mc_samples=cfg.acq_mc_samples)
        results = kriging_believer_batch(gp_model, cbnn, incumbent, cfg.spec,
                                         cfg.batch_size, acq_cfg)
        for res in results:
            objective, satisfied = _evaluate_safe(problem, res.z)
            observations.append(Observation(res.z, objective, satisfied, t))
        best_per_iteration.append(_best_feasible(observations))
    return BoTrace(observations, best_per_iteration)


def run_constrained_bo(problem, cfg: BoConfig) -> BoTrace:
    """Constrained BO: EIC acquisition against the trained constraint model."""
    return _run_bo(problem, cfg, constrained=True)


def run_unconstrained_bo(problem, cfg: BoConfig) -> BoTrace:
    """Baseline BO with the constraint probability forced to 1 (pure EI)."""
    return _run_bo(problem, cfg, constrained=False)


def random_sampling_baseline(problem, budget: int, seed: int) -> BoTrace:
    """Uniform random search over the bounds, recorded like BO observations."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    bounds = np.asarray(problem.bounds, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    observations = []
    best_per_point: list[float | None] = []
    best: float | None = None
    for i in range(budget):
        z = rng.uniform(bounds[:, 0], bounds[:, 1])
        objective, satisfied = _evaluate_safe(problem, z)
        observations.append(Observation(z, objective, satisfied, i))
        if satisfied == 1 and objective is not None and (best is None or objective < best):
            best = objective
        best_per_point.append(best)
    return BoTrace(observations, best_per_point)


def collected_feasible_fraction(trace: BoTrace) -> float:
    """Fraction of BO-collected observations (iteration >= 1) labeled feasible."""
    collected = [o for o in trace.observations if o.iteration >= 1]
    if not collected:
        raise ValueError("trace has no BO-collected observations")
    return sum(o.constraint_satisfied for o in collected) / len(collected)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer, np.floating, np.bool_)):
        return value.item()
    return value


def write_trace_csv(trace: BoTrace, path: str) -> None:
    """One row per observation: iteration, z components, objective, label."""
    d = trace.observations[0].z.size if trace.observations else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", *(f"z{i}" for i in range(d)),
                         "objective", "constraint"])
        for obs in trace.observations:
            writer.writerow([
                obs.iteration,
                *(repr(float(v)) for v in obs.z),
                "" if obs.objective is None else repr(float(obs.objective)),
                obs.constraint_satisfied,
            ])


def read_trace_csv(path: str) -> list[Observation]:
    """Inverse of write_trace_csv."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if (header is None or len(header) < 3 or header[0] != "iteration"
                or header[-2:] != ["objective", "constraint"]):
            raise ValueError(f"{path}: not a trace CSV (header {header})")
        observations = []
        for row in reader:
            observations.append(Observation(
                z=np.array([float(v) for v in row[1:-2]]),
                objective=None if row[-2] == "" else float(row[-2]),
                constraint_satisfied=int(row[-1]),
                iteration=int(row[0]),
            ))
    return observations


def best_feasible_curve(observations: list[Observation]) -> list[float | None]:
    """Running best feasible objective, one entry per iteration index.

    Recomputes BoTrace.best_feasible_per_iteration from raw observations,
    so curves derived from a trace CSV match the summary JSON exactly.
    """
    if not observations:
        return []
    by_iteration: dict[int, list[Observation]] = {}
    for obs in observations:
        by_iteration.setdefault(obs.iteration, []).append(obs)
    best: float | None = None
    curve = []
    for t in range(max(by_iteration) + 1):
        for obs in by_iteration.get(t, []):
            if (obs.constraint_satisfied == 1 and obs.objective is not None
                    and (best is None or obs.objective < best)):
                best = obs.objective
        curve.append(best)
    return curve


def write_summary_json(trace: BoTrace, path: str, config=None,
                       seed: int | None = None, extras: dict | None = None) -> None:
    """Per-iteration best feasible values plus a config echo and the seed."""
    if dataclasses.is_dataclass(config):
        echo = _jsonable(dataclasses.asdict(config))
    else:
        echo = _jsonable(config)
    if seed is None and isinstance(echo, dict):
        seed = echo.get("seed")
    doc = {
        "seed": seed,
        "config": echo,
        "num_observations": len(trace.observations),
        "best_feasible_per_iteration": [
            None if v is None else float(v)
            for v in trace.best_feasible_per_iteration
        ],
    }
    if extras:
        doc.update(_jsonable(extras))
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
