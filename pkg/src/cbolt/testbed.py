"""Synthetic latent-space testbed.

A seeded stand-in for a trained decoder: emission quality decays with
distance from a fixed anchor set, so far-away latent points decode to
methane or broken strings.  Includes the five-group diagnostic harness,
negative-class generation, the composite score combiner, and a smooth
synthetic score surface, plus a problem wrapper for the BO engine.
"""

from __future__ import annotations

import dataclasses
import importlib.resources
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import smiles
from .bnn import LabeledLatentPoint
from .engine import Observation

METHANE = "C"
METHANE_SCORE = -2.0
_ILLEGAL_CHARS = "$!?~*"
_FALLBACK_INVALID = "(("

DIAGNOSTIC_GROUPS = ("train", "noise_1pct", "noise_10pct", "noise_50pct", "random")
_GROUP_NOISE = {"noise_1pct": 0.01, "noise_10pct": 0.10, "noise_50pct": 0.50}


def default_template_pool() -> list[str]:
    """The fixed pool of valid template strings shipped with the package."""
    text = importlib.resources.files("cbolt.data").joinpath("templates.txt").read_text()
    return [line.strip() for line in text.splitlines() if line.strip()]


class StringCorruptor:
    """Seeded corruptor whose outputs always fail check_validity."""

    _MAX_ROUNDS = 8

    def corrupt(self, s: str, rng: np.random.Generator) -> str:
        current = s
        for _ in range(self._MAX_ROUNDS):
            current = self._mutate(current, rng)
            if current and not smiles.check_validity(current).valid:
                return current
        return _FALLBACK_INVALID

    def _mutate(self, s: str, rng: np.random.Generator) -> str:
        op = int(rng.integers(4))
        if op == 0:
            # Ring-closure surgery: drop one digit, or open an unpaired ring.
            digit_positions = [i for i, ch in enumerate(s) if ch.isdigit()]
            if digit_positions:
                i = digit_positions[int(rng.integers(len(digit_positions)))]
                return s[:i] + s[i + 1:]
            i = int(rng.integers(len(s) + 1))
            return s[:i] + "1" + s[i:]
        if op == 1:
            # Unbalance parentheses.
            close_positions = [i for i, ch in enumerate(s) if ch == ")"]
            if close_positions and rng.uniform() < 0.5:
                i = close_positions[int(rng.integers(len(close_positions)))]
                return s[:i] + s[i + 1:]
            i = int(rng.integers(len(s) + 1))
            return s[:i] + "(" + s[i:]
        if op == 2:
            ch = _ILLEGAL_CHARS[int(rng.integers(len(_ILLEGAL_CHARS)))]
            i = int(rng.integers(len(s) + 1))
            return s[:i] + ch + s[i:]
        # Truncate, preferring a cut inside a two-character token.
        for token in ("Cl", "Br"):
            j = s.find(token)
            if j >= 0:
                return s[:j + 1]
        return s[:int(rng.integers(1, len(s)))] if len(s) > 1 else s + "("


@dataclass
class SyntheticDecoder:
    """Anchor-distance-driven string emitter."""

    training_latents: np.ndarray
    validity_lengthscale: float
    methane_bias: float = 0.7
    template_pool: list[str] = field(default_factory=default_template_pool)
    corruptor: StringCorruptor = field(default_factory=StringCorruptor)

    def __post_init__(self) -> None:
        self.training_latents = np.atleast_2d(np.asarray(self.training_latents, dtype=float))
        if self.validity_lengthscale <= 0:
            raise ValueError(f"validity_lengthscale must be > 0, got {self.validity_lengthscale}")
        if not 0.0 <= self.methane_bias <= 1.0:
            raise ValueError(f"methane_bias must be in [0, 1], got {self.methane_bias}")
        for s in self.template_pool:
            if not smiles.check_validity(s).valid:
                raise ValueError(f"template pool contains an invalid string: {s!r}")


def _nearest_anchor(dec: SyntheticDecoder, z: np.ndarray) -> tuple[int, float]:
    z = np.asarray(z, dtype=float).ravel()
    dist = np.linalg.norm(dec.training_latents - z, axis=1)
    k = int(np.argmin(dist))
    return k, float(dist[k])


def p_valid(dec: SyntheticDecoder, z: np.ndarray) -> float:
    """Validity probability: squared-exponential decay in anchor distance."""
    _, dist = _nearest_anchor(dec, z)
    return math.exp(-((dist / dec.validity_lengthscale) ** 2))


def synth_decode(dec: SyntheticDecoder, z: np.ndarray, attempts: int, seed: int) -> list[str]:
    """Decode attempts at z.

    Each anchor owns one template (index modulo the pool), so a healthy
    latent point decodes to a single dominant string.  Per attempt: the
    nearest anchor's template with probability p_valid, otherwise methane
    with conditional probability methane_bias, else a corrupted string.
    """
    if attempts < 1:
        raise ValueError(f"attempts must be >= 1, got {attempts}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    k, dist = _nearest_anchor(dec, z)
    p = math.exp(-((dist / dec.validity_lengthscale) ** 2))
    methane_cut = p + dec.methane_bias * (1.0 - p)
    template = dec.template_pool[k % len(dec.template_pool)]
    out = []
    for _ in range(attempts):
        u = rng.uniform()
        if u < p:
            out.append(template)
        elif u < methane_cut:
            out.append(METHANE)
        else:
            out.append(dec.corruptor.corrupt(template, rng))
    return out


def perturb_training_points(points: np.ndarray, noise_fraction: float,
                            seed: int) -> np.ndarray:
    """Per-coordinate relative additive noise: z' = z + eps * |z| * g."""
    if noise_fraction < 0:
        raise ValueError(f"noise_fraction must be >= 0, got {noise_fraction}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    g = rng.standard_normal(points.shape)
    return points + noise_fraction * np.abs(points) * g


@dataclass
class DiagnosticConfig:
    """Five-group decode-quality sweep settings."""

    points_per_group: int = 50
    decode_attempts: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        if self.points_per_group < 1 or self.decode_attempts < 1:
            raise ValueError("points_per_group and decode_attempts must be >= 1")


@dataclass(frozen=True)
class DiagnosticRow:
    group: str
    pct_valid: float
    pct_methane: float
    pct_druglike: float


def make_diagnostic_decoder() -> SyntheticDecoder:
    """The frozen 2-d decoder used by the diagnostic experiment: 50 anchors
    equally spaced on a radius-10 ring, unit validity lengthscale."""
    angles = np.linspace(0.0, 2.0 * np.pi, 50, endpoint=False)
    anchors = 10.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return SyntheticDecoder(anchors, validity_lengthscale=1.0, methane_bias=0.7)


class _OutcomeStats:
    """Counts validity predicates over outcome strings, caching per string."""

    def __init__(self) -> None:
        self._cache: dict[str, tuple[bool, bool]] = {}
        self.total = 0
        self.valid = 0
        self.methane = 0
        self.druglike = 0

    def add(self, outcomes: list[str]) -> None:
        for s in outcomes:
            flags = self._cache.get(s)
            if flags is None:
                flags = (smiles.check_validity(s).valid, smiles.is_drug_like(s))
                self._cache[s] = flags
            self.total += 1
            self.valid += flags[0]
            self.druglike += flags[1]
            self.methane += s == METHANE


def diagnostic_experiment(dec: SyntheticDecoder,
                          cfg: DiagnosticConfig) -> list[DiagnosticRow]:
    """Decode-quality percentages for train, perturbed, and random groups.

    The random group substitutes uniform draws over a box four times the
    anchor extent for points a trained optimizer might visit.
    """
    anchors = dec.training_latents
    n, d = anchors.shape
    root = np.random.SeedSequence(cfg.seed)
    group_ss = dict(zip(DIAGNOSTIC_GROUPS, root.spawn(len(DIAGNOSTIC_GROUPS))))

    pick = np.random.default_rng(group_ss["train"])
    idx = pick.choice(n, size=cfg.points_per_group, replace=cfg.points_per_group > n)
    train_points = anchors[idx]

    halfwidth = 4.0 * float(np.max(np.abs(anchors)))
    rows = []
    for group in DIAGNOSTIC_GROUPS:
        setup_ss, *point_ss = group_ss[group].spawn(1 + cfg.points_per_group)
        if group == "train":
            points = train_points
        elif group == "random":
            rng = np.random.default_rng(setup_ss)
            points = rng.uniform(-halfwidth, halfwidth, size=(cfg.points_per_group, d))
        else:
            points = perturb_training_points(
                train_points, _GROUP_NOISE[group], int(setup_ss.generate_state(1)[0]))
        stats = _OutcomeStats()
        for z, ss in zip(points, point_ss):
            stats.add(synth_decode(dec, z, cfg.decode_attempts,
                                   int(ss.generate_state(1)[0])))
        rows.append(DiagnosticRow(
            group=group,
            pct_valid=100.0 * stats.valid / stats.total,
            pct_methane=100.0 * stats.methane / stats.total,
            pct_druglike=100.0 * stats.druglike / stats.total,
        ))
    return rows


def write_diagnostic_csv(rows: list[DiagnosticRow], path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("group,pct_valid,pct_methane,pct_druglike\n")
        for row in rows:
            fh.write(f"{row.group},{row.pct_valid!r},{row.pct_methane!r},"
                     f"{row.pct_druglike!r}\n")


def generate_negative_class(bounds: np.ndarray, n_points: int, attempts: int,
                            dec: SyntheticDecoder, seed: int) -> list[LabeledLatentPoint]:
    """Label uniform draws over the bounds by their decode outcomes."""
    if n_points < 0:
        raise ValueError(f"n_points must be >= 0, got {n_points}")
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    root = np.random.SeedSequence(seed)
    draw_ss, *point_ss = root.spawn(1 + n_points)
    rng = np.random.default_rng(draw_ss)
    out = []
    for ss in point_ss:
        z = rng.uniform(bounds[:, 0], bounds[:, 1])
        outcomes = synth_decode(dec, z, attempts, int(ss.generate_state(1)[0]))
        out.append(LabeledLatentPoint(z, smiles.label_latent_point(outcomes)))
    return out


@dataclass(frozen=True)
class ComponentScores:
    """Opaque per-molecule score components feeding the composite."""

    primary: float
    sa: float
    ring_penalty: float

    def __post_init__(self) -> None:
        for name in ("primary", "sa", "ring_penalty"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def composite_objective(c: ComponentScores) -> float:
    """Penalized score: primary minus synthetic-accessibility and ring terms."""
    return c.primary - c.sa - c.ring_penalty


def synthetic_latent_objective(z: np.ndarray, anchors: np.ndarray, seed: int,
                               amplitudes: np.ndarray | None = None,
                               bump_width: float = 2.0,
                               noise_std: float = 0.1) -> float:
    """Mixture of Gaussian bumps centered on anchors, plus seeded noise."""
    z = np.asarray(z, dtype=float).ravel()
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    if amplitudes is None:
        amplitudes = np.ones(anchors.shape[0])
    sq = np.sum((anchors - z) ** 2, axis=1)
    value = float(np.sum(amplitudes * np.exp(-sq / (2.0 * bump_width**2))))
    if noise_std > 0:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        value += noise_std * float(rng.standard_normal())
    return value


@dataclass
class TestbedProblem:
    """Latent-space problem for the BO engine.

    Anchors sit inside the box; scores peak on a "good" anchor subset.
    evaluate() decodes, labels the point, and scores the most frequent
    outcome; minimization sees the negated score.  Evaluations are pure:
    the decode and noise seeds derive from the point's bytes.
    """

    dimension: int = 56
    seed: int = 0
    num_anchors: int = 40
    num_good_anchors: int = 8
    box_halfwidth: float = 8.0
    validity_lengthscale: float = 2.0
    methane_bias: float = 0.7
    decode_attempts: int = 100
    bump_width: float = 2.0
    noise_std: float = 0.05
    negative_pool_size: int = 500
    init_noise_fraction: float = 0.05
    # Decoy anchors own valid but sub-drug-size templates, so their cores
    # label infeasible yet still score; trivial_modal_score above the bump
    # amplitudes turns them into lures for a constraint-blind optimizer.
    num_decoy_anchors: int = 0
    decoy_templates: tuple[str, ...] = ("C", "CC", "CCO", "O", "CCC")
    trivial_modal_score: float = METHANE_SCORE

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dimension}")
        if self.num_good_anchors + self.num_decoy_anchors > self.num_anchors:
            raise ValueError("good and decoy anchors cannot exceed num_anchors")
        for s in self.decoy_templates:
            if not smiles.check_validity(s).valid or smiles.is_drug_like(s):
                raise ValueError(f"decoy templates must be valid and below "
                                 f"drug size, got {s!r}")
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 2026]))
        self.anchors = rng.uniform(-0.6 * self.box_halfwidth, 0.6 * self.box_halfwidth,
                                   size=(self.num_anchors, self.dimension))
        self.good_anchors = self.anchors[:self.num_good_anchors]
        # Fixed amplitude ladder: the strongest bump is exactly 3.0 for
        # every seed, so score-based settings can sit just above it.
        self.amplitudes = np.linspace(3.0, 1.5, self.num_good_anchors)
        base_pool = default_template_pool()
        pool = [base_pool[i % len(base_pool)] for i in range(self.num_anchors)]
        for j in range(self.num_decoy_anchors):
            pool[self.num_anchors - 1 - j] = self.decoy_templates[j % len(self.decoy_templates)]
        self.decoder = SyntheticDecoder(self.anchors, self.validity_lengthscale,
                                        self.methane_bias, template_pool=pool)
        self._pool: list[LabeledLatentPoint] | None = None

    @property
    def bounds(self) -> np.ndarray:
        return np.tile([-self.box_halfwidth, self.box_halfwidth], (self.dimension, 1))

    def best_score(self) -> float:
        """Noise-free score at the strongest bump center."""
        best = int(np.argmax(self.amplitudes))
        return synthetic_latent_objective(self.good_anchors[best], self.good_anchors,
                                          seed=0, amplitudes=self.amplitudes,
                                          bump_width=self.bump_width, noise_std=0.0)

    def _point_seeds(self, z: np.ndarray) -> tuple[int, int]:
        crc = zlib.crc32(np.asarray(z, dtype=float).ravel().tobytes())
        decode_ss, noise_ss = np.random.SeedSequence([self.seed, crc]).spawn(2)
        return int(decode_ss.generate_state(1)[0]), int(noise_ss.generate_state(1)[0])

    def evaluate(self, z: np.ndarray) -> tuple[float | None, int]:
        z = np.asarray(z, dtype=float).ravel()
        decode_seed, noise_seed = self._point_seeds(z)
        outcomes = synth_decode(self.decoder, z, self.decode_attempts, decode_seed)
        label = smiles.label_latent_point(outcomes)
        n_drug = sum(smiles.is_drug_like(s) for s in outcomes)
        n_valid = sum(smiles.check_validity(s).valid for s in outcomes)
        n_trivial = n_valid - n_drug
        n_invalid = len(outcomes) - n_valid
        # Score the modal decode category; ties resolve optimistically.
        if n_drug >= n_trivial and n_drug >= n_invalid:
            score = synthetic_latent_objective(
                z, self.good_anchors, noise_seed, amplitudes=self.amplitudes,
                bump_width=self.bump_width, noise_std=self.noise_std)
        elif n_trivial >= n_invalid:
            score = self.trivial_modal_score
        else:
            return None, label
        return -score, label

    def initial_observations(self, n: int, seed: int) -> list[Observation]:
        """Scored latents near the anchors, standing in for training data."""
        root = np.random.SeedSequence([seed, 11])
        pick_ss, noise_ss = root.spawn(2)
        rng = np.random.default_rng(pick_ss)
        base = self.anchors[rng.integers(self.num_anchors, size=n)]
        latents = perturb_training_points(base, self.init_noise_fraction,
                                          int(noise_ss.generate_state(1)[0]))
        np.clip(latents, -self.box_halfwidth, self.box_halfwidth, out=latents)
        out = []
        for z in latents:
            objective, satisfied = self.evaluate(z)
            out.append(Observation(z, objective, satisfied, 0))
        return out

    def initial_constraint_pool(self) -> list[LabeledLatentPoint]:
        """Uniformly sampled labeled points, mirroring negative-class collection."""
        if self._pool is None:
            self._pool = generate_negative_class(
                self.bounds, self.negative_pool_size, self.decode_attempts,
                self.decoder, seed=int(np.random.SeedSequence([self.seed, 13]).generate_state(1)[0]))
        return self._pool
