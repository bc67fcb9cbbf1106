"""Constrained Bayesian optimization over latent design spaces.

A sparse GP models the objective, a Bayesian neural network models the
probability that a design decodes into something usable, and expected
improvement weighted by that probability drives sequential or batched
search.  Benchmarks, a synthetic molecule testbed, and an experiment CLI
live in their own modules.
"""

from .acquisition import (
    AcquisitionConfig,
    AcquisitionResult,
    Incumbent,
    ProbabilisticConstraintSpec,
    eic,
    expected_improvement,
    optimize_acquisition,
    select_incumbent,
)
from .bnn import (
    AlphaTrainConfig,
    BnnArchitecture,
    DegenerateDataError,
    LabeledLatentPoint,
    WeightPosterior,
    train_constraint,
)
from .branin import GLOBAL_MINIMUM_VALUE, BraninProblem
from .engine import (
    BoConfig,
    BoTrace,
    Observation,
    StandardizedGp,
    best_feasible_curve,
    collected_feasible_fraction,
    kriging_believer_batch,
    random_sampling_baseline,
    read_trace_csv,
    run_constrained_bo,
    run_unconstrained_bo,
    write_summary_json,
    write_trace_csv,
)
from .gp import (
    AdamConfig,
    FitcModel,
    GpPrediction,
    KernelHyperparams,
    NumericalError,
    TrainingDivergedError,
)
from .smiles import (
    SmilesAlphabet,
    ValidityReport,
    check_validity,
    decode_one_hot,
    default_alphabet,
    encode,
    is_drug_like,
    label_latent_point,
    tokenize,
)
from .testbed import (
    ComponentScores,
    DiagnosticConfig,
    SyntheticDecoder,
    TestbedProblem,
    composite_objective,
    diagnostic_experiment,
    make_diagnostic_decoder,
    synth_decode,
    synthetic_latent_objective,
)

from . import acquisition, bnn, branin, engine, gp, smiles, testbed  # noqa: E402

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
