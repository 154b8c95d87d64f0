"""rnnlab: recurrent cells with exact Jacobians and a trainability probe.

Four cell architectures (vanilla tanh, GRU, CFN-style gated cell, and a
minimal gated cell with an input encoder) share one interface: forward
stepping with full activation traces, analytic per-step Jacobians, batched
backpropagation through time, and a probe that measures the singular-value
spectrum of the input-output Jacobian at configurable lookback distances.
A small training harness runs synthetic sequence tasks end to end.
"""

from .cells import (
    CELL_KINDS,
    CfnParams,
    GruParams,
    MinimalRnnParams,
    NonFiniteStateError,
    RolloutTrace,
    StepTrace,
    VanillaParams,
    encode,
    init_params,
    input_jacobians,
    load_params,
    rollout,
    save_params,
    state_jacobian,
    step,
    tensors,
)
from .config import ConfigError, ExperimentConfig, from_dict, load_config
from .grad import (
    EmbeddingTables,
    Head,
    LossSpec,
    bptt,
    bptt_embedded,
    clip_global_norm,
    fd_gradients,
    fd_jacobian,
    forward_batch,
    global_norm,
    init_head,
)
from .numerics import Rng, gaussian, random_orthogonal, sigmoid, svd_values
from .optim import OptimizerSpec, OptimizerState, apply_update, init_state
from .probe import (
    PERCENTILE_LEVELS,
    PERCENTILE_NAMES,
    ProbeConfig,
    ProbeReport,
    SpectrumSummary,
    chain_jacobian,
    percentiles,
    spectrum,
)
from .tasks import TASK_KINDS, Dataset, TaskSpec, generate, map_at_k, popularity_scores
from .train import (
    MetricRecord,
    Model,
    RunDivergedError,
    TrainResult,
    TrainSettings,
    build_model,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train_loop,
)

__version__ = "0.1.0"
