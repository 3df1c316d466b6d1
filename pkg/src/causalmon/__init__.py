"""Process monitoring with a causal-graph spatio-temporal autoencoder:
attention-learned correlation graphs, invariance-based causal structure
extraction, reconstruction-based fault detection, and root-cause
subgraph diagnosis."""

from .autodiff import Tensor
from .config import ExperimentConfig, load_config
from .data import Dataset, FaultSpec, SynthSpec, WindowBatch, generate_synthetic, load_tep, make_windows
from .diagnosis import (
    ContributionTrace,
    DiscreteCausalGraph,
    FaultSubgraph,
    contribution_trace,
    fault_variable_set,
    graph_edge_f1,
    optimal_subgraph,
    truncate_graph,
    variable_contribution,
)
from .model import (
    AttentionParams,
    DecoderHead,
    GclstmParams,
    LstmState,
    ModelParams,
    attention_graph,
    decode_window,
    encode_window,
    encoder_step,
    init_params,
    load_checkpoint,
    model_forward,
    save_checkpoint,
)
from .monitoring import (
    DetectionMetrics,
    MonitorModel,
    StatisticTrace,
    calibrate,
    detect,
    score,
    spe_statistic,
    t2_statistic,
)
from .numerics import KdeEstimate, grad_check, kde_control_limit, sym_normalize
from .priors import PriorGraph, load_prior, prior_from_truth, random_prior, save_prior
from .training import (
    CausalGraphParam,
    TrainConfig,
    finetune,
    learn_causal_graph,
    loss_discrete,
    loss_invariance,
    loss_mse,
    loss_prior,
    loss_sparsity,
    pretrain,
)

__version__ = "0.1.0"
