"""Three-stage structure learning.

Stage 1 pre-trains the whole network to reconstruct normal data through
its own per-window correlation graphs.  Stage 2 freezes every network
parameter and fits a single adjacency (through logits, so entries stay in
(0, 1)) that must keep the reconstruction working while staying close to
the stable part of the per-window graphs, close to expert knowledge where
given, sparse where nothing is known, and near-binary.  Stage 3 discards
the attention module and fine-tunes the reconstruction path against the
fixed learned graph.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .autodiff import Tensor
from .model import (
    CAUSAL,
    CORRELATION,
    ModelParams,
    attention_graph,
    decode_window,
    encode_window,
    model_forward,
    restore_parameters,
    set_requires_grad,
    snapshot_parameters,
)

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-7  # lower clamp for every log argument in the losses


@dataclass
class TrainConfig:
    """Hyperparameters shared by the three stages."""

    lambda_invariance: float = 0.02
    lambda_prior: float = 0.08
    lambda_sparsity: float = 0.01
    lambda_discrete: float = 0.03
    lr_pretrain: float = 0.05
    lr_graph: float = 0.1
    lr_finetune: float = 0.05
    batch_size: int = 32
    max_epochs_pretrain: int = 60
    max_epochs_graph: int = 60
    max_epochs_finetune: int = 60
    patience: int = 5
    val_fraction: float = 0.1
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_invariance", "lambda_prior", "lambda_sparsity", "lambda_discrete"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        # lr 0 is allowed so no-op runs stay exercisable
        for name in ("lr_pretrain", "lr_graph", "lr_finetune"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.batch_size < 1 or self.patience < 1:
            raise ValueError("batch_size and patience must be at least 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")


@dataclass
class CausalGraphParam:
    """Adjacency optimized through unconstrained logits."""

    logits: Tensor  # (n, n)

    @property
    def adjacency(self) -> np.ndarray:
        return expit(self.logits.data)

    def adjacency_tensor(self) -> Tensor:
        return self.logits.sigmoid()


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    mse: float
    invariance: float
    prior: float
    sparsity: float
    discrete: float
    total: float
    val: float


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_val: float = np.inf
    epochs: int = 0


# -- loss terms ----------------------------------------------------------------


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def loss_mse(x_hat, x) -> Tensor:
    """Total squared reconstruction error over every window and step."""
    x_hat = x_hat if isinstance(x_hat, Tensor) else Tensor(x_hat)
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    _check_same_shape(x_hat.data, x)
    diff = x_hat - x
    return (diff * diff).sum()

def loss_invariance(a, a_windows) -> Tensor:
    """L1 distance between the candidate graph and each window's graph."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    a_windows = np.asarray(a_windows.data if isinstance(a_windows, Tensor) else a_windows,
                           dtype=np.float64)
    if a_windows.ndim == 2:
        a_windows = a_windows[None]
    if a_windows.shape[-2:] != a.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {a_windows.shape}")
    return (a - a_windows).abs().sum()


def loss_prior(a, prior) -> Tensor:
    """Cross-entropy against known prior cells; unknown cells contribute 0."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    _check_same_shape(a.data, prior.values)
    target = prior.known_values
    a_c = a.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)
    per_cell = target * a_c.log() + (1.0 - target) * (1.0 - a_c).log()
    return -(prior.mask * per_cell).sum()


def loss_sparsity(a, prior) -> Tensor:
    """L1 mass of the adjacency restricted to knowledge-free cells."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    _check_same_shape(a.data, prior.mask)
    return ((1.0 - prior.mask) * a).sum()


def loss_discrete(a) -> Tensor:
    """Elementwise binary entropy: zero when every cell sits at 0 or 1."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    a_c = a.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)
    return -(a_c * a_c.log() + (1.0 - a_c) * (1.0 - a_c).log()).sum()


# -- optimizer -------------------------------------------------------------------


class Sgd:
    """Plain mini-batch gradient descent; optional classical momentum."""

    def __init__(self, params, lr, momentum=0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._velocity = ([np.zeros_like(p.data) for p in self.params]
                          if self.momentum else None)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        if self._velocity is None:
            for p in self.params:
                p.data -= self.lr * p.grad
        else:
            for p, v in zip(self.params, self._velocity):
                v *= self.momentum
                v += p.grad
                p.data -= self.lr * v


# -- shared epoch loop -------------------------------------------------------------


def split_train_val(windows, val_fraction):
    """Last fraction of the windows is validation; no shuffling across the
    temporal boundary."""
    windows = np.asarray(windows, dtype=np.float64)
    n_val = max(1, int(round(len(windows) * val_fraction)))
    if n_val >= len(windows):
        raise ValueError(f"{len(windows)} windows cannot support a validation split")
    return windows[:-n_val], windows[-n_val:]


def _fit(train_idx, batch_size, max_epochs, patience, rng, train_step, evaluate,
         snapshot, restore, stage, history):
    """Mini-batch loop with strict-improvement early stopping on the
    validation metric; the best snapshot is restored before returning."""
    best_val = np.inf
    best_snap = snapshot()
    streak = 0
    epochs_run = 0
    for epoch in range(1, max_epochs + 1):
        epochs_run = epoch
        order = rng.permutation(len(train_idx))
        comp_sum = np.zeros(6)
        steps = 0
        for start in range(0, len(order), batch_size):
            comps = train_step(train_idx[order[start:start + batch_size]])
            if not np.all(np.isfinite(comps)):
                raise ArithmeticError(
                    f"non-finite loss in stage {stage!r} at epoch {epoch}; "
                    "try a smaller learning rate")
            comp_sum += comps
            steps += 1
        val = evaluate()
        if not np.isfinite(val):
            raise ArithmeticError(f"non-finite validation loss in stage {stage!r} at epoch {epoch}")
        means = comp_sum / steps
        history.append(EpochRecord(epoch, stage, *means, val=val))
        if val < best_val:
            best_val = val
            best_snap = snapshot()
            streak = 0
        else:
            streak += 1
            if streak >= patience:
                break
    restore(best_snap)
    return TrainResult(history=history, best_val=best_val, epochs=epochs_run)


# -- stage 1: pre-training ------------------------------------------------------------


def pretrain(windows, params: ModelParams, cfg: TrainConfig) -> TrainResult:
    """Fit every parameter to reconstruct normal windows through the
    correlation graphs; returns the best-validation state (params are
    updated in place).

    The optimizer step minimizes the squared error per window element, so
    the configured learning rate is usable regardless of batch size and
    variable count.
    """
    train_w, val_w = split_train_val(windows, cfg.val_fraction)
    tensors = params.all_parameters()
    opt = Sgd(tensors, cfg.lr_pretrain, cfg.momentum)
    rng = np.random.default_rng([cfg.seed, 1])

    def train_step(idx):
        batch = train_w[idx]
        opt.zero_grad()
        recon, _, _ = model_forward(batch, params, mode=CORRELATION)
        objective = loss_mse(recon, batch) * (1.0 / batch.size)
        objective.backward()
        opt.step()
        value = objective.item()
        return np.array([value, 0.0, 0.0, 0.0, 0.0, value])

    def evaluate():
        recon, _, _ = model_forward(val_w, params, mode=CORRELATION)
        return loss_mse(recon, val_w).item() / val_w.size

    return _fit(np.arange(len(train_w)), cfg.batch_size, cfg.max_epochs_pretrain,
                cfg.patience, rng, train_step, evaluate,
                lambda: snapshot_parameters(tensors),
                lambda snap: restore_parameters(tensors, snap),
                "pretrain", [])


# -- stage 2: causal graph learning -----------------------------------------------------


def correlation_graphs(windows, params: ModelParams, chunk=256) -> np.ndarray:
    """Per-window attention graphs as plain arrays (no gradients)."""
    windows = np.asarray(windows, dtype=np.float64)
    out = np.empty((len(windows), params.n_vars, params.n_vars))
    for start in range(0, len(windows), chunk):
        block = windows[start:start + chunk]
        out[start:start + len(block)] = attention_graph(block, params.attention).data
    return out


def init_graph_logits(windows, params: ModelParams, subsample=256) -> Tensor:
    """Start the graph at the mean correlation graph of a training
    subsample (clamped away from 0/1 so the logit is finite)."""
    mean_graph = correlation_graphs(windows[:subsample], params).mean(axis=0)
    mean_graph = np.clip(mean_graph, 1e-3, 1.0 - 1e-3)
    return Tensor(np.log(mean_graph / (1.0 - mean_graph)), requires_grad=True)


def learn_causal_graph(windows, params: ModelParams, prior, cfg: TrainConfig,
                       history=None) -> tuple[CausalGraphParam, TrainResult]:
    """Optimize the graph logits against the five-term objective with the
    network frozen.

    The reconstruction term re-runs both encoder and decoder with the
    candidate graph; the invariance term compares it against every window's
    own correlation graph.  Every term is normalized by its own element
    count at the optimizer step, so the balancing weights keep their
    meaning across batch sizes and graph dimensions.
    """
    if prior is None:
        from .priors import PriorGraph

        logger.warning("no prior causal graph supplied; treating every cell as unknown")
        prior = PriorGraph.all_unknown(params.n_vars)
    if prior.n != params.n_vars:
        raise ValueError(f"prior is {prior.n}x{prior.n}, model has {params.n_vars} variables")

    train_w, val_w = split_train_val(windows, cfg.val_fraction)
    graphs_train = correlation_graphs(train_w, params)
    graphs_val = correlation_graphs(val_w, params)

    tensors = params.all_parameters()
    set_requires_grad(tensors, False)
    cg = CausalGraphParam(logits=init_graph_logits(train_w, params))
    opt = Sgd([cg.logits], cfg.lr_graph, cfg.momentum)
    rng = np.random.default_rng([cfg.seed, 2])

    def objective_parts(batch, batch_graphs):
        # scaling convention: the reconstruction term is a per-element mean
        # (stability of the pinned learning rates), the invariance term a
        # per-window mean (so each cell feels an O(lambda) quantile force),
        # and the three single-contribution-per-cell penalties stay as sums.
        a = cg.adjacency_tensor()
        enc = encode_window(batch, a, params.encoder, params.hidden_dim)
        recon = decode_window(enc, a, params.decoder, params.head, params.window)
        mse = loss_mse(recon, batch) * (1.0 / batch.size)
        inv = loss_invariance(a, batch_graphs) * (1.0 / len(batch))
        pri = loss_prior(a, prior)
        spa = loss_sparsity(a, prior)
        dis = loss_discrete(a)
        total = (mse + cfg.lambda_invariance * inv + cfg.lambda_prior * pri
                 + cfg.lambda_sparsity * spa + cfg.lambda_discrete * dis)
        return total, (mse, inv, pri, spa, dis)

    def train_step(idx):
        opt.zero_grad()
        total, parts = objective_parts(train_w[idx], graphs_train[idx])
        total.backward()
        opt.step()
        return np.array([p.item() for p in parts] + [total.item()])

    def evaluate():
        total, _ = objective_parts(val_w, graphs_val)
        return total.item()

    def restore(snap):
        cg.logits.data[...] = snap[0]

    try:
        result = _fit(np.arange(len(train_w)), cfg.batch_size, cfg.max_epochs_graph,
                      cfg.patience, rng, train_step, evaluate,
                      lambda: [cg.logits.data.copy()], restore,
                      "graph", history if history is not None else [])
    finally:
        set_requires_grad(tensors, True)
    return cg, result


# -- stage 3: fine-tuning ----------------------------------------------------------------


def finetune(windows, params: ModelParams, adjacency, cfg: TrainConfig,
             history=None) -> TrainResult:
    """Refine the reconstruction path against the fixed graph; the attention
    module is out of the computation entirely.  Leaves the model in causal
    mode with the graph stored."""
    adjacency = np.asarray(adjacency, dtype=np.float64)
    train_w, val_w = split_train_val(windows, cfg.val_fraction)
    tensors = params.reconstruction_parameters()
    opt = Sgd(tensors, cfg.lr_finetune, cfg.momentum)
    rng = np.random.default_rng([cfg.seed, 3])
    graph = Tensor(adjacency)

    def reconstruct(batch):
        enc = encode_window(batch, graph, params.encoder, params.hidden_dim)
        return decode_window(enc, graph, params.decoder, params.head, params.window)

    def train_step(idx):
        batch = train_w[idx]
        opt.zero_grad()
        objective = loss_mse(reconstruct(batch), batch) * (1.0 / batch.size)
        objective.backward()
        opt.step()
        value = objective.item()
        return np.array([value, 0.0, 0.0, 0.0, 0.0, value])

    def evaluate():
        return loss_mse(reconstruct(val_w), val_w).item() / val_w.size

    result = _fit(np.arange(len(train_w)), cfg.batch_size, cfg.max_epochs_finetune,
                  cfg.patience, rng, train_step, evaluate,
                  lambda: snapshot_parameters(tensors),
                  lambda snap: restore_parameters(tensors, snap),
                  "finetune", history if history is not None else [])
    params.mode = CAUSAL
    params.causal_adjacency = adjacency.copy()
    return result
