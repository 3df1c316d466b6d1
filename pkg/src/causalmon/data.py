"""Dataset ingestion and the synthetic benchmark generator.

Benchmark files are whitespace-separated numeric matrices (samples x
variables, orientation auto-detected).  Normalization statistics always
come from the training split and a guard flag prevents applying them
twice.  The synthetic generator simulates a linear dynamical process with
a known causal graph, per-regime edge-weight rescalings standing in for
operating-condition changes, and additive step faults that propagate
through the dynamics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .monitoring import sliding_windows

logger = logging.getLogger(__name__)

TEP_N_VARS = 52
TEP_ONSET = 160  # 0-based index of the first faulty sample in test sets
TEP_TAGS = [f"XMEAS({i})" for i in range(1, 42)] + [f"XMV({i})" for i in range(1, 12)]


@dataclass
class Dataset:
    """A (T, n) series plus labeling and normalization bookkeeping."""

    series: np.ndarray
    tags: list
    onset: int | None = None  # first faulty sample, None for normal data
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    normalized: bool = False

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.float64)
        if self.series.ndim != 2:
            raise ValueError(f"series must be (T, n), got shape {self.series.shape}")
        if len(self.tags) != self.series.shape[1]:
            raise ValueError("one tag per variable required")

    @property
    def n_vars(self):
        return self.series.shape[1]

    def fit_stats(self):
        """Per-variable mean/std; zero-variance variables get std forced
        to 1 with a warning."""
        mean = self.series.mean(axis=0)
        std = self.series.std(axis=0, ddof=0)
        degenerate = std <= 0
        if degenerate.any():
            names = [self.tags[i] for i in np.flatnonzero(degenerate)]
            logger.warning("zero-variance variables %s; forcing std to 1", names)
            std = np.where(degenerate, 1.0, std)
        return mean, std

    def apply_stats(self, mean, std) -> "Dataset":
        """Z-score with externally fitted statistics; refuses to normalize twice."""
        if self.normalized:
            raise ValueError("dataset is already normalized")
        mean = np.asarray(mean, dtype=np.float64)
        std = np.asarray(std, dtype=np.float64)
        if mean.shape != (self.n_vars,) or std.shape != (self.n_vars,):
            raise ValueError("normalization statistics must be per-variable vectors")
        return Dataset(series=(self.series - mean) / std, tags=list(self.tags),
                       onset=self.onset, mean=mean.copy(), std=std.copy(),
                       normalized=True)


@dataclass
class WindowBatch:
    """Stacked sliding windows and the series index of each window's last row."""

    windows: np.ndarray  # (N, w, n)
    t_index: np.ndarray  # (N,)

    def __len__(self):
        return len(self.windows)


def make_windows(dataset_or_series, window) -> WindowBatch:
    series = (dataset_or_series.series if isinstance(dataset_or_series, Dataset)
              else np.asarray(dataset_or_series, dtype=np.float64))
    windows = sliding_windows(series, window)
    return WindowBatch(windows=windows,
                       t_index=np.arange(window - 1, len(series)))


# -- benchmark text files -----------------------------------------------------------


def _locate_bad_token(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            for col, tok in enumerate(line.split(), start=1):
                try:
                    float(tok)
                except ValueError:
                    return lineno, col, tok
    return None


def load_matrix(path) -> np.ndarray:
    """Whitespace-separated numeric matrix with a useful parse diagnostic."""
    try:
        return np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as e:
        located = _locate_bad_token(path)
        if located is not None:
            lineno, col, tok = located
            raise ValueError(f"{path}: non-numeric token {tok!r} at line {lineno}, "
                             f"column {col}") from e
        raise ValueError(f"{path}: {e}") from e


def save_matrix(path, series):
    np.savetxt(path, np.asarray(series, dtype=np.float64), fmt="%.18e")


def load_tep(path, role) -> Dataset:
    """One Tennessee Eastman benchmark file as an unnormalized Dataset.

    Orientation is auto-detected (files circulate both as samples x 52 and
    transposed); test roles carry the standard fault onset label.
    """
    if role not in ("train", "test"):
        raise ValueError(f"role must be 'train' or 'test', got {role!r}")
    arr = load_matrix(path)
    if arr.shape[1] != TEP_N_VARS and arr.shape[0] == TEP_N_VARS:
        arr = arr.T
    if arr.shape[1] != TEP_N_VARS:
        raise ValueError(f"{path}: expected {TEP_N_VARS} variables on either axis, "
                         f"got shape {arr.shape}")
    return Dataset(series=arr, tags=list(TEP_TAGS),
                   onset=TEP_ONSET if role == "test" else None)


# -- synthetic process ----------------------------------------------------------------


@dataclass
class FaultSpec:
    variable: int
    onset: int  # emitted-series index from which the bias applies
    magnitude: float


@dataclass
class SynthSpec:
    """Linear process x(t+1)_j = sum_i scale_r[i,j] * w[i,j] * x(t)_i + noise.

    ``regimes`` is a schedule of (length, scale) or (length, scale,
    noise_scale) segments; a scale may be a scalar or a per-edge matrix and
    ``noise_scale`` a scalar or per-variable vector.  Regime changes stand
    in for operating-condition shifts: they move correlations around while
    the causal wiring stays put.  Faults add a constant bias to a
    variable's state from their onset on, so their effect propagates
    downstream.
    """

    weights: np.ndarray  # (n, n), w[i, j] is the effect of variable i on j
    regimes: list  # [(length, scale[, noise_scale]), ...]
    noise_std: float = 0.05
    faults: list = field(default_factory=list)
    seed: int = 0
    burn_in: int = 50
    initial: np.ndarray | None = None
    tags: list | None = None

    @property
    def n_vars(self):
        return self.weights.shape[0]

    @property
    def length(self):
        return int(sum(regime[0] for regime in self.regimes))

    @property
    def truth(self) -> np.ndarray:
        return (np.asarray(self.weights) != 0).astype(np.int8)


def _regime_matrices(spec: SynthSpec):
    w = np.asarray(spec.weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"weights must be square, got shape {w.shape}")
    mats = []
    for regime in spec.regimes:
        length, scale = regime[0], np.asarray(regime[1], dtype=np.float64)
        noise_scale = np.asarray(regime[2], dtype=np.float64) if len(regime) > 2 else np.float64(1.0)
        mats.append((int(length), scale * w, noise_scale))
    return mats


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Simulate the process; deterministic per seed.

    Rejects weight/scale combinations whose transition matrix has spectral
    radius >= 1 in any regime (the recursion would diverge).
    """
    mats = _regime_matrices(spec)
    for _, scaled, _ in mats:
        radius = float(np.max(np.abs(np.linalg.eigvals(scaled.T))))
        if radius >= 1.0:
            raise ValueError(f"unstable weights: spectral radius {radius:.3f} >= 1 "
                             "in at least one regime")
    n = spec.n_vars
    rng = np.random.default_rng(spec.seed)
    x = (np.zeros(n) if spec.initial is None
         else np.asarray(spec.initial, dtype=np.float64).copy())

    total = spec.length
    series = np.empty((total, n))
    schedule = []
    for length, scaled, noise_scale in mats:
        schedule.extend([(scaled.T, noise_scale)] * length)

    emitted = 0
    for step in range(-spec.burn_in, total):
        if step >= 0:
            for fault in spec.faults:
                if step >= fault.onset:
                    x[fault.variable] += fault.magnitude
            series[emitted] = x
            emitted += 1
            if emitted == total:
                break
        transition, noise_scale = schedule[max(step, 0)] if step < 0 else schedule[step]
        noise = spec.noise_std * noise_scale * rng.standard_normal(n)
        x = transition @ x + noise

    tags = spec.tags if spec.tags is not None else [f"x{i + 1}" for i in range(n)]
    onset = min((f.onset for f in spec.faults), default=None)
    return Dataset(series=series, tags=list(tags), onset=onset)


def random_process_weights(n_vars, n_cross_edges, seed, spectral_radius=0.85,
                           self_coupling=(0.4, 0.7)) -> np.ndarray:
    """Random process weight matrix, rescaled to the requested spectral radius.

    Every variable keeps an inertia term on the diagonal (slow dynamics, as
    in real plants) and ``n_cross_edges`` directed inter-variable edges are
    placed uniformly.  Weights are positive: a causal link then shows up as
    positive co-movement, the similarity structure an attention graph can
    represent.
    """
    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n_vars) for j in range(n_vars) if i != j]
    if n_cross_edges > len(pairs):
        raise ValueError(f"cannot place {n_cross_edges} edges on {len(pairs)} cells")
    # cap the in-degree so no variable drowns in parallel parents, which
    # would dilute each parent's visible influence
    in_cap = max(2, -(-2 * n_cross_edges // n_vars))
    w = np.zeros((n_vars, n_vars))
    in_degree = np.zeros(n_vars, dtype=int)
    placed = 0
    for k in rng.permutation(len(pairs)):
        if placed == n_cross_edges:
            break
        i, j = pairs[k]
        if in_degree[j] >= in_cap:
            continue
        w[i, j] = rng.uniform(0.4, 0.9)
        in_degree[j] += 1
        placed += 1
    if placed < n_cross_edges:  # caps too tight for the request; fill anywhere
        for k in rng.permutation(len(pairs)):
            if placed == n_cross_edges:
                break
            i, j = pairs[k]
            if w[i, j] == 0.0:
                w[i, j] = rng.uniform(0.4, 0.9)
                placed += 1
    w[np.diag_indices(n_vars)] = rng.uniform(*self_coupling, size=n_vars)
    radius = float(np.max(np.abs(np.linalg.eigvals(w.T))))
    w *= spectral_radius / radius
    return w


def regime_schedule(n_regimes, regime_length, n_vars, seed, low=0.5, high=1.5,
                    noise_low=1.0, noise_high=1.0):
    """Per-regime random per-edge scalings plus per-variable disturbance
    levels: the stand-in for operating condition changes.  Edge scalings
    stay away from zero (mechanisms persist); disturbance levels may swing
    widely (they move correlations without touching the wiring)."""
    rng = np.random.default_rng(seed)
    return [(int(regime_length),
             rng.uniform(low, high, size=(n_vars, n_vars)),
             rng.uniform(noise_low, noise_high, size=n_vars))
            for _ in range(int(n_regimes))]
