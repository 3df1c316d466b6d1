"""Reconstruction network: attention-based correlation graphs plus a
graph-convolutional LSTM sequence-to-sequence autoencoder.

The encoder consumes one sliding window in time order and hands its final
(cell, hidden) state to the decoder, which walks the window in reverse,
emitting each reconstruction from the current hidden state before the
state update that produces the previous step.  All forward functions are
batched: windows stack on a leading axis.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields

import numpy as np

from .autodiff import Tensor, concat, stack
from .numerics import sym_normalize_tensor

CHECKPOINT_FORMAT = "causalmon/checkpoint/v1"

CORRELATION = "correlation"
CAUSAL = "causal"


@dataclass
class AttentionParams:
    """Trainable projections of the spatial self-attention graph learner."""

    w_query: Tensor  # (n, n)
    w_key: Tensor  # (n, n)

    def parameters(self):
        return [self.w_query, self.w_key]


@dataclass
class GclstmParams:
    """One graph-convolutional LSTM unit: per-gate weights over the
    concatenated [input; hidden] node features, plus per-gate biases
    broadcast over nodes."""

    w_forget: Tensor  # (1 + d_h, d_h)
    w_input: Tensor
    w_output: Tensor
    w_cell: Tensor
    b_forget: Tensor  # (d_h,)
    b_input: Tensor
    b_output: Tensor
    b_cell: Tensor

    def parameters(self):
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class DecoderHead:
    """Node-shared linear readout from hidden state to one reconstruction."""

    w_out: Tensor  # (d_h, 1)
    b_out: Tensor  # (1,)

    def parameters(self):
        return [self.w_out, self.b_out]


@dataclass
class LstmState:
    c: Tensor  # (B, n, d_h)
    h: Tensor  # (B, n, d_h)


@dataclass
class ModelParams:
    """Everything trainable, plus the fixed causal adjacency once learned."""

    n_vars: int
    window: int
    hidden_dim: int
    attention: AttentionParams
    encoder: GclstmParams
    decoder: GclstmParams
    head: DecoderHead
    mode: str = CORRELATION
    causal_adjacency: np.ndarray | None = None

    def attention_parameters(self):
        return self.attention.parameters()

    def reconstruction_parameters(self):
        """The encoder/decoder/head tensors (everything but attention)."""
        return (self.encoder.parameters() + self.decoder.parameters()
                + self.head.parameters())

    def all_parameters(self):
        return self.attention_parameters() + self.reconstruction_parameters()


def init_params(n_vars, window, hidden_dim, seed=0) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights; forget-gate bias
    starts at +1, everything else at zero.  Deterministic per seed.

    The attention projections start at the identity (plus a small random
    perturbation): cell (i, j) of the attention graph then begins as the
    window similarity of variables i and j, which is the semantics the
    downstream structure extraction relies on.  A generic random projection
    would scramble variable identity and the graph cells would carry no
    pairwise meaning."""
    if n_vars < 1 or window < 1 or hidden_dim < 1:
        raise ValueError("n_vars, window and hidden_dim must be positive")
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        s = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)

    def near_identity(n):
        s = 0.1 / np.sqrt(n)
        return Tensor(np.eye(n) + rng.uniform(-s, s, size=(n, n)), requires_grad=True)

    def gclstm():
        d = hidden_dim
        return GclstmParams(
            w_forget=uniform((1 + d, d), 1 + d),
            w_input=uniform((1 + d, d), 1 + d),
            w_output=uniform((1 + d, d), 1 + d),
            w_cell=uniform((1 + d, d), 1 + d),
            b_forget=Tensor(np.ones(d), requires_grad=True),
            b_input=Tensor(np.zeros(d), requires_grad=True),
            b_output=Tensor(np.zeros(d), requires_grad=True),
            b_cell=Tensor(np.zeros(d), requires_grad=True),
        )

    return ModelParams(
        n_vars=n_vars,
        window=window,
        hidden_dim=hidden_dim,
        attention=AttentionParams(
            w_query=near_identity(n_vars),
            w_key=near_identity(n_vars),
        ),
        encoder=gclstm(),
        decoder=gclstm(),
        head=DecoderHead(
            w_out=uniform((hidden_dim, 1), hidden_dim),
            b_out=Tensor(np.zeros(1), requires_grad=True),
        ),
    )


def _as_batch(x):
    """Promote a single (w, n) window to a (1, w, n) batch."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None, :, :], True
    if arr.ndim == 3:
        return arr, False
    raise ValueError(f"expected a (w, n) window or (B, w, n) batch, got shape {arr.shape}")


def attention_graph(windows, p: AttentionParams) -> Tensor:
    """Per-window variable-to-variable similarity graph.

    Projects the window onto query and key spaces, takes the column inner
    products scaled by sqrt(window length), and squashes through a sigmoid,
    giving an adjacency with entries in (0, 1); not symmetric in general.
    """
    x, single = _as_batch(windows)
    n = p.w_query.shape[0]
    if x.shape[-1] != n:
        raise ValueError(f"window has {x.shape[-1]} variables, attention weights expect {n}")
    w_len = x.shape[-2]
    x = Tensor(x)
    q = x @ p.w_query  # (B, w, n)
    k = x @ p.w_key
    scores = (q.mT @ k) * (1.0 / np.sqrt(w_len))
    out = scores.sigmoid()
    return out.reshape(n, n) if single else out


def _gclstm_step(x_node: Tensor, state: LstmState, prop: Tensor, p: GclstmParams) -> LstmState:
    """One gated update; ``prop`` is the already-normalized propagation
    matrix and ``x_node`` carries one scalar input per node, shape (B, n, 1)."""
    z = concat([x_node, state.h], axis=-1)  # (B, n, 1 + d_h)
    mixed = prop @ z
    f = (mixed @ p.w_forget + p.b_forget).sigmoid()
    i = (mixed @ p.w_input + p.b_input).sigmoid()
    o = (mixed @ p.w_output + p.b_output).sigmoid()
    c_cand = (mixed @ p.w_cell + p.b_cell).tanh()
    c = f * state.c + i * c_cand
    h = o * c.tanh()
    return LstmState(c=c, h=h)


def _as_adjacency_tensor(adjacency, n) -> Tensor:
    a = adjacency if isinstance(adjacency, Tensor) else Tensor(np.asarray(adjacency, dtype=np.float64))
    if a.shape[-1] != n or a.shape[-2] != n:
        raise ValueError(f"adjacency must be {n}x{n}, got {a.shape}")
    return a


def encoder_step(x_k, state: LstmState, adjacency, p: GclstmParams) -> LstmState:
    """Single encoder update from the raw adjacency (normalized internally).

    ``x_k`` holds one value per node: shape (n,) or (B, n).
    """
    x = np.asarray(x_k, dtype=np.float64) if not isinstance(x_k, Tensor) else x_k
    if isinstance(x, np.ndarray):
        if x.ndim == 1:
            x = x[None, :]
        x = Tensor(x[..., None])
    d_h = p.b_forget.shape[0]
    if state.c.shape != state.h.shape or state.c.shape[-1] != d_h:
        raise ValueError("state shape inconsistent with gate dimensions")
    prop = sym_normalize_tensor(_as_adjacency_tensor(adjacency, x.shape[-2]))
    return _gclstm_step(x, state, prop, p)


def zero_state(batch, n_vars, hidden_dim) -> LstmState:
    shape = (batch, n_vars, hidden_dim)
    return LstmState(c=Tensor(np.zeros(shape)), h=Tensor(np.zeros(shape)))


def _resolve_props(adjacency, n, steps):
    """Accept one adjacency for the whole window or a per-step sequence."""
    if isinstance(adjacency, (list, tuple)):
        if len(adjacency) != steps:
            raise ValueError(f"need {steps} per-step adjacencies, got {len(adjacency)}")
        return [sym_normalize_tensor(_as_adjacency_tensor(a, n)) for a in adjacency]
    prop = sym_normalize_tensor(_as_adjacency_tensor(adjacency, n))
    return [prop] * steps


def encode_window(windows, adjacency, p: GclstmParams, hidden_dim=None) -> LstmState:
    """Run the encoder over all rows of each window in time order, starting
    from the zero state; returns the final state."""
    x, _ = _as_batch(windows)
    batch, w_len, n = x.shape
    d_h = hidden_dim if hidden_dim is not None else p.b_forget.shape[0]
    props = _resolve_props(adjacency, n, w_len)
    state = zero_state(batch, n, d_h)
    for k in range(w_len):
        state = _gclstm_step(Tensor(x[:, k, :, None]), state, props[k], p)
    return state


def decode_window(enc_final: LstmState, adjacency, p: GclstmParams, head: DecoderHead,
                  window) -> Tensor:
    """Reconstruct the window in reverse order.

    Each step emits from the current hidden state first, then feeds the
    emission back through the decoder unit to obtain the previous state.
    Output rows are returned in the input's time order, shape (B, w, n)
    ((w, n) if the encoder state is unbatched)."""
    batch, n, _ = enc_final.h.shape
    props = _resolve_props(adjacency, n, window)
    state = enc_final
    emissions = []
    for j in range(window):
        x_hat = state.h @ head.w_out + head.b_out  # (B, n, 1)
        emissions.append(x_hat)
        if j < window - 1:
            state = _gclstm_step(x_hat, state, props[j], p)
    out = stack(emissions[::-1], axis=1)  # (B, w, n, 1)
    return out.reshape(batch, window, n)


def model_forward(windows, params: ModelParams, mode=None):
    """Full forward pass: (reconstruction, adjacency used, final encoder state).

    Correlation mode learns the adjacency from the window itself; causal mode
    reuses the stored fixed graph and bypasses attention entirely.
    """
    mode = params.mode if mode is None else mode
    x, single = _as_batch(windows)
    batch, w_len, n = x.shape
    if n != params.n_vars:
        raise ValueError(f"window has {n} variables, model expects {params.n_vars}")
    if mode == CORRELATION:
        adjacency = attention_graph(x, params.attention)
    elif mode == CAUSAL:
        if params.causal_adjacency is None:
            raise RuntimeError("causal mode requires a stored causal adjacency")
        adjacency = _as_adjacency_tensor(params.causal_adjacency, n)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    enc = encode_window(x, adjacency, params.encoder, params.hidden_dim)
    recon = decode_window(enc, adjacency, params.decoder, params.head, w_len)
    if single:
        recon = recon.reshape(w_len, n)
    return recon, adjacency, enc


def fingerprint(tensors) -> str:
    """SHA-256 over the raw parameter bytes; equal iff bitwise identical."""
    digest = hashlib.sha256()
    for t in tensors:
        digest.update(np.ascontiguousarray(t.data).tobytes())
    return digest.hexdigest()


def set_requires_grad(tensors, flag):
    for t in tensors:
        t.requires_grad = bool(flag)
        if flag and t.grad is None:
            t.grad = np.zeros_like(t.data)


def snapshot_parameters(tensors):
    return [t.data.copy() for t in tensors]


def restore_parameters(tensors, snapshot):
    for t, data in zip(tensors, snapshot):
        t.data[...] = data


def save_checkpoint(path, params: ModelParams):
    """Self-describing container with a format tag; adjacency included only
    in causal mode."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "n_vars": params.n_vars,
        "window": params.window,
        "hidden_dim": params.hidden_dim,
        "mode": params.mode,
    }
    arrays = {
        "attention.w_query": params.attention.w_query.data,
        "attention.w_key": params.attention.w_key.data,
        "head.w_out": params.head.w_out.data,
        "head.b_out": params.head.b_out.data,
    }
    for unit, name in ((params.encoder, "encoder"), (params.decoder, "decoder")):
        for f in fields(GclstmParams):
            arrays[f"{name}.{f.name}"] = getattr(unit, f.name).data
    if params.causal_adjacency is not None:
        arrays["causal_adjacency"] = np.asarray(params.causal_adjacency, dtype=np.float64)
    np.savez(path, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)


def load_checkpoint(path) -> ModelParams:
    with np.load(path) as bundle:
        meta = json.loads(bytes(bundle["meta"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unrecognized checkpoint format {meta.get('format')!r}")

        def tensor(key):
            return Tensor(bundle[key], requires_grad=True)

        def gclstm(name):
            return GclstmParams(**{f.name: tensor(f"{name}.{f.name}") for f in fields(GclstmParams)})

        params = ModelParams(
            n_vars=int(meta["n_vars"]),
            window=int(meta["window"]),
            hidden_dim=int(meta["hidden_dim"]),
            attention=AttentionParams(w_query=tensor("attention.w_query"),
                                      w_key=tensor("attention.w_key")),
            encoder=gclstm("encoder"),
            decoder=gclstm("decoder"),
            head=DecoderHead(w_out=tensor("head.w_out"), b_out=tensor("head.b_out")),
            mode=meta["mode"],
            causal_adjacency=bundle["causal_adjacency"].copy() if "causal_adjacency" in bundle else None,
        )
    return params
