"""Supervised time-series anomaly detector: embedding MLP -> bidirectional LSTM
-> pointwise linear scorer, trained with BCE on per-timestep labels.

The forward, backward (full BPTT through both directions, LayerNorm and GELU)
and both optimizers are written out explicitly in numpy so gradients can be
verified against finite differences. Parameters and gradients are flat
``dict[str, ndarray]`` keyed like ``"embed.0.w"``, ``"lstm.0.fwd.w_ih"``,
``"head.w"``; gradients mirror parameters key for key.

Gate layout inside every ``4d`` LSTM tensor is ``[input, forget, cell, output]``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import WindowSet, make_windows, reassemble, TimeSeriesDataset
from .exceptions import ConfigError, ContractError
from .ndcore import gelu, gelu_grad, make_rng, sigmoid

LAYERNORM_EPS = 1e-5
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Seed-stream roles, so init and shuffling never share draws.
_STREAM_INIT = 0
_STREAM_SHUFFLE = 1


@dataclass
class StandConfig:
    input_channels: int
    d_model: int = 64
    mlp_layers: int = 2
    tem_layers: int = 1
    bidirectional: bool = True
    use_embedding: bool = True
    use_tem: bool = True
    window: int = 32
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 3e-3
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.input_channels < 1:
            raise ConfigError("input_channels must be >= 1")
        if self.d_model < 1 or self.tem_layers < 1 or self.mlp_layers < 1:
            raise ConfigError("d_model, tem_layers and mlp_layers must be >= 1")
        if self.window < 2:
            raise ConfigError("window must be >= 2")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "gd"):
            raise ConfigError(f"unknown optimizer '{self.optimizer}'")

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.bidirectional else ("fwd",)

    @property
    def embed_width(self) -> int:
        return self.d_model if self.use_embedding else self.input_channels

    @property
    def encoder_width(self) -> int:
        if not self.use_tem:
            return self.embed_width
        return self.d_model * len(self.directions)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "StandConfig":
        return cls(**doc)


def init_params(config: StandConfig, rng=None) -> dict[str, np.ndarray]:
    """Seeded initialization: uniform(+-1/sqrt(fan_in)) weights, forget bias +1.

    Recurrent weights use uniform(+-1/sqrt(d_model)); LayerNorm starts at
    gain 1 / shift 0, all other biases at 0.
    """
    rng = rng if rng is not None else make_rng(config.seed, _STREAM_INIT)
    d = config.d_model
    params: dict[str, np.ndarray] = {}
    if config.use_embedding:
        fan_in = config.input_channels
        for i in range(config.mlp_layers):
            lim = 1.0 / np.sqrt(fan_in)
            params[f"embed.{i}.w"] = rng.uniform(-lim, lim, size=(d, fan_in))
            params[f"embed.{i}.b"] = np.zeros(d)
            params[f"embed.{i}.gain"] = np.ones(d)
            params[f"embed.{i}.beta"] = np.zeros(d)
            fan_in = d
    if config.use_tem:
        in_width = config.embed_width
        for layer in range(config.tem_layers):
            for direction in config.directions:
                lim_in = 1.0 / np.sqrt(in_width)
                lim_rec = 1.0 / np.sqrt(d)
                key = f"lstm.{layer}.{direction}"
                params[f"{key}.w_ih"] = rng.uniform(-lim_in, lim_in, size=(4 * d, in_width))
                params[f"{key}.w_hh"] = rng.uniform(-lim_rec, lim_rec, size=(4 * d, d))
                bias = np.zeros(4 * d)
                bias[d : 2 * d] = 1.0
                params[f"{key}.b"] = bias
            in_width = d * len(config.directions)
    lim = 1.0 / np.sqrt(config.encoder_width)
    params["head.w"] = rng.uniform(-lim, lim, size=config.encoder_width)
    params["head.b"] = np.zeros(1)
    return params


def check_params(params: dict[str, np.ndarray], config: StandConfig) -> None:
    expected = init_params(config, rng=make_rng(0))
    if set(params) != set(expected):
        raise ConfigError(
            f"parameter keys do not match config: missing {sorted(set(expected) - set(params))}, "
            f"unexpected {sorted(set(params) - set(expected))}"
        )
    for key, ref in expected.items():
        if params[key].shape != ref.shape:
            raise ConfigError(f"{key}: shape {params[key].shape}, expected {ref.shape}")


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


@dataclass
class _EmbedLayerCache:
    x: np.ndarray  # layer input (B, T, in)
    a: np.ndarray  # affine pre-activation
    g: np.ndarray  # gelu output
    xhat: np.ndarray  # normalized gelu output
    inv_std: np.ndarray  # (B, T, 1)


@dataclass
class _DirCache:
    x: np.ndarray  # direction input in processing order (B, T, in)
    gates: np.ndarray  # (B, T, 4d) activations in [i, f, g, o] order
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


def _gate_activations(z, d):
    """In-place gate nonlinearities on a (B, 4d) pre-activation block.

    Sigmoid is evaluated as 0.5*(1 + tanh(z/2)) (identical function, saturates
    without overflow) so one tanh call covers all four gates.
    """
    z[:, : 2 * d] *= 0.5
    z[:, 3 * d :] *= 0.5
    np.tanh(z, out=z)
    z[:, : 2 * d] += 1.0
    z[:, : 2 * d] *= 0.5
    z[:, 3 * d :] += 1.0
    z[:, 3 * d :] *= 0.5
    return z[:, :d], z[:, d : 2 * d], z[:, 2 * d : 3 * d], z[:, 3 * d :]


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, cached batched as (B, T, ...)."""

    x: np.ndarray
    embed: list[_EmbedLayerCache]
    h_embed: np.ndarray
    lstm: list[dict[str, _DirCache]]
    h_enc: np.ndarray
    logits: np.ndarray  # (B, T)


def _embed_layer_forward(x, w, b, gain, beta):
    a = x @ w.T + b
    g = gelu(a)
    mu = g.mean(axis=-1, keepdims=True)
    var = g.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    xhat = (g - mu) * inv_std
    return xhat * gain + beta, _EmbedLayerCache(x=x, a=a, g=g, xhat=xhat, inv_std=inv_std)


def _lstm_dir_forward(x, w_ih, w_hh, b) -> tuple[np.ndarray, _DirCache]:
    B, T, _ = x.shape
    d = w_hh.shape[1]
    zx = x @ w_ih.T + b  # input contributions for every step at once
    h_t = np.zeros((B, d))
    c_t = np.zeros((B, d))
    w_hh_t = np.ascontiguousarray(w_hh.T)
    # per-step rows are collected and stacked once; bulk copies stay cheap
    # while scattered per-step writes into (B, T, .) arrays do not
    gate_rows, c_rows, tc_rows, h_rows = [], [], [], []
    for t in range(T):
        z = zx[:, t] + h_t @ w_hh_t
        i_t, f_t, g_t, o_t = _gate_activations(z, d)
        c_t = f_t * c_t + i_t * g_t
        tc_t = np.tanh(c_t)
        h_t = o_t * tc_t
        gate_rows.append(z)
        c_rows.append(c_t)
        tc_rows.append(tc_t)
        h_rows.append(h_t)
    h = np.stack(h_rows, axis=1)
    return h, _DirCache(
        x=x,
        gates=np.stack(gate_rows, axis=1),
        c=np.stack(c_rows, axis=1),
        tanh_c=np.stack(tc_rows, axis=1),
        h=h,
    )


def forward_batch(
    x: np.ndarray, params: dict[str, np.ndarray], config: StandConfig
) -> tuple[np.ndarray, ForwardTrace]:
    """Batched forward over (B, T, C) windows; returns (logits (B, T), trace)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != config.input_channels:
        raise ConfigError(f"expected input (B, T, {config.input_channels}), got {x.shape}")

    h = x
    embed_caches: list[_EmbedLayerCache] = []
    if config.use_embedding:
        for layer in range(config.mlp_layers):
            h, cache = _embed_layer_forward(
                h,
                params[f"embed.{layer}.w"],
                params[f"embed.{layer}.b"],
                params[f"embed.{layer}.gain"],
                params[f"embed.{layer}.beta"],
            )
            embed_caches.append(cache)
    h_embed = h

    lstm_caches: list[dict[str, _DirCache]] = []
    if config.use_tem:
        for layer in range(config.tem_layers):
            caches: dict[str, _DirCache] = {}
            outs = []
            for direction in config.directions:
                key = f"lstm.{layer}.{direction}"
                inp = h if direction == "fwd" else h[:, ::-1]
                out, cache = _lstm_dir_forward(
                    inp, params[key + ".w_ih"], params[key + ".w_hh"], params[key + ".b"]
                )
                caches[direction] = cache
                outs.append(out if direction == "fwd" else out[:, ::-1])
            h = np.concatenate(outs, axis=-1) if len(outs) > 1 else outs[0]
            lstm_caches.append(caches)
    h_enc = h

    logits = h_enc @ params["head.w"] + params["head.b"][0]
    return logits, ForwardTrace(
        x=x, embed=embed_caches, h_embed=h_embed, lstm=lstm_caches, h_enc=h_enc, logits=logits
    )


def embed_forward(x_seq, params, config: StandConfig):
    """Per-timestep MLP embedding of one (T, C) sequence: affine -> GELU -> LayerNorm."""
    if not config.use_embedding:
        raise ConfigError("embed_forward requires use_embedding=true")
    x = np.asarray(x_seq, dtype=np.float64)[None]
    h = x
    caches = []
    for layer in range(config.mlp_layers):
        h, cache = _embed_layer_forward(
            h,
            params[f"embed.{layer}.w"],
            params[f"embed.{layer}.b"],
            params[f"embed.{layer}.gain"],
            params[f"embed.{layer}.beta"],
        )
        caches.append(cache)
    return h[0], caches


def bilstm_forward(h_e, params, config: StandConfig):
    """Temporal encoder over one (T, d) sequence; identity map when use_tem=false."""
    h = np.asarray(h_e, dtype=np.float64)[None]
    if not config.use_tem:
        return h[0], []
    caches = []
    for layer in range(config.tem_layers):
        layer_caches = {}
        outs = []
        for direction in config.directions:
            key = f"lstm.{layer}.{direction}"
            inp = h if direction == "fwd" else h[:, ::-1]
            out, cache = _lstm_dir_forward(
                inp, params[key + ".w_ih"], params[key + ".w_hh"], params[key + ".b"]
            )
            layer_caches[direction] = cache
            outs.append(out if direction == "fwd" else out[:, ::-1])
        h = np.concatenate(outs, axis=-1) if len(outs) > 1 else outs[0]
        caches.append(layer_caches)
    return h[0], caches


def score_forward(h_enc, params):
    """Pointwise linear logit: s_t = w . h_t + b."""
    h = np.asarray(h_enc, dtype=np.float64)
    if h.shape[-1] != params["head.w"].shape[0]:
        raise ConfigError(
            f"encoder width {h.shape[-1]} does not match classifier width "
            f"{params['head.w'].shape[0]}"
        )
    return h @ params["head.w"] + params["head.b"][0]


def forward(x, params, config: StandConfig) -> tuple[np.ndarray, ForwardTrace]:
    """Single-window forward over (T, C); returns (logits (T,), trace)."""
    logits, trace = forward_batch(np.asarray(x, dtype=np.float64)[None], params, config)
    return logits[0], trace


# ---------------------------------------------------------------------------
# loss and backward
# ---------------------------------------------------------------------------


def bce_loss(logits, labels) -> float:
    """Mean binary cross-entropy on logits, in the fused stable form
    max(s,0) - s*y + log(1 + exp(-|s|)). Handles (T,) and (B, T) inputs;
    batch inputs are averaged per sample then over the batch (equal T, so a
    flat mean).
    """
    s = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise ConfigError(f"logits {s.shape} and labels {y.shape} differ")
    return float(np.mean(np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s)))))


def _layernorm_backward(dy, cache: _EmbedLayerCache, gain):
    dgain = np.sum(dy * cache.xhat, axis=(0, 1))
    dbeta = np.sum(dy, axis=(0, 1))
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * cache.xhat).mean(axis=-1, keepdims=True)
    dg = cache.inv_std * (dxhat - m1 - cache.xhat * m2)
    return dg, dgain, dbeta


def _lstm_dir_backward(cache: _DirCache, dh_out, w_ih, w_hh):
    B, T, d = dh_out.shape
    dz_all = np.empty((B, T, 4 * d))
    dh_rec = np.zeros((B, d))
    dc_rec = np.zeros((B, d))
    for t in range(T - 1, -1, -1):
        dh = dh_out[:, t] + dh_rec
        tc = cache.tanh_c[:, t]
        step = cache.gates[:, t]
        i_t, f_t = step[:, :d], step[:, d : 2 * d]
        g_t, o_t = step[:, 2 * d : 3 * d], step[:, 3 * d :]
        do = dh * tc
        dc = dh * o_t * (1.0 - tc * tc) + dc_rec
        c_prev = cache.c[:, t - 1] if t > 0 else np.zeros((B, d))
        dz = dz_all[:, t]
        dz[:, :d] = dc * g_t * i_t * (1.0 - i_t)
        dz[:, d : 2 * d] = dc * c_prev * f_t * (1.0 - f_t)
        dz[:, 2 * d : 3 * d] = dc * i_t * (1.0 - g_t * g_t)
        dz[:, 3 * d :] = do * o_t * (1.0 - o_t)
        dh_rec = dz @ w_hh
        dc_rec = dc * f_t
    h_prev = np.concatenate([np.zeros((B, 1, d)), cache.h[:, :-1]], axis=1)
    dz_flat = dz_all.reshape(B * T, 4 * d)
    dw_ih = dz_flat.T @ cache.x.reshape(B * T, -1)
    dw_hh = dz_flat.T @ h_prev.reshape(B * T, d)
    db = dz_flat.sum(axis=0)
    dx = dz_all @ w_ih
    return dx, dw_ih, dw_hh, db


def backward(
    trace: ForwardTrace, labels, params: dict[str, np.ndarray], config: StandConfig
) -> dict[str, np.ndarray]:
    """Exact gradients of bce_loss(forward(x)) for every parameter tensor."""
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim == 1:
        y = y[None]
    B, T = trace.logits.shape
    if y.shape != (B, T):
        raise ConfigError(f"labels {y.shape} do not match logits {(B, T)}")

    grads: dict[str, np.ndarray] = {}
    dlogits = (sigmoid(trace.logits) - y) / (B * T)

    grads["head.w"] = np.einsum("bt,btk->k", dlogits, trace.h_enc)
    grads["head.b"] = np.array([dlogits.sum()])
    dh = dlogits[..., None] * params["head.w"]

    if config.use_tem:
        d = config.d_model
        for layer in range(config.tem_layers - 1, -1, -1):
            caches = trace.lstm[layer]
            dx_total = None
            for k, direction in enumerate(config.directions):
                key = f"lstm.{layer}.{direction}"
                dh_dir = dh[..., k * d : (k + 1) * d]
                if direction == "bwd":
                    dh_dir = dh_dir[:, ::-1]
                dx, dw_ih, dw_hh, db = _lstm_dir_backward(
                    caches[direction], dh_dir, params[key + ".w_ih"], params[key + ".w_hh"]
                )
                if direction == "bwd":
                    dx = dx[:, ::-1]
                grads[key + ".w_ih"] = dw_ih
                grads[key + ".w_hh"] = dw_hh
                grads[key + ".b"] = db
                dx_total = dx if dx_total is None else dx_total + dx
            dh = dx_total

    if config.use_embedding:
        for layer in range(config.mlp_layers - 1, -1, -1):
            cache = trace.embed[layer]
            dg, dgain, dbeta = _layernorm_backward(dh, cache, params[f"embed.{layer}.gain"])
            da = dg * gelu_grad(cache.a)
            da_flat = da.reshape(-1, da.shape[-1])
            grads[f"embed.{layer}.w"] = da_flat.T @ cache.x.reshape(da_flat.shape[0], -1)
            grads[f"embed.{layer}.b"] = da_flat.sum(axis=0)
            grads[f"embed.{layer}.gain"] = dgain
            grads[f"embed.{layer}.beta"] = dbeta
            dh = da @ params[f"embed.{layer}.w"]

    return grads


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            step=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params, grads, state: AdamState, learning_rate: float) -> dict[str, np.ndarray]:
    """One Adam update (beta1=0.9, beta2=0.999, eps=1e-8, bias-corrected).

    Returns new parameters; the moment state is advanced in place.
    """
    state.step += 1
    t = state.step
    out = {}
    for key, p in params.items():
        g = grads[key]
        state.m[key] = ADAM_BETA1 * state.m[key] + (1.0 - ADAM_BETA1) * g
        state.v[key] = ADAM_BETA2 * state.v[key] + (1.0 - ADAM_BETA2) * g * g
        m_hat = state.m[key] / (1.0 - ADAM_BETA1**t)
        v_hat = state.v[key] / (1.0 - ADAM_BETA2**t)
        out[key] = p - learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return out


def gd_step(params, grads, learning_rate: float) -> dict[str, np.ndarray]:
    """Plain gradient descent: theta <- theta - eta * grad."""
    return {key: p - learning_rate * grads[key] for key, p in params.items()}


# ---------------------------------------------------------------------------
# training and inference
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    loss_history: list[float]  # mean loss per epoch
    steps: int


def train(windows: WindowSet, config: StandConfig) -> TrainResult:
    """Mini-batch training over labeled windows, deterministic given config.seed."""
    if windows.labels is None:
        raise ContractError("supervised training requires labeled windows")
    if windows.values.shape[2] != config.input_channels:
        raise ConfigError(
            f"windows have {windows.values.shape[2]} channels, config expects "
            f"{config.input_channels}"
        )
    x_all = windows.values
    y_all = windows.labels.astype(np.float64)
    n = len(windows)

    params = init_params(config)
    state = AdamState.for_params(params) if config.optimizer == "adam" else None
    shuffle_rng = make_rng(config.seed, _STREAM_SHUFFLE)

    history: list[float] = []
    steps = 0
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            logits, trace = forward_batch(x_all[idx], params, config)
            loss = bce_loss(logits, y_all[idx])
            grads = backward(trace, y_all[idx], params, config)
            if config.optimizer == "adam":
                params = adam_step(params, grads, state, config.learning_rate)
            else:
                params = gd_step(params, grads, config.learning_rate)
            total += loss * len(idx)
            steps += 1
        history.append(total / n)
    return TrainResult(params=params, loss_history=history, steps=steps)


def calibrate_gd_learning_rate(
    windows: WindowSet, config: StandConfig, steps: int = 100, eta0: float = 1.0
) -> tuple[float, list[float]]:
    """Halve eta until `steps` full-batch GD iterations are loss-non-increasing.

    Returns the calibrated eta and its per-step loss history (length steps+1,
    including the initial loss).
    """
    if windows.labels is None:
        raise ContractError("calibration requires labeled windows")
    x = windows.values
    y = windows.labels.astype(np.float64)
    eta = eta0
    while eta > 1e-12:
        params = init_params(config)
        history = []
        logits, trace = forward_batch(x, params, config)
        history.append(bce_loss(logits, y))
        monotone = True
        for _ in range(steps):
            grads = backward(trace, y, params, config)
            params = gd_step(params, grads, eta)
            logits, trace = forward_batch(x, params, config)
            history.append(bce_loss(logits, y))
            if history[-1] > history[-2]:
                monotone = False
                break
        if monotone:
            return eta, history
        eta *= 0.5
    raise ConfigError("could not calibrate a monotone GD learning rate")


def infer(
    x,
    params: dict[str, np.ndarray],
    config: StandConfig,
    stride: int | None = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Score a full (T, C) series: windowed forward, logits averaged per timestep.

    Returns logits; apply a sigmoid for the probability view. The default
    stride W/2 overlaps windows, which smooths scores at window seams.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_channels:
        raise ConfigError(
            f"series has shape {x.shape}, expected (T, {config.input_channels})"
        )
    ds = TimeSeriesDataset(name="infer", values=x)
    stride = stride if stride is not None else max(1, config.window // 2)
    ws = make_windows(ds, config.window, stride)
    rows = np.empty((len(ws), config.window))
    for lo in range(0, len(ws), batch_size):
        logits, _ = forward_batch(ws.values[lo : lo + batch_size], params, config)
        rows[lo : lo + len(logits)] = logits
    return reassemble(ws, rows)


def write_loss_history(path, history) -> None:
    """CSV export of per-epoch mean training loss."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, loss in enumerate(history, start=1):
            fh.write(f"{epoch},{loss!r}\n")


# ---------------------------------------------------------------------------
# complexity probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlopEstimate:
    embed: int
    temporal: int
    scoring: int

    @property
    def total(self) -> int:
        return self.embed + self.temporal + self.scoring


def flop_estimate(config: StandConfig, T: int) -> FlopEstimate:
    """Leading-order per-pass cost: T*C*d embedding, 8*T*d^2 per LSTM layer and
    direction (4 gates x input+recurrent products), T*d scoring. Disabled
    components contribute zero; every term is linear in T.
    """
    d = config.d_model
    embed = T * config.input_channels * d if config.use_embedding else 0
    dirs = len(config.directions)
    temporal = 8 * T * d * d * config.tem_layers * dirs if config.use_tem else 0
    scoring = T * d
    return FlopEstimate(embed=embed, temporal=temporal, scoring=scoring)


def timing_probe(config: StandConfig, T: int, repeats: int = 11, seed: int = 0) -> float:
    """Median wall-clock seconds of a single-window forward at length T.

    One untimed warm-up pass precedes the measurements so allocator and cache
    effects of the first call do not skew the median.
    """
    rng = make_rng(seed)
    x = rng.standard_normal((T, config.input_channels))
    params = init_params(config)
    forward(x, params, config)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        forward(x, params, config)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))
