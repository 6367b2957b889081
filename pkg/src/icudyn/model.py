"""Stacked LSTM mortality-risk model with exact backpropagation through time.

Each step ingests one event-grid column with the prediction horizon (hours)
appended, and emits ``sigmoid(w_out . h_top + b_out)``: the probability of
in-ICU death at ``t_n + dt``. Training replicates the encounter's disposition
at every step and minimizes per-step binary cross-entropy, averaged over the
steps of an encounter and then over encounters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from .errors import (
    CheckpointError,
    DataValidationError,
    EmptyWindowError,
    NumericError,
    ShapeError,
    SingleClassError,
    TrainingDiverged,
)
from .preprocess import EncounterMatrix

log = logging.getLogger(__name__)

GATES = ("i", "f", "o", "g")
_RISK_LO = np.finfo(float).tiny
_RISK_HI = 1.0 - np.finfo(float).epsneg


# ---------------------------------------------------------------------------
# parameters


@dataclass
class LayerParams:
    """One LSTM layer. Gate blocks are stacked row-wise in i, f, o, g order."""

    W: np.ndarray  # (4H, D)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def width(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(W, U, b) views of one gate."""
        k = GATES.index(name)
        h = self.width
        sl = slice(k * h, (k + 1) * h)
        return self.W[sl], self.U[sl], self.b[sl]


@dataclass
class ModelParams:
    layers: list[LayerParams]
    w_out: np.ndarray  # (H_last,)
    b_out: np.ndarray  # (1,)

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        if not self.layers:
            raise ShapeError("model needs at least one layer")
        for n, layer in enumerate(self.layers, 1):
            h, d = layer.width, layer.input_dim
            if layer.W.shape != (4 * h, d) or layer.U.shape != (4 * h, h) or layer.b.shape != (4 * h,):
                raise ShapeError(f"layer {n}: inconsistent gate shapes")
            if n > 1 and d != self.layers[n - 2].width:
                raise ShapeError(f"layer {n}: input dim {d} != width of layer {n - 1} ({self.layers[n - 2].width})")
        if self.w_out.shape != (self.layers[-1].width,) or self.b_out.shape != (1,):
            raise ShapeError("output head does not match the last layer width")

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(l.width for l in self.layers)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out += [l.W, l.U, l.b]
        return out + [self.w_out, self.b_out]

    def map(self, fn) -> "ModelParams":
        return ModelParams(
            [LayerParams(fn(l.W), fn(l.U), fn(l.b)) for l in self.layers], fn(self.w_out), fn(self.b_out)
        )

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def equal(self, other: "ModelParams") -> bool:
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def zero_params(input_dim: int, widths: Sequence[int] = (64, 64, 64)) -> ModelParams:
    layers, d = [], input_dim
    for h in widths:
        layers.append(LayerParams(np.zeros((4 * h, d)), np.zeros((4 * h, h)), np.zeros(4 * h)))
        d = h
    return ModelParams(layers, np.zeros(d), np.zeros(1))


def init_params(input_dim: int, widths: Sequence[int] = (64, 64, 64), seed=0) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, forget bias 1."""
    if input_dim < 1 or any(h < 1 for h in widths):
        raise ShapeError("input dim and widths must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers, d = [], input_dim
    for h in widths:
        W = rng.uniform(-1, 1, (4 * h, d)) / math.sqrt(d)
        U = rng.uniform(-1, 1, (4 * h, h)) / math.sqrt(h)
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        layers.append(LayerParams(W, U, b))
        d = h
    w_out = rng.uniform(-1, 1, d) / math.sqrt(d)
    return ModelParams(layers, w_out, np.zeros(1))


# ---------------------------------------------------------------------------
# inputs and outputs

# The network sees the horizon in days: a raw value of up to 24 next to
# z-scored inputs saturates the first layer's gates.
HORIZON_SCALE_HOURS = 24.0


@dataclass
class ModelInput:
    x: np.ndarray  # (T, n_vars + 1); last column is the horizon in hours
    t: np.ndarray  # (T,) minutes
    encounter_id: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        if self.x.ndim != 2 or len(self.t) != len(self.x):
            raise ShapeError("ModelInput.x must be (T, D) with one time per row")
        if len(self.x) and np.any(self.x[:, -1] < 0):
            raise DataValidationError("prediction horizon must be >= 0")

    def __len__(self):
        return len(self.x)

    def head(self, k: int) -> "ModelInput":
        return ModelInput(self.x[:k], self.t[:k], self.encounter_id)


def model_input(matrix: EncounterMatrix, delta_t_hours, n_cols: int | None = None) -> ModelInput:
    """Columns of ``matrix`` with the horizon appended to every input vector."""
    k = matrix.n_cols if n_cols is None else n_cols
    dt = np.broadcast_to(np.asarray(delta_t_hours, dtype=float), (k,))
    x = np.column_stack([matrix.values[:, :k].T, dt])
    return ModelInput(x, matrix.times[:k], matrix.encounter_id)


@dataclass
class RiskTrajectory:
    t: np.ndarray
    delta_t: np.ndarray
    risk: np.ndarray

    def __len__(self):
        return len(self.risk)


# ---------------------------------------------------------------------------
# forward / backward


def _sigmoid(z):
    return expit(z)


def lstm_cell_forward(x, h, c, layer: LayerParams) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step for a single vector or a (B, D) batch."""
    x, h, c = np.asarray(x, float), np.asarray(h, float), np.asarray(c, float)
    H = layer.width
    if x.shape[-1] != layer.input_dim or h.shape[-1] != H or c.shape[-1] != H:
        raise ShapeError(
            f"cell expects x[{layer.input_dim}], h[{H}], c[{H}]; got {x.shape}, {h.shape}, {c.shape}"
        )
    z = x @ layer.W.T + h @ layer.U.T + layer.b
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H : 2 * H])
    o = _sigmoid(z[..., 2 * H : 3 * H])
    g = np.tanh(z[..., 3 * H :])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


@dataclass
class _LayerCache:
    x: np.ndarray  # (T, B, D) layer input
    ifog: np.ndarray  # (T, B, 4H) activated gates
    c: np.ndarray  # (T + 1, B, H), c[0] = initial state
    h: np.ndarray  # (T + 1, B, H)


def _layer_forward(X: np.ndarray, layer: LayerParams) -> _LayerCache:
    T, B, _ = X.shape
    H = layer.width
    pre = X @ layer.W.T + layer.b  # input part for all steps at once
    ifog = np.empty((T, B, 4 * H))
    c = np.zeros((T + 1, B, H))
    h = np.zeros((T + 1, B, H))
    UT = layer.U.T
    for t in range(T):
        z = pre[t] + h[t] @ UT
        a = ifog[t]
        a[:, : 3 * H] = _sigmoid(z[:, : 3 * H])
        a[:, 3 * H :] = np.tanh(z[:, 3 * H :])
        c[t + 1] = a[:, H : 2 * H] * c[t] + a[:, :H] * a[:, 3 * H :]
        h[t + 1] = a[:, 2 * H : 3 * H] * np.tanh(c[t + 1])
    return _LayerCache(X, ifog, c, h)


def _layer_backward(cache: _LayerCache, dh_out: np.ndarray, layer: LayerParams, truncation: int = 0):
    """Gradients of one layer given dLoss/dh for every step.

    With ``truncation = k > 0`` the recurrent gradient is cut at every k-th
    step boundary (truncated BPTT, an approximation).
    """
    T, B, _ = cache.x.shape
    H = layer.width
    ifog, c = cache.ifog, cache.c
    dz = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    U = layer.U
    for t in range(T - 1, -1, -1):
        a = ifog[t]
        i, f, o, g = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        tc = np.tanh(c[t + 1])
        dh = dh_out[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        d = dz[t]
        d[:, :H] = dc * g * i * (1.0 - i)
        d[:, H : 2 * H] = dc * c[t] * f * (1.0 - f)
        d[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        d[:, 3 * H :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = d @ U
        if truncation and t % truncation == 0:
            dh_next = np.zeros_like(dh_next)
            dc_next = np.zeros_like(dc_next)
    dz2 = dz.reshape(T * B, 4 * H)
    dW = dz2.T @ cache.x.reshape(T * B, -1)
    dU = dz2.T @ cache.h[:-1].reshape(T * B, H)
    db = dz2.sum(axis=0)
    dX = dz @ layer.W
    return LayerParams(dW, dU, db), dX


def _forward_logits(X: np.ndarray, params: ModelParams):
    caches = []
    inp = X.copy()
    inp[..., -1] /= HORIZON_SCALE_HOURS
    for layer in params.layers:
        cache = _layer_forward(inp, layer)
        caches.append(cache)
        inp = cache.h[1:]
    logits = inp @ params.w_out + params.b_out[0]
    return logits, caches


def _check_width(x: np.ndarray, params: ModelParams) -> None:
    if x.shape[-1] != params.input_dim:
        raise ShapeError(f"input width {x.shape[-1]} does not match model input dim {params.input_dim}")


def _pad(inputs: Sequence[ModelInput]):
    """Stack variable-length inputs into (T, B, D) with a (T, B) validity mask."""
    T = max(len(s) for s in inputs)
    D = inputs[0].x.shape[1]
    X = np.zeros((T, len(inputs), D))
    mask = np.zeros((T, len(inputs)))
    for b, s in enumerate(inputs):
        X[: len(s), b] = s.x
        mask[: len(s), b] = 1.0
    return X, mask


def forward(inp: ModelInput, params: ModelParams) -> RiskTrajectory:
    if len(inp) == 0:
        raise DataValidationError("cannot run the model on an empty sequence")
    _check_width(inp.x, params)
    logits, _ = _forward_logits(inp.x[:, None, :], params)
    risk = np.clip(_sigmoid(logits[:, 0]), _RISK_LO, _RISK_HI)
    return RiskTrajectory(inp.t.copy(), inp.x[:, -1].copy(), risk)


def forward_batch(inputs: Sequence[ModelInput], params: ModelParams) -> list[np.ndarray]:
    """Per-step risks of several sequences, run as one padded batch."""
    if not inputs:
        return []
    if any(len(s) == 0 for s in inputs):
        raise DataValidationError("cannot run the model on an empty sequence")
    X, _ = _pad(inputs)
    _check_width(X, params)
    logits, _ = _forward_logits(X, params)
    risk = np.clip(_sigmoid(logits), _RISK_LO, _RISK_HI)
    return [risk[: len(s), b].copy() for b, s in enumerate(inputs)]


def loss_and_grads(batch, params: ModelParams, truncation: int = 0) -> tuple[float, ModelParams]:
    """Mean per-encounter, mean-over-steps BCE and its exact gradient.

    ``batch`` is a sequence of (ModelInput, label) with label 1 = died.
    """
    if not batch:
        raise DataValidationError("empty batch")
    inputs = [s for s, _ in batch]
    y = np.array([float(lbl) for _, lbl in batch])
    if not np.all((y == 0) | (y == 1)):
        raise DataValidationError("labels must be 0 or 1")
    if any(len(s) == 0 for s in inputs):
        raise DataValidationError("cannot train on an empty sequence")
    X, mask = _pad(inputs)
    _check_width(X, params)
    lengths = mask.sum(axis=0)
    weights = mask / (lengths * len(batch))

    logits, caches = _forward_logits(X, params)
    with np.errstate(invalid="ignore", over="ignore"):  # non-finite values are reported below
        bce = np.logaddexp(0.0, logits) - y * logits
    per_encounter = (bce * weights).sum(axis=0)
    bad = ~np.isfinite(per_encounter)
    if bad.any():
        enc = inputs[int(np.flatnonzero(bad)[0])].encounter_id
        raise NumericError(f"non-finite loss for encounter {enc!r}")
    loss = float(per_encounter.sum())

    dlogits = weights * (_sigmoid(logits) - y)
    top = caches[-1].h[1:]
    dw_out = np.einsum("tb,tbh->h", dlogits, top)
    db_out = np.array([dlogits.sum()])
    dh = dlogits[:, :, None] * params.w_out

    grads: list[LayerParams] = []
    for layer, cache in zip(reversed(params.layers), reversed(caches)):
        g, dh = _layer_backward(cache, dh, layer, truncation)
        grads.append(g)
    return loss, ModelParams(grads[::-1], dw_out, db_out)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    clip_norm: float = 5.0
    momentum: float = 0.0
    delta_t_min: float = 0.5
    delta_t_max: float = 24.0
    widths: tuple[int, ...] = (64, 64, 64)
    truncation: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.learning_rate <= 0:
            raise DataValidationError("learning rate must be positive")
        if not self.widths or min(self.widths) < 1:
            raise DataValidationError("hidden widths must be >= 1")
        if self.delta_t_min > self.delta_t_max or self.delta_t_min < 0:
            raise DataValidationError("need 0 <= delta_t_min <= delta_t_max")
        if self.epochs < 0 or self.batch_size < 1 or self.truncation < 0:
            raise DataValidationError("epochs, batch size and truncation must be non-negative")
        if not 0 <= self.momentum < 1:
            raise DataValidationError("momentum must lie in [0, 1)")


class TrainResult(NamedTuple):
    params: ModelParams
    history: list[float]


def _clip_(grads: ModelParams, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.arrays()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.arrays():
            g *= scale
    return norm


def _length_buckets(lengths: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled minibatches of similar-length encounters, to cut padding.

    A random permutation is cut into windows of ``BUCKET_BATCHES`` batches;
    each window is sorted by length before being split, and the batch order
    is shuffled again.
    """
    order = rng.permutation(len(lengths))
    window = batch_size * BUCKET_BATCHES
    batches = []
    for start in range(0, len(order), window):
        chunk = order[start : start + window]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches += [chunk[k : k + batch_size] for k in range(0, len(chunk), batch_size)]
    return [batches[k] for k in rng.permutation(len(batches))]


BUCKET_BATCHES = 8


def train(data: Sequence[EncounterMatrix], config: TrainConfig, init: ModelParams | None = None) -> TrainResult:
    """Minibatch SGD (optional momentum, global-norm clipping).

    Every epoch draws a fresh horizon per encounter, uniform in
    ``[delta_t_min, delta_t_max]`` hours, and a fresh shuffle; both come from
    one generator seeded by ``config.seed``.
    """
    if not data:
        raise DataValidationError("no training encounters")
    labels = np.array([0.0 if m.survived else 1.0 for m in data])
    if labels.min() == labels.max():
        raise SingleClassError("training data needs both survivors and non-survivors")
    input_dim = data[0].values.shape[0] + 1
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    params = init.copy() if init is not None else init_params(input_dim, config.widths, np.random.default_rng(seeds[0]))
    if params.input_dim != input_dim:
        raise ShapeError(f"initial params take {params.input_dim} inputs, data provide {input_dim}")
    rng = np.random.default_rng(seeds[1])
    velocity = params.zeros_like()
    history: list[float] = []
    last_good = params.copy()
    n = len(data)
    lengths = np.array([m.n_cols for m in data])
    for epoch in range(config.epochs):
        dts = rng.uniform(config.delta_t_min, config.delta_t_max, size=n)
        total = 0.0
        for idx in _length_buckets(lengths, config.batch_size, rng):
            idx = sorted(idx, key=lambda k: data[k].encounter_id)
            batch = [(model_input(data[k], dts[k]), labels[k]) for k in idx]
            try:
                loss, grads = loss_and_grads(batch, params, config.truncation)
            except NumericError as exc:
                raise TrainingDiverged(f"epoch {epoch + 1}: {exc}", last_good, history) from exc
            _clip_(grads, config.clip_norm)
            for p, v, g in zip(params.arrays(), velocity.arrays(), grads.arrays()):
                if config.momentum:
                    v *= config.momentum
                    v += g
                    p -= config.learning_rate * v
                else:
                    p -= config.learning_rate * g
            total += loss * len(idx)
        if not (math.isfinite(total) and params.is_finite()):
            raise TrainingDiverged(f"epoch {epoch + 1}: parameters became non-finite", last_good, history)
        history.append(total / n)
        last_good = params.copy()
        log.debug("epoch %d loss %.6f", epoch + 1, history[-1])
    return TrainResult(params, history)


# ---------------------------------------------------------------------------
# inference


def predict_at(matrix: EncounterMatrix, observe_until: float, delta_t: float, params: ModelParams) -> float:
    """Risk emitted at the last column with time <= ``observe_until`` minutes."""
    k = matrix.columns_until(observe_until)
    if k == 0:
        raise EmptyWindowError(f"encounter {matrix.encounter_id}: no columns before {observe_until} min")
    return float(forward(model_input(matrix, delta_t, k), params).risk[-1])


def predict_many(
    matrices: Sequence[EncounterMatrix],
    observe_until: Sequence[float],
    delta_t: float,
    params: ModelParams,
    batch_size: int = 256,
) -> np.ndarray:
    """``predict_at`` for every (encounter, cutoff) pair; shape (n_enc, n_cut).

    One causal pass per encounter serves all cutoffs.
    """
    cutoffs = np.asarray(observe_until, dtype=float)
    out = np.empty((len(matrices), len(cutoffs)))
    for start in range(0, len(matrices), batch_size):
        chunk = matrices[start : start + batch_size]
        ks = np.array([[m.columns_until(c) for c in cutoffs] for m in chunk])
        for m, row in zip(chunk, ks):
            if row.min() == 0:
                raise EmptyWindowError(f"encounter {m.encounter_id}: no columns before {cutoffs.min()} min")
        inputs = [model_input(m, delta_t, int(row.max())) for m, row in zip(chunk, ks)]
        risks = forward_batch(inputs, params)
        for j, (r, row) in enumerate(zip(risks, ks)):
            out[start + j] = r[row - 1]
    return out


# ---------------------------------------------------------------------------
# checkpoints


def to_checkpoint(params: ModelParams) -> Checkpoint:
    arrays: list[np.ndarray] = []
    for l in params.layers:
        for mat in (l.W, l.U, l.b):
            arrays += np.split(mat, 4, axis=0)
    arrays += [params.w_out, params.b_out]
    return Checkpoint("rnn", [(l.input_dim, l.width) for l in params.layers], arrays)


def from_checkpoint(ckpt: Checkpoint) -> ModelParams:
    if ckpt.model_type != "rnn":
        raise CheckpointError(f"checkpoint holds a {ckpt.model_type} model, not rnn")
    layers, pos = [], 0
    for _ in ckpt.layers:
        W = np.concatenate(ckpt.arrays[pos : pos + 4])
        U = np.concatenate(ckpt.arrays[pos + 4 : pos + 8])
        b = np.concatenate(ckpt.arrays[pos + 8 : pos + 12])
        layers.append(LayerParams(W, U, b))
        pos += 12
    return ModelParams(layers, ckpt.arrays[pos], ckpt.arrays[pos + 1])


def save_params(params: ModelParams, path) -> None:
    write_checkpoint(path, to_checkpoint(params))


def load_params(path, widths: Sequence[int] | None = None, input_dim: int | None = None) -> ModelParams:
    """Read an rnn checkpoint, optionally checking it against a width config."""
    ckpt = read_checkpoint(path)
    if ckpt.model_type != "rnn":
        raise CheckpointError(f"{path} holds a {ckpt.model_type} model, not rnn")
    if input_dim is not None and ckpt.layers[0][0] != input_dim:
        raise ShapeError(f"layer 1: checkpoint input dim {ckpt.layers[0][0]}, expected {input_dim}")
    if widths is not None:
        widths = tuple(widths)
        if len(widths) != len(ckpt.layers):
            raise ShapeError(f"checkpoint has {len(ckpt.layers)} layers, config expects {len(widths)}")
        for n, ((_, h), want) in enumerate(zip(ckpt.layers, widths), 1):
            if h != want:
                raise ShapeError(f"layer {n}: checkpoint width {h}, config expects {want}")
    return from_checkpoint(ckpt)
