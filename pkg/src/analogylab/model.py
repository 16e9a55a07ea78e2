"""Shared-weight encoder, pair embedding, contrastive losses and training.

The encoder is ``conv1 -> relu -> pool -> conv2 -> relu -> pool -> dense1 ->
relu -> dense2``. Every image of a quadruple goes through the same
parameters; the pair embedding is the unit-normalised feature difference.
"""

from __future__ import annotations

import copy
import csv
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import _binio
from .corpus import Splits, preprocess
from .errors import FormatError, NumericalError, ShapeError, ValidationError
from .quadruples import Pool, Quadruple, batch_arrays, sample_batch
from .tensor import (
    EPS_NORM,
    conv2d,
    conv2d_backward,
    conv2d_with_patches,
    dense,
    dense_backward,
    l2_normalize,
    l2_normalize_backward,
    maxpool2d,
    maxpool2d_backward,
    relu,
    relu_backward,
    sgd_update,
)

CHECKPOINT_MAGIC = b"VSLG"
CHECKPOINT_VERSION = 1
LAYER_NAMES = ("conv1", "conv2", "dense1", "dense2")
STAGES = ("input", "pool1", "flat")

FREEZE_MODES = {
    "fc_only": frozenset({"conv1", "conv2"}),
    "fc_plus_lastconv": frozenset({"conv1"}),
    "all": frozenset(),
}


@dataclass
class Layer:
    name: str
    weight: np.ndarray
    bias: np.ndarray
    frozen: bool = False
    vel_w: np.ndarray = field(default=None, repr=False)
    vel_b: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.vel_w is None:
            self.vel_w = np.zeros_like(self.weight)
        if self.vel_b is None:
            self.vel_b = np.zeros_like(self.bias)


@dataclass
class EncoderParams:
    layers: list[Layer]

    def __getitem__(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    @property
    def feature_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def copy(self) -> "EncoderParams":
        return copy.deepcopy(self)

    def set_freeze(self, mode: str) -> "EncoderParams":
        if mode not in FREEZE_MODES:
            raise ValidationError(f"unknown freeze mode {mode!r}")
        for layer in self.layers:
            layer.frozen = layer.name in FREEZE_MODES[mode]
        return self

    def reset_velocity(self) -> "EncoderParams":
        for layer in self.layers:
            layer.vel_w[...] = 0.0
            layer.vel_b[...] = 0.0
        return self

    def flat(self) -> np.ndarray:
        return np.concatenate([np.r_[l.weight.ravel(), l.bias.ravel()] for l in self.layers])


def init_encoder(
    image_size: int = 24,
    seed: int = 0,
    conv_channels: tuple[int, int] = (8, 16),
    hidden: int = 64,
    feature_dim: int = 32,
    in_channels: int = 3,
) -> EncoderParams:
    """He-style Gaussian weights (std ``sqrt(2 / fan_in)``), zero biases."""
    if image_size % 4:
        raise ValidationError(f"image_size must be divisible by 4, got {image_size}")
    rng = np.random.default_rng(seed)
    c1, c2 = conv_channels
    flat = c2 * (image_size // 4) ** 2
    shapes = {
        "conv1": (c1, in_channels, 3, 3),
        "conv2": (c2, c1, 3, 3),
        "dense1": (hidden, flat),
        "dense2": (feature_dim, hidden),
    }
    layers = []
    for name in LAYER_NAMES:
        shape = shapes[name]
        fan_in = int(np.prod(shape[1:]))
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        layers.append(Layer(name, w, np.zeros(shape[0])))
    return EncoderParams(layers)


# ---------------------------------------------------------------------------
# forward / backward through the encoder
# ---------------------------------------------------------------------------


def encode_batch(x: np.ndarray, params: EncoderParams, start: str = "input") -> tuple[np.ndarray, dict]:
    """Features for a batch plus the cache needed for backward.

    ``start`` names the tensor ``x`` holds: ``"input"`` (preprocessed images),
    ``"pool1"`` (output of the first conv block) or ``"flat"`` (flattened
    output of the second). Later starts skip frozen layers during training.
    """
    l1, l2, l3, l4 = (params[n] for n in LAYER_NAMES)
    if start not in STAGES:
        raise ValidationError(f"unknown encoder stage {start!r}")
    cache: dict = {"start": start}
    if start == "input":
        if x.ndim != 4 or x.shape[1] != l1.weight.shape[1]:
            raise ShapeError(f"conv1 expects (N, {l1.weight.shape[1]}, H, W) input, got {x.shape}")
        a1, cols1 = conv2d_with_patches(x, l1.weight, l1.bias)
        h1 = relu(a1)
        cache.update(x=x, a1=a1, h1=h1, cols1=cols1)
        x = maxpool2d(h1)
    if start in ("input", "pool1"):
        if x.ndim != 4 or x.shape[1] != l2.weight.shape[1]:
            raise ShapeError(f"conv2 expects (N, {l2.weight.shape[1]}, H, W) input, got {x.shape}")
        a2, cols2 = conv2d_with_patches(x, l2.weight, l2.bias)
        h2 = relu(a2)
        p2 = maxpool2d(h2)
        cache.update(p1=x, a2=a2, h2=h2, cols2=cols2, p2_shape=p2.shape)
        x = p2.reshape(p2.shape[0], -1)
    if x.shape[-1] != l3.weight.shape[1]:
        raise ShapeError(f"dense1 expects {l3.weight.shape[1]} inputs, got {x.shape[-1]}")
    a3 = dense(x, l3.weight, l3.bias)
    h3 = relu(a3)
    out = dense(h3, l4.weight, l4.bias)
    cache.update(flat=x, a3=a3, h3=h3)
    return out, cache


def frozen_prefix(params: EncoderParams, pixels: np.ndarray, chunk: int = 256) -> tuple[str, np.ndarray]:
    """Precompute the output of the frozen leading layers for every image.

    Returns the stage name to pass to :func:`encode_batch` and the table.
    """
    if not params["conv1"].frozen:
        return "input", pixels
    l1, l2 = params["conv1"], params["conv2"]
    out = []
    for i in range(0, pixels.shape[0], chunk):
        t = maxpool2d(relu(conv2d(pixels[i : i + chunk], l1.weight, l1.bias)))
        if l2.frozen:
            t = maxpool2d(relu(conv2d(t, l2.weight, l2.bias)))
            t = t.reshape(t.shape[0], -1)
        out.append(t)
    return ("flat" if l2.frozen else "pool1"), np.concatenate(out, axis=0)


def encode(pixels: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Feature vector of one preprocessed image ``(3, H, W)``, or rows for a batch."""
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim == 3:
        return encode_batch(x[None], params)[0][0]
    return encode_batch(x, params)[0]


def encode_in_chunks(x: np.ndarray, params: EncoderParams, chunk: int = 256) -> np.ndarray:
    out = [encode_batch(x[i : i + chunk], params)[0] for i in range(0, x.shape[0], chunk)]
    return np.concatenate(out, axis=0)


def encode_backward(
    d_out: np.ndarray, cache: dict, params: EncoderParams, all_layers: bool = False
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Gradients ``{layer: (dW, db)}``; frozen layers skipped unless ``all_layers``."""
    l1, l2, l3, l4 = (params[n] for n in LAYER_NAMES)
    want = {l.name for l in params.layers if all_layers or not l.frozen}
    reachable = {"flat": {"dense1", "dense2"}, "pool1": {"conv2", "dense1", "dense2"}}
    want &= reachable.get(cache["start"], set(LAYER_NAMES))
    grads = {}
    dh3, dw, db = dense_backward(d_out, cache["h3"], l4.weight)
    grads["dense2"] = (dw, db)
    if want & {"dense1", "conv2", "conv1"}:
        da3 = relu_backward(dh3, cache["a3"])
        dflat, dw, db = dense_backward(da3, cache["flat"], l3.weight)
        grads["dense1"] = (dw, db)
    if want & {"conv2", "conv1"}:
        dp2 = dflat.reshape(cache["p2_shape"])
        da2 = relu_backward(maxpool2d_backward(dp2, cache["h2"]), cache["a2"])
        dp1, dw, db = conv2d_backward(
            da2, cache["p1"], l2.weight, need_dx="conv1" in want, patches=cache["cols2"]
        )
        grads["conv2"] = (dw, db)
    if "conv1" in want:
        da1 = relu_backward(maxpool2d_backward(dp1, cache["h1"]), cache["a1"])
        _, dw, db = conv2d_backward(da1, cache["x"], l1.weight, need_dx=False, patches=cache["cols1"])
        grads["conv1"] = (dw, db)
    return {k: v for k, v in grads.items() if k in want}


# ---------------------------------------------------------------------------
# pair embedding and losses
# ---------------------------------------------------------------------------


def embed_pair(x_i: np.ndarray, x_j: np.ndarray, strict: bool = False, eps: float = EPS_NORM) -> np.ndarray:
    """Unit vector along ``x_i - x_j`` (rows, if batched)."""
    return l2_normalize(np.asarray(x_i) - np.asarray(x_j), eps=eps, strict=strict)


def _distance(x12: np.ndarray, x34: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(x12, dtype=np.float64) - np.asarray(x34, dtype=np.float64), axis=-1)


def loss_single_margin(x12, x34, y, m: float):
    """``y d + (1 - y) max(m - d, 0)`` with ``d = ||x12 - x34||``."""
    if m <= 0:
        raise ValidationError(f"margin must be positive, got {m}")
    d = _distance(x12, x34)
    y = np.asarray(y, dtype=np.float64)
    return y * d + (1.0 - y) * np.maximum(m - d, 0.0)


def loss_double_margin(x12, x34, y, m_pos: float, m_neg: float):
    """``y max(d - m_pos, 0) + (1 - y) max(m_neg - d, 0)``."""
    if not 0.0 <= m_pos <= m_neg:
        raise ValidationError(f"margins must satisfy 0 <= m_pos <= m_neg, got {m_pos}, {m_neg}")
    d = _distance(x12, x34)
    y = np.asarray(y, dtype=np.float64)
    return y * np.maximum(d - m_pos, 0.0) + (1.0 - y) * np.maximum(m_neg - d, 0.0)


def _loss_and_slope(d: np.ndarray, y: np.ndarray, hyper: "Hyperparams") -> tuple[np.ndarray, np.ndarray]:
    """Per-quadruple loss and its derivative w.r.t. the distance (0 at kinks)."""
    if hyper.loss_mode == "single":
        m_pos, m_neg = None, hyper.m
        loss = y * d + (1.0 - y) * np.maximum(m_neg - d, 0.0)
        pos_slope = (d > 0).astype(float)
    else:
        m_pos, m_neg = hyper.m_pos, hyper.m_neg
        loss = y * np.maximum(d - m_pos, 0.0) + (1.0 - y) * np.maximum(m_neg - d, 0.0)
        pos_slope = (d > m_pos).astype(float)
    slope = y * pos_slope - (1.0 - y) * (d < m_neg)
    return loss, slope


# ---------------------------------------------------------------------------
# hyperparameters and training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Hyperparams:
    loss_mode: str = "double"
    m: float = 0.4
    m_pos: float = 0.2
    m_neg: float = 0.4
    lr: float = 0.05
    lr_decay: float = 0.5
    decay_every: float = 0.25  # fraction of ``steps``
    momentum: float = 0.9
    batch_size: int = 32
    steps: int = 5000
    freeze_mode: str = "fc_plus_lastconv"
    pos_fraction: float = 0.5
    hard_fraction: float = 0.5
    eps_norm: float = EPS_NORM
    seed: int = 0

    def __post_init__(self):
        if self.loss_mode not in ("single", "double"):
            raise ValidationError(f"loss_mode must be 'single' or 'double', got {self.loss_mode!r}")
        if self.m <= 0:
            raise ValidationError(f"single margin must be > 0, got {self.m}")
        if not 0.0 <= self.m_pos <= self.m_neg:
            raise ValidationError(
                f"margins must satisfy 0 <= m_pos <= m_neg, got {self.m_pos}, {self.m_neg}"
            )
        if self.freeze_mode not in FREEZE_MODES:
            raise ValidationError(f"unknown freeze_mode {self.freeze_mode!r}")
        if self.batch_size < 1 or self.steps < 0 or self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ValidationError("invalid optimiser settings")

    def lr_at(self, step: int) -> float:
        period = max(1, int(round(self.steps * self.decay_every)))
        return self.lr * self.lr_decay ** (step // period)

    def replace(self, **kw) -> "Hyperparams":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepResult:
    loss: float
    grads: dict
    distances: np.ndarray


def quadruple_loss_and_grads(
    params: EncoderParams,
    images: np.ndarray,
    y: np.ndarray,
    hyper: Hyperparams,
    all_layers: bool = False,
    start: str = "input",
    index: Optional[np.ndarray] = None,
) -> StepResult:
    """Mean contrastive loss over ``B`` quadruples and its parameter gradients.

    Without ``index``, ``images`` has shape ``(B, 4, ...)``: the four
    branches of each quadruple, as preprocessed images or as activations at
    ``start``. With ``index`` (shape ``(B, 4)``), ``images`` holds distinct
    images only and ``index`` points into it, so repeated images are encoded
    once. All branches share ``params``; their gradients are accumulated.
    """
    if index is None:
        b = images.shape[0]
        images = images.reshape((4 * b,) + images.shape[2:])
        index = np.arange(4 * b).reshape(b, 4)
    b = index.shape[0]
    feats, cache = encode_batch(images, params, start)
    f = feats[index]
    v12 = f[:, 0] - f[:, 1]
    v34 = f[:, 2] - f[:, 3]
    x12 = l2_normalize(v12, hyper.eps_norm)
    x34 = l2_normalize(v34, hyper.eps_norm)
    diff = x12 - x34
    d = np.linalg.norm(diff, axis=-1)
    loss, slope = _loss_and_slope(d, y, hyper)
    mean_loss = float(loss.mean())
    if not np.isfinite(mean_loss):
        raise NumericalError(
            f"non-finite loss {mean_loss}; max |feature| = {np.abs(feats).max():.3g}, "
            f"min pair norm = {min(np.linalg.norm(v12, axis=-1).min(), np.linalg.norm(v34, axis=-1).min()):.3g}"
        )
    unit = np.divide(diff, d[:, None], out=np.zeros_like(diff), where=d[:, None] > 0)
    g = (slope / b)[:, None] * unit
    dv12 = l2_normalize_backward(g, v12, hyper.eps_norm)
    dv34 = l2_normalize_backward(-g, v34, hyper.eps_norm)
    branch = np.stack([dv12, -dv12, dv34, -dv34], axis=1).reshape(4 * b, -1)
    dfeat = np.zeros_like(feats)
    np.add.at(dfeat, index.reshape(-1), branch)
    grads = encode_backward(dfeat, cache, params, all_layers=all_layers)
    return StepResult(mean_loss, grads, d)


def gather_quadruples(pixels: np.ndarray, batch: Sequence[Quadruple]) -> tuple[np.ndarray, np.ndarray]:
    idx, y = batch_arrays(batch)
    return pixels[idx], y


def train_step(
    batch: Sequence[Quadruple],
    params: EncoderParams,
    hyper: Hyperparams,
    pixels: np.ndarray,
    lr: Optional[float] = None,
) -> tuple[EncoderParams, float]:
    """One SGD step on ``batch``; ``pixels`` is the preprocessed corpus array.

    Updates ``params`` in place and returns it with the pre-update mean loss.
    """
    if not batch:
        raise ValidationError("empty batch")
    images, y = gather_quadruples(pixels, batch)
    res = quadruple_loss_and_grads(params, images, y, hyper)
    sgd_update(params, res.grads, hyper.lr if lr is None else lr, hyper.momentum)
    return params, res.loss


@dataclass
class LogRow:
    step: int
    loss: float
    pos_dist_mean: float
    neg_dist_mean: float


def _masked_mean(values: np.ndarray, mask: np.ndarray) -> float:
    return float(values[mask].mean()) if mask.any() else float("nan")


def train(
    splits: Splits,
    hyper: Hyperparams,
    progress: Optional[Callable[[LogRow], None]] = None,
    init: Optional[EncoderParams] = None,
) -> tuple[EncoderParams, list[LogRow]]:
    """Train on the split's training pool; deterministic given ``hyper.seed``."""
    corpus = splits.corpus
    pixels = preprocess(corpus.pixels, splits.channel_means)
    pool = Pool.from_corpus(corpus, splits.train)
    seeds = np.random.SeedSequence(hyper.seed).spawn(2)
    if init is None:
        params = init_encoder(corpus.spec.image_size, seed=int(seeds[0].generate_state(1)[0]))
    else:
        params = init.copy().reset_velocity()
    params.set_freeze(hyper.freeze_mode)
    start, table = frozen_prefix(params, pixels)
    rng = np.random.default_rng(seeds[1])
    log = []
    for step in range(hyper.steps):
        batch = sample_batch(
            rng, pool, hyper.batch_size, hyper.pos_fraction, hyper.hard_fraction, splits.heldout_types
        )
        idx, y = batch_arrays(batch)
        uniq, inverse = np.unique(idx, return_inverse=True)
        try:
            res = quadruple_loss_and_grads(
                params, table[uniq], y, hyper, start=start, index=inverse.reshape(idx.shape)
            )
        except NumericalError as exc:
            raise NumericalError(f"step {step}: {exc}") from exc
        sgd_update(params, res.grads, hyper.lr_at(step), hyper.momentum)
        row = LogRow(
            step, res.loss, _masked_mean(res.distances, y == 1), _masked_mean(res.distances, y == 0)
        )
        log.append(row)
        if progress is not None:
            progress(row)
    return params, log


def write_training_log(log: Sequence[LogRow], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "pos_dist_mean", "neg_dist_mean"])
        for r in log:
            w.writerow([r.step, repr(r.loss), repr(r.pos_dist_mean), repr(r.neg_dist_mean)])


def probe_distances(
    params: EncoderParams, pixels: np.ndarray, batch: Sequence[Quadruple], eps: float = EPS_NORM
) -> tuple[float, float]:
    """Mean embedding distance of the positive and of the negative quadruples."""
    images, y = gather_quadruples(pixels, batch)
    b = images.shape[0]
    f = encode_in_chunks(images.reshape((4 * b,) + images.shape[2:]), params).reshape(b, 4, -1)
    d = _distance(embed_pair(f[:, 0], f[:, 1], eps=eps), embed_pair(f[:, 2], f[:, 3], eps=eps))
    return _masked_mean(d, y == 1), _masked_mean(d, y == 0)


# ---------------------------------------------------------------------------
# classifier-pretrained baseline
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class ClassifierHead:
    weight: np.ndarray
    bias: np.ndarray

    def logits(self, features: np.ndarray) -> np.ndarray:
        return dense(features, self.weight, self.bias)


def pretrain_classifier(
    splits: Splits,
    steps: int = 1500,
    batch_size: int = 64,
    lr: float = 0.02,
    momentum: float = 0.9,
    seed: int = 0,
    return_head: bool = False,
    progress: Optional[Callable[[int, float], None]] = None,
):
    """Train encoder + softmax head to predict property ids; return the encoder.

    All layers are trained. The head starts at zero so the initial loss is
    ``ln(num_properties)``. It is dropped unless ``return_head`` is set.
    """
    corpus = splits.corpus
    pixels = preprocess(corpus.pixels, splits.channel_means)
    seeds = np.random.SeedSequence(seed).spawn(2)
    params = init_encoder(corpus.spec.image_size, seed=int(seeds[0].generate_state(1)[0]))
    params.set_freeze("all")
    n_classes = corpus.spec.num_properties
    head = Layer("head", np.zeros((n_classes, params.feature_dim)), np.zeros(n_classes))
    rng = np.random.default_rng(seeds[1])
    labels_all = corpus.property
    for step in range(steps):
        idx = splits.train[rng.integers(splits.train.size, size=batch_size)]
        feats, cache = encode_batch(pixels[idx], params)
        logits = dense(feats, head.weight, head.bias)
        loss, dlogits = softmax_cross_entropy(logits, labels_all[idx])
        if not np.isfinite(loss):
            raise NumericalError(f"classifier step {step}: non-finite loss")
        dfeat, dw, db = dense_backward(dlogits, feats, head.weight)
        grads = encode_backward(dfeat, cache, params)
        grads["head"] = (dw, db)
        sgd_update(_WithHead(params, head), grads, lr, momentum)
        if progress is not None:
            progress(step, loss)
    params.reset_velocity()
    if return_head:
        return params, ClassifierHead(head.weight, head.bias)
    return params


@dataclass
class _WithHead:
    params: EncoderParams
    head: Layer

    @property
    def layers(self):
        return self.params.layers + [self.head]


def classifier_accuracy(
    params: EncoderParams, head: ClassifierHead, pixels: np.ndarray, labels: np.ndarray
) -> float:
    pred = head.logits(encode_in_chunks(pixels, params)).argmax(axis=1)
    return float((pred == labels).mean())


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: EncoderParams, path: str | os.PathLike) -> None:
    parts = [CHECKPOINT_MAGIC, _binio.u32(CHECKPOINT_VERSION), _binio.u32(len(params.layers))]
    for layer in params.layers:
        name = layer.name.encode("utf-8")
        parts += [_binio.u32(len(name)), name, _binio.u32(layer.weight.ndim)]
        parts += [_binio.u32(d) for d in layer.weight.shape]
        parts.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def _check_architecture(params: EncoderParams, expected: Optional[EncoderParams]) -> None:
    names = [l.name for l in params.layers]
    if names != list(LAYER_NAMES):
        raise ShapeError(f"checkpoint layers {names} do not match encoder layers {list(LAYER_NAMES)}")
    c1, c2, d1, d2 = (params[n].weight for n in LAYER_NAMES)
    if c1.ndim != 4 or c2.ndim != 4 or d1.ndim != 2 or d2.ndim != 2:
        raise ShapeError("checkpoint layer ranks do not match the encoder")
    if c2.shape[1] != c1.shape[0]:
        raise ShapeError(f"layer conv2: expects {c2.shape[1]} input channels, conv1 gives {c1.shape[0]}")
    if d1.shape[1] % c2.shape[0]:
        raise ShapeError(f"layer dense1: {d1.shape[1]} inputs incompatible with {c2.shape[0]} channels")
    if d2.shape[1] != d1.shape[0]:
        raise ShapeError(f"layer dense2: expects {d2.shape[1]} inputs, dense1 gives {d1.shape[0]}")
    if expected is not None:
        for got, want in zip(params.layers, expected.layers):
            if got.weight.shape != want.weight.shape:
                raise ShapeError(
                    f"layer {got.name}: checkpoint shape {got.weight.shape}, "
                    f"expected {want.weight.shape}"
                )


def load_checkpoint(path: str | os.PathLike, expected: Optional[EncoderParams] = None) -> EncoderParams:
    """Read a checkpoint; ``expected`` (e.g. a fresh :func:`init_encoder`) pins shapes."""
    with open(path, "rb") as fh:
        r = _binio.Reader(fh.read(), f"checkpoint {os.fspath(path)}")
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    layers = []
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        dims = tuple(r.u32() for _ in range(r.u32()))
        if not dims:
            raise ShapeError(f"layer {name}: rank-0 weights")
        w = r.array("<f8", int(np.prod(dims))).reshape(dims).astype(np.float64)
        b = r.array("<f8", dims[0]).astype(np.float64)
        layers.append(Layer(name, w, b))
    if not r.done():
        raise FormatError(f"{r.what}: {len(r.data) - r.pos} trailing bytes")
    params = EncoderParams(layers)
    _check_architecture(params, expected)
    return params
