"""Raw-byte detectors and the two-view fused detector.

Four architectures share one training loop:

    malconv   embed(257) -> conv -> relu -> adaptive max pool -> global max -> dense
    nonneg    malconv with conv/dense weights clamped to >= 0 after every step
    convnet   embed(257) -> 3x[conv(K=8, s=4) -> relu] -> global max -> dense
    armd      per-view extractors (binary bytes + hashed strings), fused by one
              of the five fusion kinds, then global max pool -> dense

Prediction is fail-closed: an exact probability tie resolves to malicious.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, ShapeError, UsageError
from .fusion import FUSION_KINDS, fuse, init_fusion_params
from .tensor import Adam, Tensor
from .texe import Corpus
from .views import BYTE_VOCAB, SampleViews, ViewConfig, extract_views

ARCHS = ("malconv", "nonneg", "convnet", "armd")

_CONVNET_KERNEL = 8
_CONVNET_STRIDE = 4


@dataclass(frozen=True)
class DetectorConfig:
    arch: str
    fusion: str | None = None       # armd only; others ignore it
    embed_dim: int = 8
    channels: int = 32
    kernel: int = 16
    stride: int = 8
    source_stride: int = 4          # armd's string branch is shorter, so it steps finer
    feat_len: int = 64
    views: ViewConfig = field(default_factory=ViewConfig)
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 3
    seed: int = 0


@dataclass
class DetectorModel:
    config: DetectorConfig
    params: dict
    history: dict = field(default_factory=dict)


def _conv_out_len(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


def _validate(cfg: DetectorConfig):
    if cfg.arch not in ARCHS:
        raise ConfigError(f"unknown architecture {cfg.arch!r}; known: {', '.join(ARCHS)}")
    if cfg.arch == "armd":
        if cfg.fusion not in FUSION_KINDS:
            raise ConfigError(
                f"armd needs a fusion kind from {', '.join(FUSION_KINDS)}, got {cfg.fusion!r}"
            )
    for name in ("embed_dim", "channels", "kernel", "stride", "source_stride",
                 "feat_len", "epochs", "batch_size", "patience"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be positive, got {getattr(cfg, name)}")
    if cfg.lr <= 0:
        raise ConfigError(f"lr must be positive, got {cfg.lr}")
    if cfg.arch in ("malconv", "nonneg", "armd"):
        t = _conv_out_len(cfg.views.binary_len, cfg.kernel, cfg.stride)
        if t < cfg.feat_len:
            raise ConfigError(
                f"binary branch yields {t} conv positions, fewer than feat_len {cfg.feat_len}"
            )
    if cfg.arch == "armd":
        t = _conv_out_len(cfg.views.source_len, cfg.kernel, cfg.source_stride)
        if t < cfg.feat_len:
            raise ConfigError(
                f"source branch yields {t} conv positions, fewer than feat_len {cfg.feat_len}"
            )
    if cfg.arch == "convnet":
        t = cfg.views.binary_len
        for _ in range(3):
            if t < _CONVNET_KERNEL:
                raise ConfigError("binary_len too small for three convnet stages")
            t = _conv_out_len(t, _CONVNET_KERNEL, _CONVNET_STRIDE)
        if t < 1:
            raise ConfigError("binary_len too small for three convnet stages")


def _embed_init(rng, vocab: int, dim: int) -> Tensor:
    return Tensor(rng.normal(0.0, 0.05, size=(vocab, dim)), requires_grad=True)


def _conv_init(rng, cout: int, k: int, cin: int) -> Tensor:
    return T.glorot_uniform(rng, (cout, k, cin), fan_in=cin * k, fan_out=cout * k)


def build(cfg: DetectorConfig) -> DetectorModel:
    """Initialize parameters for ``cfg`` deterministically from its seed."""
    _validate(cfg)
    rng = np.random.default_rng(cfg.seed)
    d, c = cfg.embed_dim, cfg.channels
    params: dict = {}
    if cfg.arch in ("malconv", "nonneg"):
        params["bin/embed"] = _embed_init(rng, BYTE_VOCAB, d)
        params["bin/conv_w"] = _conv_init(rng, c, cfg.kernel, d)
        params["bin/conv_b"] = Tensor(np.zeros(c), requires_grad=True)
    elif cfg.arch == "convnet":
        params["bin/embed"] = _embed_init(rng, BYTE_VOCAB, d)
        cin = d
        for i in (1, 2, 3):
            params[f"bin/conv{i}_w"] = _conv_init(rng, c, _CONVNET_KERNEL, cin)
            params[f"bin/conv{i}_b"] = Tensor(np.zeros(c), requires_grad=True)
            cin = c
    else:  # armd: two disjoint extractors plus fusion parameters
        params["bin/embed"] = _embed_init(rng, BYTE_VOCAB, d)
        params["bin/conv_w"] = _conv_init(rng, c, cfg.kernel, d)
        params["bin/conv_b"] = Tensor(np.zeros(c), requires_grad=True)
        params["src/embed"] = _embed_init(rng, cfg.views.source_vocab, d)
        params["src/conv_w"] = _conv_init(rng, c, cfg.kernel, d)
        params["src/conv_b"] = Tensor(np.zeros(c), requires_grad=True)
        for name, tens in init_fusion_params(cfg.fusion, c, rng).items():
            params[f"fusion/{name}"] = tens
    params["head/w"] = T.glorot_uniform(rng, (2, c), fan_in=c, fan_out=2)
    params["head/b"] = Tensor(np.zeros(2), requires_grad=True)
    if cfg.arch == "nonneg":
        project_nonneg_params(params)
    return DetectorModel(cfg, params)


def param_count(model: DetectorModel) -> int:
    return sum(p.data.size for p in model.params.values())


# -- forward passes ---------------------------------------------------------


def _extractor(params, prefix: str, tokens, cfg: DetectorConfig, stride: int) -> Tensor:
    emb = T.embedding(tokens, params[f"{prefix}/embed"])
    h = T.relu(T.conv1d(emb, params[f"{prefix}/conv_w"], params[f"{prefix}/conv_b"], stride))
    return T.temporal_max_pool(h, cfg.feat_len)


def _head(params, features: Tensor, channels: int) -> Tensor:
    pooled = T.temporal_max_pool(features, 1)
    return T.affine(T.reshape(pooled, (channels,)), params["head/w"], params["head/b"])


def forward_logits(model: DetectorModel, views: SampleViews) -> Tensor:
    cfg = model.config
    if len(views.binary_tokens) != cfg.views.binary_len:
        raise ShapeError(
            f"binary view has {len(views.binary_tokens)} tokens, expected {cfg.views.binary_len}"
        )
    p = model.params
    if cfg.arch in ("malconv", "nonneg"):
        feats = _extractor(p, "bin", views.binary_tokens, cfg, cfg.stride)
        return _head(p, feats, cfg.channels)
    if cfg.arch == "convnet":
        h = T.embedding(views.binary_tokens, p["bin/embed"])
        for i in (1, 2, 3):
            h = T.relu(T.conv1d(h, p[f"bin/conv{i}_w"], p[f"bin/conv{i}_b"], _CONVNET_STRIDE))
        return _head(p, h, cfg.channels)
    if len(views.source_tokens) != cfg.views.source_len:
        raise ShapeError(
            f"source view has {len(views.source_tokens)} tokens, expected {cfg.views.source_len}"
        )
    bin_feats = _extractor(p, "bin", views.binary_tokens, cfg, cfg.stride)
    src_feats = _extractor(p, "src", views.source_tokens, cfg, cfg.source_stride)
    fusion_params = {k.split("/", 1)[1]: v for k, v in p.items() if k.startswith("fusion/")}
    fused = fuse(src_feats, bin_feats, cfg.fusion, fusion_params)
    return _head(p, fused, cfg.channels)


def predict(model: DetectorModel, views: SampleViews):
    """Hard label plus the underlying probability pair.

    An exact 0.5/0.5 tie resolves to malicious (label 1): uncertain verdicts
    fail closed.
    """
    with T.no_grad():
        logits = forward_logits(model, views)
    probs = T.stable_softmax(logits.data)
    label = 1 if probs[1] >= probs[0] else 0
    return label, probs


def make_hard_label_oracle(model: DetectorModel):
    """A bytes -> {0,1} callback exposing nothing but the final verdict.

    This is the only surface the attack harness sees; confidence scores stay
    on this side of the boundary.
    """
    cfg = model.config.views

    def oracle(data: bytes) -> int:
        return predict(model, extract_views(data, cfg))[0]

    return oracle


# -- non-negative weight constraint -----------------------------------------


def _clamped(name: str) -> bool:
    # convolution kernels and the dense weight matrix; embeddings and biases exempt
    leaf = name.split("/")[-1]
    return name == "head/w" or (leaf.startswith("conv") and leaf.endswith("_w"))


def project_nonneg_params(params: dict):
    for name, p in params.items():
        if _clamped(name):
            np.maximum(p.data, 0.0, out=p.data)


def project_nonneg(model: DetectorModel):
    """Clamp convolution and dense weights to >= 0 (embeddings and biases exempt)."""
    if model.config.arch != "nonneg":
        raise UsageError(f"project_nonneg applies to the nonneg arch, not {model.config.arch}")
    project_nonneg_params(model.params)


def min_constrained_weight(model: DetectorModel) -> float:
    return min(float(p.data.min()) for name, p in model.params.items() if _clamped(name))


# -- training ---------------------------------------------------------------


class EarlyStopper:
    """Stop after ``patience`` consecutive epochs without a new best score."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = -1
        self.bad = 0

    def update(self, epoch: int, score: float) -> bool:
        """Record an epoch score; returns True when training should stop."""
        if score > self.best:
            self.best = score
            self.best_epoch = epoch
            self.bad = 0
            return False
        self.bad += 1
        return self.bad >= self.patience


def _f1(tp: int, fp: int, fn: int) -> float:
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    return 2 * prec * rec / (prec + rec) if prec + rec else 0.0


def _val_f1(model: DetectorModel, samples) -> float:
    tp = fp = fn = 0
    for views, label in samples:
        pred, _ = predict(model, views)
        tp += pred == 1 and label == 1
        fp += pred == 1 and label == 0
        fn += pred == 0 and label == 1
    return _f1(tp, fp, fn)


def _load_samples(corpus: Corpus, records, cfg: ViewConfig):
    out = []
    for r in records:
        try:
            views = extract_views(corpus.read(r), cfg)
        except DataError as e:
            raise DataError(f"{r.path}: {e}") from e
        out.append((views, 1 if r.label == "malicious" else 0))
    return out


def train(model: DetectorModel, corpus: Corpus, train_records, val_records) -> DetectorModel:
    """Mini-batch Adam on cross-entropy with early stopping on validation F1.

    Shuffling is a deterministic function of the config seed, validation F1
    is checked each epoch, and the best epoch's weights are restored at the
    end.  ``model.history`` gains per-epoch train loss and validation F1.
    """
    cfg = model.config
    if not train_records:
        raise DataError("empty training manifest")
    if not val_records:
        raise DataError("empty validation manifest")
    train_samples = _load_samples(corpus, train_records, cfg.views)
    val_samples = _load_samples(corpus, val_records, cfg.views)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(model.params.values(), lr=cfg.lr)
    stopper = EarlyStopper(cfg.patience)
    history = {"train_loss": [], "val_f1": []}
    best_params = None
    n = len(train_samples)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            losses = []
            for i in batch:
                views, label = train_samples[i]
                loss, _ = T.softmax_cross_entropy(forward_logits(model, views), label)
                losses.append(loss)
            batch_loss = T.tensor_sum(losses) * (1.0 / len(losses))
            T.backward(batch_loss, model.params.values())
            opt.step()
            if cfg.arch == "nonneg":
                project_nonneg(model)
            total += float(batch_loss.data) * len(losses)
        history["train_loss"].append(total / n)
        f1 = _val_f1(model, val_samples)
        history["val_f1"].append(f1)
        improved = f1 > stopper.best
        stop = stopper.update(epoch, f1)
        if improved:
            best_params = {k: p.data.copy() for k, p in model.params.items()}
        if stop:
            break
    if best_params is not None:
        for k, p in model.params.items():
            p.data[...] = best_params[k]
    history["best_epoch"] = stopper.best_epoch
    model.history = history
    return model


def make_config(arch: str, **overrides) -> DetectorConfig:
    """Convenience constructor with per-architecture defaults filled in."""
    if arch == "armd" and "fusion" not in overrides:
        overrides["fusion"] = "attention_highway"
    return DetectorConfig(arch=arch, **overrides)
