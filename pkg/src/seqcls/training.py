"""Training and evaluation harness for the sequence-classification models.

``train`` runs mini-batch gradient descent on one of three models (the
attention head, the temporal-convolution head, or the frame-average
baseline), evaluates on the validation split after every epoch, and keeps
the parameters of the best top-1 epoch (earliest epoch wins ties).  All
randomness flows through explicit integer seeds, so reruns of the same
configuration produce byte-identical metrics, scores, and checkpoints.

Wall-clock time is reported on the in-memory result only; it never enters
any serialized artifact.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value, rng, zero_grads
from .data import (
    VideoSample,
    batch_iter,
    modality_dims,
    read_checkpoint,
    read_mmf,
    write_checkpoint,
)
from .errors import ConfigError, DataError
from .fusion import MeanPoolParams, ScoreTable, mean_pool_forward, softmax_scores, top_k_accuracy
from .satt import AttentionGroupConfig, SattNetParams, satt_net_forward
from .txn import TxnParams, TxnStreamConfig, txn_forward, txn_forward_batch

MODELS = ("satt", "txn", "meanpool")
OPTIMIZERS = ("sgd", "adam")


@dataclass
class TrainConfig:
    # the defaults are the reference configuration for the bundled synthetic
    # dataset: every model trains with adam at lr 0.02 on batches of 16, and
    # the convolution head keeps one pooled segment per frame (30 frames)
    model: str = "satt"
    optimizer: str = "adam"
    lr: float = 0.02
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 30
    seed: int = 42
    threads: int = 1
    satt_heads: int = 4
    satt_alpha: float = 1.0
    txn_pad_len: int = 30
    txn_segments: int = 30
    txn_kernel: int = 3
    txn_channels: int = 64
    txn_blocks: int = 1

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}, expected one of {MODELS}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}, expected one of {OPTIMIZERS}")
        if self.lr < 0.0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0.0:
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


@dataclass
class SgdMomentum:
    """Classical momentum: v <- m*v + g; p <- p - lr*v."""

    lr: float
    momentum: float = 0.9
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, named_params: list[tuple[str, Value]]) -> None:
        for name, p in named_params:
            vel = self.velocity.get(name)
            if vel is None:
                vel = np.zeros_like(p.data)
                self.velocity[name] = vel
            vel *= self.momentum
            vel += p.grad
            p.data -= self.lr * vel


@dataclass
class Adam:
    """Adam with bias correction."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, named_params: list[tuple[str, Value]]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in named_params:
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m[...] = self.beta1 * m + (1.0 - self.beta1) * p.grad
            v[...] = self.beta2 * v + (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SgdMomentum(lr=cfg.lr, momentum=cfg.momentum)
    return Adam(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)


# ---------------------------------------------------------------------------
# model dispatch
# ---------------------------------------------------------------------------


def model_kwargs(cfg: TrainConfig) -> dict:
    """The architecture knobs that must survive a checkpoint round trip."""
    if cfg.model == "satt":
        return {"num_heads": cfg.satt_heads, "alpha": cfg.satt_alpha}
    if cfg.model == "txn":
        return {"pad_len": cfg.txn_pad_len, "num_segments": cfg.txn_segments,
                "kernel_size": cfg.txn_kernel, "block_channels": cfg.txn_channels,
                "num_blocks": cfg.txn_blocks}
    return {}


def build_model(model: str, modalities: list[tuple[str, int]], num_classes: int,
                kwargs: dict, gen: np.random.Generator):
    if model == "satt":
        configs = [AttentionGroupConfig(modality=m, feature_dim=d,
                                        num_heads=int(kwargs["num_heads"]),
                                        alpha=float(kwargs["alpha"]))
                   for m, d in modalities]
        return SattNetParams.init(configs, num_classes, gen)
    if model == "txn":
        configs = [TxnStreamConfig(modality=m, feature_dim=d,
                                   pad_len=int(kwargs["pad_len"]),
                                   num_segments=int(kwargs["num_segments"]),
                                   kernel_size=int(kwargs["kernel_size"]),
                                   block_channels=int(kwargs["block_channels"]),
                                   num_blocks=int(kwargs["num_blocks"]))
                   for m, d in modalities]
        return TxnParams.init(configs, num_classes, gen)
    if model == "meanpool":
        return MeanPoolParams.init(modalities, num_classes, gen)
    raise ConfigError(f"unknown model {model!r}")


def model_forward(model: str, params, sequences: dict[str, Value], mode: str) -> Value:
    if model == "satt":
        return satt_net_forward(params, sequences)
    if model == "txn":
        return txn_forward(params, sequences, mode=mode)
    if model == "meanpool":
        return mean_pool_forward(params, sequences)
    raise ConfigError(f"unknown model {model!r}")


def batch_logits(model: str, params, batch: list[VideoSample], mode: str) -> Value:
    """Logits [B x K]; txn runs batched so BN statistics span the batch."""
    seqs = [{m: Value(f) for m, f in s.by_modality().items()} for s in batch]
    if model == "txn":
        return txn_forward_batch(params, seqs, mode)
    return ad.stack_rows([model_forward(model, params, s, mode) for s in seqs])


def snapshot_arrays(params) -> dict[str, np.ndarray]:
    arrays = {name: v.data.copy() for name, v in params.parameters()}
    if hasattr(params, "buffers"):
        arrays.update({name: buf.copy() for name, buf in params.buffers()})
    return arrays


def restore_arrays(params, arrays: dict[str, np.ndarray]) -> None:
    expected = [name for name, _ in params.parameters()]
    if hasattr(params, "buffers"):
        expected += [name for name, _ in params.buffers()]
    missing = [n for n in expected if n not in arrays]
    extra = [n for n in arrays if n not in expected]
    if missing or extra:
        raise DataError(f"checkpoint arrays mismatch: missing={missing} extra={extra}")
    targets = dict(params.parameters())
    for name, v in targets.items():
        if arrays[name].shape != v.data.shape:
            raise DataError(f"array {name!r} shape {arrays[name].shape}, "
                            f"expected {v.data.shape}")
        v.data[...] = arrays[name]
    if hasattr(params, "buffers"):
        for name, buf in params.buffers():
            if arrays[name].shape != buf.shape:
                raise DataError(f"buffer {name!r} shape {arrays[name].shape}, "
                                f"expected {buf.shape}")
            buf[...] = arrays[name]


def save_model(path, model: str, params, kwargs: dict, meta_extra: dict | None = None) -> None:
    meta = {"model": model,
            "num_classes": params.num_classes,
            "modalities": _model_modalities(model, params),
            "model_kwargs": kwargs}
    if meta_extra:
        meta.update(meta_extra)
    write_checkpoint(path, snapshot_arrays(params), meta)


def load_model(path):
    """Rebuild (model_name, params, meta) from a checkpoint file."""
    arrays, meta = read_checkpoint(path)
    for key in ("model", "num_classes", "modalities", "model_kwargs"):
        if key not in meta:
            raise DataError(f"checkpoint metadata missing {key!r}")
    model = meta["model"]
    if model not in MODELS:
        raise DataError(f"checkpoint names unknown model {model!r}")
    modalities = [(str(m), int(d)) for m, d in meta["modalities"]]
    params = build_model(model, modalities, int(meta["num_classes"]),
                         meta["model_kwargs"], rng(0))
    restore_arrays(params, arrays)
    return model, params, meta


def _model_modalities(model: str, params) -> list[list]:
    if model == "satt":
        return [[g.config.modality, g.config.feature_dim] for g in params.groups]
    if model == "txn":
        return [[s.config.modality, s.config.feature_dim] for s in params.streams]
    return [[m, d] for m, d in params.modalities]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(model: str, params, samples: list[VideoSample], threads: int = 1) -> ScoreTable:
    """Score every sample in infer mode; threading never changes the bytes.

    Workers score disjoint samples against read-only parameters and results
    are gathered in dataset order, so the table is identical for any thread
    count.
    """
    if not samples:
        raise DataError("nothing to evaluate")

    def score(sample: VideoSample) -> np.ndarray:
        seqs = {m: Value(f) for m, f in sample.by_modality().items()}
        logits = model_forward(model, params, seqs, mode="infer")
        return softmax_scores(logits.data)

    if threads <= 1:
        probs = [score(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            probs = list(pool.map(score, samples))
    table = ScoreTable(num_classes=params.num_classes)
    for s, p in zip(samples, probs):
        table.add(s.video_id, p)
    return table


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_top1: float
    val_top5: float


@dataclass
class MetricsReport:
    model: str
    num_classes: int
    epochs: list[EpochMetrics]
    best_epoch: int
    best_top1: float
    best_top5: float
    wall_seconds: float

    def to_text(self) -> str:
        """Serialized metrics; deliberately excludes wall-clock time."""
        lines = [f"model={self.model}",
                 f"classes={self.num_classes}",
                 f"epochs={len(self.epochs)}",
                 f"best_epoch={self.best_epoch}",
                 f"best_val_top1={self.best_top1:.9g}",
                 f"best_val_top5={self.best_top5:.9g}",
                 "epoch,train_loss,val_top1,val_top5"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.train_loss:.9g},{e.val_top1:.9g},{e.val_top5:.9g}")
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    report: MetricsReport
    best_arrays: dict[str, np.ndarray]
    best_table: ScoreTable
    params: object
    kwargs: dict


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _labels_of(samples: list[VideoSample]) -> dict[str, int]:
    return {s.video_id: s.label for s in samples}


def train(cfg: TrainConfig, train_samples: list[VideoSample],
          val_samples: list[VideoSample], progress=None) -> TrainResult:
    started = time.perf_counter()
    if not train_samples or not val_samples:
        raise DataError("train and validation splits must both be non-empty")
    dims = modality_dims(train_samples)
    for name, d in modality_dims(val_samples).items():
        if dims.get(name) != d:
            raise DataError(f"validation modality {name!r} does not match training data")
    num_classes = 1 + max(s.label for s in train_samples + val_samples)
    if num_classes < 2:
        raise DataError("need at least two classes to train a classifier")

    modalities = list(dims.items())
    kwargs = model_kwargs(cfg)
    params = build_model(cfg.model, modalities, num_classes, kwargs, rng(cfg.seed))
    named = params.parameters()
    optimizer = make_optimizer(cfg)
    val_labels = _labels_of(val_samples)
    top_k = min(5, num_classes)

    history: list[EpochMetrics] = []
    best: tuple[float, int] | None = None
    best_arrays: dict[str, np.ndarray] = {}
    best_table: ScoreTable | None = None
    for epoch in range(cfg.epochs):
        loss_sum = 0.0
        for batch in batch_iter(train_samples, cfg.batch_size, (cfg.seed, epoch)):
            zero_grads(v for _, v in named)
            logits = batch_logits(cfg.model, params, batch, "train")
            loss = ad.cross_entropy(logits, [s.label for s in batch])
            ad.backward(loss)
            optimizer.step(named)
            loss_sum += float(loss.data) * len(batch)
        train_loss = loss_sum / len(train_samples)

        table = evaluate(cfg.model, params, val_samples, threads=cfg.threads)
        top1 = top_k_accuracy(table, val_labels, 1)
        top5 = top_k_accuracy(table, val_labels, top_k)
        history.append(EpochMetrics(epoch=epoch, train_loss=train_loss,
                                    val_top1=top1, val_top5=top5))
        if progress is not None:
            progress(f"epoch {epoch}: train_loss={train_loss:.4f} "
                     f"val_top1={top1:.4f} val_top{top_k}={top5:.4f}")
        if best is None or top1 > best[0]:
            best = (top1, epoch)
            best_arrays = snapshot_arrays(params)
            best_table = table

    assert best is not None and best_table is not None
    best_epoch = best[1]
    report = MetricsReport(model=cfg.model, num_classes=num_classes, epochs=history,
                           best_epoch=best_epoch, best_top1=best[0],
                           best_top5=history[best_epoch].val_top5,
                           wall_seconds=time.perf_counter() - started)
    restore_arrays(params, best_arrays)
    return TrainResult(report=report, best_arrays=best_arrays, best_table=best_table,
                       params=params, kwargs=kwargs)


def train_from_files(cfg: TrainConfig, train_path, val_path, progress=None) -> TrainResult:
    return train(cfg, read_mmf(train_path), read_mmf(val_path), progress=progress)
