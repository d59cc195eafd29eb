"""Attention pooling head over frame-feature sequences.

One head scores every frame with a learned vector, turns the sharpened
scores into attention weights, takes the weighted sum of frames, then
shifts and rescales it with two learned scalars before unit-normalizing:

    weights = softmax(alpha * X w),   head(X) = (weights X * a + b) / ||.||_2

The scalar shift b spreads over every channel; normalization makes the
head's output scale-free so heads can be concatenated safely.  A modality
group runs several heads over the same sequence and unit-normalizes their
concatenation; the network concatenates all groups and applies an affine
classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .errors import ConfigError, ShapeError


@dataclass
class SattHeadParams:
    """One attention head: scoring vector w [D], scale a, shift b."""

    w: Value
    a: Value
    b: Value

    @classmethod
    def init(cls, feature_dim: int, gen: np.random.Generator) -> "SattHeadParams":
        w = gen.normal(scale=1.0 / np.sqrt(feature_dim), size=feature_dim)
        return cls(w=Value(w, requires_grad=True),
                   a=Value(1.0, requires_grad=True),
                   b=Value(0.0, requires_grad=True))

    def parameters(self) -> list[Value]:
        return [self.w, self.a, self.b]


def satt_head_forward(params: SattHeadParams, x: Value, alpha: float) -> Value:
    """Attention-pool one sequence x [T x D] to a unit vector [D]."""
    if x.data.ndim != 2:
        raise ShapeError("satt head expects a rank-2 sequence [T x D]")
    if x.data.shape[1] != params.w.data.shape[0]:
        raise ShapeError(
            f"sequence dim {x.data.shape[1]} does not match head dim {params.w.data.shape[0]}")
    weights = ad.softmax_sharp(ad.row_dot(x, params.w), alpha)
    pooled = ad.weighted_row_sum(weights, x)
    return ad.l2_normalize(ad.add(ad.mul(pooled, params.a), params.b))


@dataclass
class AttentionGroupConfig:
    """Head bank for one modality: how many heads, how sharp."""

    modality: str
    feature_dim: int
    num_heads: int = 4
    alpha: float = 1.0

    def __post_init__(self):
        if self.num_heads < 1:
            raise ConfigError(f"group {self.modality!r} needs at least one head")
        if self.feature_dim < 1:
            raise ConfigError(f"group {self.modality!r} feature_dim must be >= 1")
        if not self.alpha > 0.0:
            raise ConfigError(f"group {self.modality!r} alpha must be positive")


@dataclass
class AttentionGroupParams:
    config: AttentionGroupConfig
    heads: list[SattHeadParams] = field(default_factory=list)

    @classmethod
    def init(cls, config: AttentionGroupConfig, gen: np.random.Generator) -> "AttentionGroupParams":
        heads = [SattHeadParams.init(config.feature_dim, gen) for _ in range(config.num_heads)]
        return cls(config=config, heads=heads)

    def parameters(self) -> list[Value]:
        return [p for h in self.heads for p in h.parameters()]

    @property
    def output_dim(self) -> int:
        return self.config.num_heads * self.config.feature_dim


def attention_group_forward(params: AttentionGroupParams, x: Value) -> Value:
    """Concatenate the group's head outputs and unit-normalize the result."""
    cfg = params.config
    outs = [satt_head_forward(h, x, cfg.alpha) for h in params.heads]
    return ad.l2_normalize(ad.concat(outs, axis=0))


@dataclass
class SattNetParams:
    """Per-modality attention groups plus an affine classifier."""

    groups: list[AttentionGroupParams]
    classifier_w: Value
    classifier_b: Value
    num_classes: int

    @classmethod
    def init(cls, group_configs: list[AttentionGroupConfig], num_classes: int,
             gen: np.random.Generator) -> "SattNetParams":
        if not group_configs:
            raise ConfigError("at least one modality group is required")
        if num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
        names = [c.modality for c in group_configs]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate modality group in {names}")
        groups = [AttentionGroupParams.init(c, gen) for c in group_configs]
        rep_dim = sum(g.output_dim for g in groups)
        w = gen.normal(scale=np.sqrt(2.0 / rep_dim), size=(rep_dim, num_classes))
        return cls(groups=groups,
                   classifier_w=Value(w, requires_grad=True),
                   classifier_b=Value(np.zeros(num_classes), requires_grad=True),
                   num_classes=num_classes)

    def parameters(self) -> list[tuple[str, Value]]:
        named: list[tuple[str, Value]] = []
        for g in self.groups:
            for i, h in enumerate(g.heads):
                base = f"group.{g.config.modality}.head{i}"
                named += [(f"{base}.w", h.w), (f"{base}.a", h.a), (f"{base}.b", h.b)]
        named += [("classifier.w", self.classifier_w), ("classifier.b", self.classifier_b)]
        return named


def satt_net_forward(params: SattNetParams, sequences: dict[str, Value]) -> Value:
    """Logits [K] for one video given its per-modality sequences [T x D]."""
    reps = []
    for g in params.groups:
        name = g.config.modality
        if name not in sequences:
            raise ShapeError(f"missing sequence for modality {name!r}")
        reps.append(attention_group_forward(g, sequences[name]))
    return ad.affine(ad.concat(reps, axis=0), params.classifier_w, params.classifier_b)
