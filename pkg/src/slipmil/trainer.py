"""Supervised InfoNCE loss over class pairs and the few-shot SGD loop.

Only the prompt context is trainable. Slide features are pooled with
context-free class prompts, so they stay constant during training and are
precomputed once per bag.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import WsiBag
from .encoder import (
    DEFAULT_D_T,
    DEFAULT_D_V,
    FrozenEncoderWeights,
    PromptContext,
    encode_text_grad,
)
from .errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    LabelOutOfRangeError,
    MissingClassError,
)
from .pooling import (
    ClassPromptSet,
    DEFAULT_TOPK,
    SlideFeature,
    TissuePromptSet,
    patch_tissue_similarity,
    pool_average,
    pool_topk,
    slip_pool,
    tissue_wsi_similarity,
)

POOLING_VARIANTS = ("slip", "topk", "avg")

DEFAULT_ENCODER_SEED = 42


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for prompt training. batch_size is fixed at 1."""

    tau: float = 0.01
    learning_rate: float = 2e-4
    epochs: int = 50
    batch_size: int = 1
    shots: int | str = "all"
    seed: int = 0
    pooling: str = "slip"
    context_length: int = 4
    d_t: int = DEFAULT_D_T
    d_v: int = DEFAULT_D_V
    encoder_seed: int = DEFAULT_ENCODER_SEED
    topk_k: int = DEFAULT_TOPK
    shared_context: bool = True
    include_positive_pair: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size != 1:
            raise ValueError("batch_size is fixed at 1")
        if self.pooling not in POOLING_VARIANTS:
            raise ValueError(f"pooling must be one of {POOLING_VARIANTS}")
        if self.context_length < 0:
            raise ValueError("context_length must be >= 0")
        if self.shots != "all" and int(self.shots) < 1:
            raise ValueError("shots must be >= 1 or 'all'")

    def encoder_weights(self) -> FrozenEncoderWeights:
        return FrozenEncoderWeights.create(
            self.encoder_seed, d_t=self.d_t, d_v=self.d_v
        )


@dataclass(frozen=True)
class TrainedPrompts:
    """Final context vectors; one shared context or one per class."""

    contexts: tuple
    shared: bool = True

    def __post_init__(self):
        object.__setattr__(self, "contexts", tuple(self.contexts))

    def for_class(self, c: int) -> PromptContext:
        return self.contexts[0] if self.shared else self.contexts[c]

    def as_list(self, num_classes: int):
        if self.shared:
            return [self.contexts[0]] * num_classes
        return list(self.contexts)


@dataclass
class TrainHistory:
    """Per-step (epoch, bag index, loss) records and the final prompts."""

    records: list = field(default_factory=list)
    final_prompts: TrainedPrompts | None = None


def infonce_loss(f_wsi: SlideFeature, classes: ClassPromptSet, label: int,
                 tau: float, include_positive: bool = True) -> float:
    """Negative log-probability of the diagonal (label, label) pair among
    all C x C (feature column, class prompt) pairs."""
    z = _pair_logits(f_wsi, classes)
    c = _check_label(label, classes.size)
    zs = z / tau
    m = zs.max()
    e = np.exp(zs - m)
    if not include_positive:
        e[c, c] = 0.0
    return float(-(zs[c, c] - m) + np.log(e.sum()))


def infonce_grad(f_wsi: SlideFeature, classes: ClassPromptSet, label: int,
                 tau: float, prompts: TrainedPrompts,
                 weights: FrozenEncoderWeights,
                 include_positive: bool = True):
    """Gradient of infonce_loss w.r.t. the prompt context vectors.

    The slide feature is treated as constant; the chain runs through each
    class-prompt embedding into the context. Returns an M x d_t matrix for
    a shared context, or a list of per-class matrices otherwise.
    """
    z = _pair_logits(f_wsi, classes)
    c = _check_label(label, classes.size)
    zs = z / tau
    m = zs.max()
    e = np.exp(zs - m)
    if not include_positive:
        e[c, c] = 0.0
    p = e / e.sum()
    dz = p.copy()
    dz[c, c] -= 1.0
    dz /= tau
    g_text = f_wsi.columns @ dz  # d_v x C: upstream per class embedding
    per_class = prompts.as_list(classes.size)
    grads = [
        encode_text_grad(weights, classes.class_names[j], g_text[:, j],
                         per_class[j])
        for j in range(classes.size)
    ]
    if prompts.shared:
        return np.sum(grads, axis=0)
    return grads


def pooled_feature(bag: WsiBag, tissues: TissuePromptSet,
                   frozen_classes: ClassPromptSet, cfg: TrainConfig,
                   s_wsi=None) -> SlideFeature:
    """Slide feature for one bag under the configured pooling variant."""
    if cfg.pooling == "slip":
        if s_wsi is None:
            s_wsi = tissue_wsi_similarity(frozen_classes, tissues, cfg.tau)
        s_patch = patch_tissue_similarity(bag, tissues, cfg.tau)
        return slip_pool(bag, s_patch, s_wsi)
    if cfg.pooling == "topk":
        k = min(cfg.topk_k, bag.num_patches)
        return pool_topk(bag, frozen_classes, k)
    # avg: one vector replicated per class column
    v = pool_average(bag)
    return SlideFeature(np.tile(v[:, None], (1, frozen_classes.size)))


def train_prompts(dataset, tissue_descriptions, class_names,
                  cfg: TrainConfig,
                  weights: FrozenEncoderWeights | None = None):
    """Plain SGD over the prompt context, batch size one.

    Returns (TrainedPrompts, TrainHistory); deterministic given cfg.seed.
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyDatasetError("training dataset is empty")
    class_names = list(class_names)
    num_classes = len(class_names)
    if num_classes < 2:
        raise MissingClassError("training requires at least 2 classes")
    present = {bag.label for bag in dataset}
    missing = sorted(set(range(num_classes)) - present)
    if missing:
        raise MissingClassError(f"no training bag for classes {missing}")
    for bag in dataset:
        _check_label(bag.label, num_classes)

    if weights is None:
        weights = cfg.encoder_weights()
    rng = np.random.default_rng(cfg.seed)
    n_ctx = 1 if cfg.shared_context else num_classes
    contexts = [
        PromptContext.init(rng, cfg.context_length, weights.d_t,
                           shared=cfg.shared_context)
        for _ in range(n_ctx)
    ]

    tissues = TissuePromptSet.from_descriptions(weights, tissue_descriptions)
    frozen_classes = ClassPromptSet.from_names(weights, class_names)
    s_wsi = tissue_wsi_similarity(frozen_classes, tissues, cfg.tau)
    features = [
        pooled_feature(bag, tissues, frozen_classes, cfg, s_wsi=s_wsi)
        for bag in dataset
    ]

    history = TrainHistory()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        for idx in order:
            idx = int(idx)
            bag = dataset[idx]
            prompts = TrainedPrompts(contexts, shared=cfg.shared_context)
            classes = ClassPromptSet.from_names(
                weights, class_names, prompts.as_list(num_classes)
            )
            loss = infonce_loss(features[idx], classes, bag.label, cfg.tau,
                                cfg.include_positive_pair)
            grad = infonce_grad(features[idx], classes, bag.label, cfg.tau,
                                prompts, weights, cfg.include_positive_pair)
            if cfg.shared_context:
                contexts = [PromptContext(
                    contexts[0].vectors - cfg.learning_rate * grad,
                    shared_across_classes=True,
                )]
            else:
                contexts = [
                    PromptContext(ctx.vectors - cfg.learning_rate * g,
                                  shared_across_classes=False)
                    for ctx, g in zip(contexts, grad)
                ]
            history.records.append((epoch, idx, loss))

    final = TrainedPrompts(contexts, shared=cfg.shared_context)
    history.final_prompts = final
    return final, history


def _pair_logits(f_wsi: SlideFeature, classes: ClassPromptSet) -> np.ndarray:
    if f_wsi.num_classes != classes.size:
        raise DimensionMismatchError(
            f"{f_wsi.num_classes} feature columns vs {classes.size} classes"
        )
    return f_wsi.columns.T @ classes.embeddings.data.T  # z[i, j]


def _check_label(label: int, num_classes: int) -> int:
    label = int(label)
    if not 0 <= label < num_classes:
        raise LabelOutOfRangeError(f"label {label} outside [0, {num_classes})")
    return label
