"""Training objectives with analytic value-and-gradient evaluation.

Two parts are blended: a hinge-style class-specific embedding (CSE) loss that
pulls each class prompt toward the captions of samples containing the class
and pushes it beyond a margin from the rest, and a per-class sigmoid
classification loss (distribution-balanced, BCE, or focal). Gradients flow
only into prompt contexts; everything else is frozen.

All class statistics (weights, margins, rebalance factors, logit biases) are
computed from full-training-split counts, never from batch counts. Reductions
sum over classes first, then average over samples in index order, so values
are bit-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import Batch, ClassStats
from .encoders import FrozenTextEncoder, PromptSet, encode_all, encode_backward
from .errors import ConfigError, NumericsError

CLS_LOSS_KINDS = ("db", "bce", "focal")


@dataclass(frozen=True)
class LossConfig:
    """Every scalar hyperparameter of the objective in one place.

    cls_loss_weight is the blend weight on the classification part; the
    embedding part gets (1 - cls_loss_weight). The three use_* toggles are the
    ablation switches: margins fall back to the flat mu_base, weights to 1.
    """

    eta: float = 1.0  # class-aware margin scale: margin_i = eta / n_i^(1/4)
    gamma_rw: float = 1.0  # re-weighting exponent on inverse frequencies
    mu_base: float = 0.2  # flat margin used when class-aware margin is off
    cls_loss_weight: float = 0.5
    db_alpha: float = 0.1
    db_beta: float = 10.0
    db_theta: float = 0.2
    db_kappa: float = 0.05
    db_zeta: float = 5.0
    gamma_focal: float = 2.0
    use_embedding_loss: bool = True
    use_class_aware_margin: bool = True
    use_reweighting: bool = True
    cls_loss_kind: str = "db"

    def __post_init__(self):
        if not 0.0 <= self.cls_loss_weight <= 1.0:
            raise ConfigError("cls_loss_weight must lie in [0, 1]")
        if self.eta < 0:
            raise ConfigError("eta must be >= 0")
        if self.gamma_rw < 0:
            raise ConfigError("gamma_rw must be >= 0")
        if self.gamma_focal < 0:
            raise ConfigError("gamma_focal must be >= 0")
        if self.mu_base < 0:
            raise ConfigError("mu_base must be >= 0")
        if self.db_zeta < 1:
            raise ConfigError("db_zeta must be >= 1")
        if self.cls_loss_kind not in CLS_LOSS_KINDS:
            raise ConfigError(f"cls_loss_kind must be one of {CLS_LOSS_KINDS}")


@dataclass(frozen=True)
class LossReport:
    """Value breakdown plus the gradient of the reported objective.

    total = cls_loss_weight * cls_part + (1 - cls_loss_weight) * cse_part for
    total_loss; single-objective operations report their value as total with
    the other part zero. gradient is shaped like PromptSet.contexts for
    total_loss/cse_loss and like the logits for the classification-only
    losses (for chaining); None when gradients were not requested.
    """

    total: float
    cls_part: float
    cse_part: float
    gradient: np.ndarray | None


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is stable for large |x| and vectorizes without branching
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _checked_counts(counts) -> np.ndarray:
    arr = np.asarray(counts, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigError("counts must be a nonempty 1-d integer vector")
    if (arr < 1).any():
        raise ConfigError("invalid count: every class needs n_i >= 1")
    return arr


def class_margin(n_i: int, eta: float) -> float:
    """Per-class soft margin eta / n_i^(1/4): rarer classes get a larger margin."""
    if n_i < 1:
        raise ConfigError("invalid count: n_i must be >= 1")
    if eta < 0:
        raise ConfigError("eta must be >= 0")
    return eta / float(n_i) ** 0.25


def class_margins(counts, eta: float) -> np.ndarray:
    arr = _checked_counts(counts)
    if eta < 0:
        raise ConfigError("eta must be >= 0")
    return eta / np.power(arr.astype(np.float64), 0.25)


def class_weights(counts, gamma_rw: float) -> np.ndarray:
    """Normalized inverse-frequency weights (1/n_i)^gamma / sum_j (1/n_j)^gamma."""
    arr = _checked_counts(counts)
    if gamma_rw < 0:
        raise ConfigError("gamma_rw must be >= 0")
    raw = np.power(1.0 / arr.astype(np.float64), gamma_rw)
    return raw / raw.sum()


def delta(caption_embedding: np.ndarray, prompt_embedding: np.ndarray) -> float:
    """Cosine distance 1 - cos between unit vectors."""
    return 1.0 - float(np.dot(caption_embedding, prompt_embedding))


def cse_term(delta_value: float, signed_label: int, weight: float, margin: float) -> float:
    """One class's contribution: positives pay weight*delta, negatives the
    hinge max(0, weight*(margin - delta))."""
    if signed_label == 1:
        return weight * delta_value
    if signed_label == -1:
        return max(0.0, weight * (margin - delta_value))
    raise ConfigError("signed_label must be -1 or +1")


def _cse_stats(counts, config: LossConfig, num_classes: int):
    if config.use_reweighting:
        weights = class_weights(counts, config.gamma_rw)
    else:
        weights = np.ones(num_classes)
    if config.use_class_aware_margin:
        margins = class_margins(counts, config.eta)
    else:
        margins = np.full(num_classes, config.mu_base)
    return weights, margins


def _cse_parts(
    captions: np.ndarray,
    labels: np.ndarray,
    embeddings: np.ndarray,
    counts,
    config: LossConfig,
    need_grad: bool,
):
    """Value and gradient w.r.t. the unit prompt embeddings."""
    weights, margins = _cse_stats(counts, config, embeddings.shape[0])
    dl = 1.0 - captions @ embeddings.T  # (B, C)
    positive = labels == 1
    hinge = weights * (margins - dl)
    terms = np.where(positive, weights * dl, np.maximum(0.0, hinge))
    value = float(terms.sum(axis=1).mean())
    if not need_grad:
        return value, None
    # d(term)/d(delta): +w for positives, -w on the active hinge side, 0 at
    # the kink (subgradient convention) and beyond it
    coef = np.where(positive, weights, np.where(hinge > 0, -weights, 0.0))
    grad_embeddings = -(coef.T @ captions) / captions.shape[0]
    return value, grad_embeddings


def cse_loss(
    batch: Batch,
    prompts: PromptSet,
    encoder: FrozenTextEncoder,
    counts,
    config: LossConfig,
    need_grad: bool = True,
) -> LossReport:
    """Class-specific embedding loss over a batch, gradient w.r.t. contexts.

    counts must come from the full training split, not the batch.
    """
    if batch.num_classes != prompts.num_classes:
        raise ConfigError("batch and prompts disagree on the number of classes")
    encoding = encode_all(encoder, prompts)
    value, grad_embeddings = _cse_parts(
        batch.captions, batch.labels, encoding.embeddings, counts, config, need_grad
    )
    gradient = None
    if need_grad:
        gradient = encode_backward(encoder, prompts, encoding, grad_embeddings)
    return LossReport(total=value, cls_part=0.0, cse_part=value, gradient=gradient)


def db_rebalance(counts, alpha: float, beta: float, theta: float) -> np.ndarray:
    """Per-class rebalance factor r = alpha + sigmoid(beta * (share - theta)),
    where share is the class's normalized inverse frequency. r lies in
    (alpha, alpha+1) and never increases with n_i."""
    arr = _checked_counts(counts)
    inv = 1.0 / arr.astype(np.float64)
    share = inv / inv.sum()
    return alpha + _sigmoid(beta * (share - theta))


def db_bias(counts, num_samples: int, kappa: float) -> np.ndarray:
    """Class-prior logit bias v_i = kappa * log(N/n_i - 1); rarer classes get a
    larger v_i, shifting their logits down before the sigmoid."""
    arr = _checked_counts(counts)
    if num_samples < 1:
        raise ConfigError("num_samples must be >= 1")
    if (arr >= num_samples).any():
        raise NumericsError(
            "infinite bias: some class is positive in every sample (n_i = N)"
        )
    return kappa * np.log(num_samples / arr.astype(np.float64) - 1.0)


def _db_parts(
    z: np.ndarray, labels: np.ndarray, counts, num_samples: int, config: LossConfig, need_grad: bool
):
    rebal = db_rebalance(counts, config.db_alpha, config.db_beta, config.db_theta)
    bias = db_bias(counts, num_samples, config.db_kappa)
    g = config.gamma_focal
    zeta = config.db_zeta
    x = z - bias
    positive = labels == 1

    # positives: -r (1-q)^g log q, q = sigmoid(x); log q = -softplus(-x)
    sp_neg_x = _softplus(-x)
    q_pos = _sigmoid(x)
    pos_terms = rebal * np.power(1.0 - q_pos, g) * sp_neg_x
    # negatives: -(r/zeta) q^g log(1-q), q = sigmoid(zeta x); log(1-q) = -softplus(zeta x)
    sp_zx = _softplus(zeta * x)
    q_neg = _sigmoid(zeta * x)
    neg_terms = (rebal / zeta) * np.power(q_neg, g) * sp_zx

    terms = np.where(positive, pos_terms, neg_terms)
    value = float(terms.sum(axis=1).mean())
    if not need_grad:
        return value, None
    log_q = -sp_neg_x
    log_1mq = -sp_zx
    grad_pos = rebal * g * q_pos * np.power(1.0 - q_pos, g) * log_q - rebal * np.power(
        1.0 - q_pos, g + 1.0
    )
    grad_neg = rebal * np.power(q_neg, g + 1.0) - rebal * g * np.power(q_neg, g) * (
        1.0 - q_neg
    ) * log_1mq
    grad_z = np.where(positive, grad_pos, grad_neg) / z.shape[0]
    return value, grad_z


def db_loss(
    z: np.ndarray,
    labels: np.ndarray,
    counts,
    num_samples: int,
    config: LossConfig,
    need_grad: bool = True,
) -> LossReport:
    """Distribution-balanced classification loss; gradient w.r.t. the logits.

    Class terms are summed and the batch mean returned.
    """
    value, grad_z = _db_parts(np.asarray(z, dtype=np.float64), labels, counts, num_samples, config, need_grad)
    return LossReport(total=value, cls_part=value, cse_part=0.0, gradient=grad_z)


def _bce_parts(z: np.ndarray, labels: np.ndarray, need_grad: bool):
    positive = labels == 1
    terms = np.where(positive, _softplus(-z), _softplus(z))
    value = float(terms.mean())
    if not need_grad:
        return value, None
    q = _sigmoid(z)
    grad_z = np.where(positive, q - 1.0, q) / terms.size
    return value, grad_z


def bce_loss(z: np.ndarray, labels: np.ndarray, need_grad: bool = True) -> LossReport:
    """Per-class sigmoid cross-entropy, mean over samples and classes."""
    value, grad_z = _bce_parts(np.asarray(z, dtype=np.float64), labels, need_grad)
    return LossReport(total=value, cls_part=value, cse_part=0.0, gradient=grad_z)


def _focal_parts(z: np.ndarray, labels: np.ndarray, gamma_focal: float, need_grad: bool):
    if gamma_focal < 0:
        raise ConfigError("gamma_focal must be >= 0")
    positive = labels == 1
    g = gamma_focal
    sp_neg = _softplus(-z)
    sp_pos = _softplus(z)
    q = _sigmoid(z)
    terms = np.where(positive, np.power(1.0 - q, g) * sp_neg, np.power(q, g) * sp_pos)
    value = float(terms.mean())
    if not need_grad:
        return value, None
    log_q = -sp_neg
    log_1mq = -sp_pos
    grad_pos = g * q * np.power(1.0 - q, g) * log_q - np.power(1.0 - q, g + 1.0)
    grad_neg = np.power(q, g + 1.0) - g * np.power(q, g) * (1.0 - q) * log_1mq
    grad_z = np.where(positive, grad_pos, grad_neg) / terms.size
    return value, grad_z


def focal_loss(
    z: np.ndarray, labels: np.ndarray, gamma_focal: float, need_grad: bool = True
) -> LossReport:
    """Focal-modulated sigmoid cross-entropy; gamma_focal = 0 recovers bce_loss."""
    value, grad_z = _focal_parts(np.asarray(z, dtype=np.float64), labels, gamma_focal, need_grad)
    return LossReport(total=value, cls_part=value, cse_part=0.0, gradient=grad_z)


def _cls_parts(
    z: np.ndarray, labels: np.ndarray, stats: ClassStats, config: LossConfig, need_grad: bool
):
    if config.cls_loss_kind == "db":
        return _db_parts(z, labels, stats.counts, stats.num_samples, config, need_grad)
    if config.cls_loss_kind == "bce":
        return _bce_parts(z, labels, need_grad)
    return _focal_parts(z, labels, config.gamma_focal, need_grad)


def cls_loss_on_logits(
    z: np.ndarray,
    labels: np.ndarray,
    stats: ClassStats,
    config: LossConfig,
    need_grad: bool = True,
) -> LossReport:
    """The configured classification loss applied to raw logits; used by
    heads that are not prompts (e.g. the linear probe)."""
    value, grad_z = _cls_parts(np.asarray(z, dtype=np.float64), labels, stats, config, need_grad)
    return LossReport(total=value, cls_part=value, cse_part=0.0, gradient=grad_z)


def total_loss(
    batch: Batch,
    prompts: PromptSet,
    encoder: FrozenTextEncoder,
    stats: ClassStats,
    config: LossConfig,
    tau: float = 1.0,
    need_grad: bool = True,
) -> LossReport:
    """Blended objective: cls_loss_weight * L_cls + (1 - cls_loss_weight) * L_cse.

    At the endpoints the disabled part is skipped entirely, so the total
    reproduces the pure loss bit-exactly. The gradient (same convex
    combination) is returned in PromptSet.contexts layout.
    """
    if tau <= 0:
        raise ConfigError("temperature must be > 0")
    lam = config.cls_loss_weight
    compute_cls = lam > 0.0
    compute_cse = config.use_embedding_loss and lam < 1.0

    encoding = encode_all(encoder, prompts)
    cls_value = 0.0
    cse_value = 0.0
    grad_z = None
    grad_embeddings_cse = None
    if compute_cls:
        z = batch.images @ encoding.embeddings.T / tau
        cls_value, grad_z = _cls_parts(z, batch.labels, stats, config, need_grad)
    if compute_cse:
        cse_value, grad_embeddings_cse = _cse_parts(
            batch.captions, batch.labels, encoding.embeddings, stats.counts, config, need_grad
        )

    total = lam * cls_value + (1.0 - lam) * cse_value
    if not need_grad:
        return LossReport(total=total, cls_part=cls_value, cse_part=cse_value, gradient=None)

    grad_embeddings = np.zeros_like(encoding.embeddings)
    if compute_cls:
        grad_embeddings += lam * (grad_z.T @ batch.images) / tau
    if compute_cse:
        grad_embeddings += (1.0 - lam) * grad_embeddings_cse
    gradient = encode_backward(encoder, prompts, encoding, grad_embeddings)
    return LossReport(total=total, cls_part=cls_value, cse_part=cse_value, gradient=gradient)


def hinge_kink_mask(
    batch: Batch,
    prompts: PromptSet,
    encoder: FrozenTextEncoder,
    stats: ClassStats,
    config: LossConfig,
    guard: float = 1e-6,
) -> np.ndarray:
    """Boolean mask (contexts layout) of coordinates whose loss sits within
    guard of a hinge kink, where finite differences are meaningless.

    A context coordinate of class i is near a kink when any negative-label
    hinge argument w_i*(margin_i - delta) of that class lies within guard of
    zero; in shared mode every coordinate feeds every class.
    """
    mask = np.zeros(prompts.contexts.shape, dtype=bool)
    if not config.use_embedding_loss or config.cls_loss_weight >= 1.0:
        return mask
    encoding = encode_all(encoder, prompts)
    weights, margins = _cse_stats(stats.counts, config, prompts.num_classes)
    dl = 1.0 - batch.captions @ encoding.embeddings.T
    hinge = weights * (margins - dl)
    near = (np.abs(hinge) < guard) & (batch.labels == 0)
    per_class = near.any(axis=0)  # (C,)
    if prompts.mode == "shared":
        mask[:] = per_class.any()
        return mask
    mask[per_class, :, :] = True
    return mask


def mean_positive_delta(batch: Batch, prompts: PromptSet, encoder: FrozenTextEncoder) -> float:
    """Mean cosine distance between captions and the prompt embeddings of
    their positive classes; the caption-alignment diagnostic."""
    encoding = encode_all(encoder, prompts)
    dl = 1.0 - batch.captions @ encoding.embeddings.T
    positive = batch.labels == 1
    if not positive.any():
        raise ConfigError("batch has no positive labels")
    return float(dl[positive].mean())
