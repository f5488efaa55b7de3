"""Training objectives.

Two ingredients: a classification loss averaging cross entropy over the
direct target path classifier(encode_dst(x_dst)) and the translated source
path classifier(to_dst(encode_src(x_src))), and a label-free bidirectional
contrastive loss that scores each window's translated representation
against the whole batch in time-pooled cosine space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .models import ModelBundle, time_pool

LOG_CLAMP = 1e-12


@dataclass
class Batch:
    """Time-aligned window pairs: every src row covers the same interval as
    the dst row with the same index."""
    x_src: Tensor       # (N, c_src, n_w)
    x_dst: Tensor       # (N, c_dst, n_w)
    labels: np.ndarray  # (N,) int class ids

    @property
    def size(self) -> int:
        return self.x_dst.shape[0]


@dataclass
class LossTerms:
    l_cl: float
    l_co: float
    lam: float

    @property
    def total(self) -> float:
        return self.l_cl + self.lam * self.l_co


def cross_entropy(probs: Tensor, onehot: np.ndarray) -> Tensor:
    """-log(probs[true]) per row, averaged; log clamped at LOG_CLAMP."""
    p = T.maximum_const(probs, LOG_CLAMP)
    picked = (T.log(p) * Tensor(onehot.astype(probs.dtype))).sum(axis=-1)
    return -picked.mean()


def _onehot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes), dtype=np.float64)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def classification_loss(bundle: ModelBundle, batch: Batch, n_classes: int,
                        baseline_only: bool = False) -> Tensor:
    """Mean over the batch of per-path cross entropy (both paths summed).

    baseline_only computes just the direct target-path term and never
    touches the source data.
    """
    onehot = _onehot(batch.labels, n_classes)
    logits_dst = bundle.classifier(bundle.encode_dst(batch.x_dst))
    loss = cross_entropy(T.softmax(logits_dst, -1), onehot)
    if baseline_only:
        return loss
    translated = bundle.translate("s2d", bundle.encode_src(batch.x_src))
    logits_src = bundle.classifier(translated)
    return loss + cross_entropy(T.softmax(logits_src, -1), onehot)


def info_nce(x: Tensor, x_t: Tensor, candidates: Tensor, tau: float) -> Tensor:
    """Contrastive score of one anchor x against its translated positive x_t.

    -log[ exp(cos(x_t, x)/tau) / sum_p exp(cos(p, x)/tau) ] over the
    candidate rows, which include the anchor itself. Temperature goes
    inside the exponential; stabilized by max subtraction.
    """
    if candidates.ndim != 2 or candidates.shape[0] < 2:
        raise ValueError("info_nce needs at least 2 candidate vectors")
    xs = T.l2_normalize_rows(x.reshape(1, -1))
    ts = T.l2_normalize_rows(x_t.reshape(1, -1))
    cs = T.l2_normalize_rows(candidates)
    pos = (ts * xs).sum() * (1.0 / tau)
    sims = (cs @ xs.swap_last()) * (1.0 / tau)  # (N, 1)
    m = float(np.max(sims.data))
    lse = T.log(T.exp(sims - m).sum()) + m
    return lse - pos


def _directional_nce(anchors: Tensor, positives: Tensor, tau: float) -> Tensor:
    """Mean infoNCE over the batch for one direction.

    anchors: (N, D) pooled own-encoder reps (also the candidate set);
    positives: (N, D) pooled translated reps from the other modality.
    """
    a = T.l2_normalize_rows(anchors)
    p = T.l2_normalize_rows(positives)
    pos = (p * a).sum(axis=1) * (1.0 / tau)         # (N,)
    sims = (a @ a.swap_last()) * (1.0 / tau)        # (N, N); column k = anchor k
    m = Tensor(np.max(sims.data, axis=0, keepdims=True))  # constant shift, exact
    lse = T.log(T.exp(sims - m).sum(axis=0)) + m.reshape(-1)
    return (lse - pos).mean()


def contrastive_loss(bundle: ModelBundle, batch: Batch, tau: float,
                     pool_spatial: bool = False) -> Tensor:
    """Bidirectional translator-mediated alignment, no labels involved."""
    if batch.size < 2:
        raise ValueError("contrastive loss is degenerate for batches smaller than 2")
    rep_src = bundle.encode_src(batch.x_src)
    rep_dst = bundle.encode_dst(batch.x_dst)
    return _contrastive_from_reps(bundle, rep_src, rep_dst, tau, pool_spatial)


def _contrastive_from_reps(bundle, rep_src, rep_dst, tau, pool_spatial) -> Tensor:
    pooled_dst = time_pool(rep_dst, pool_spatial)
    pooled_src = time_pool(rep_src, pool_spatial)
    pooled_s2d = time_pool(bundle.translate("s2d", rep_src), pool_spatial)
    pooled_d2s = time_pool(bundle.translate("d2s", rep_dst), pool_spatial)
    fwd = _directional_nce(pooled_dst, pooled_s2d, tau)
    bwd = _directional_nce(pooled_src, pooled_d2s, tau)
    return fwd + bwd


def joint_losses(bundle: ModelBundle, batch: Batch, n_classes: int, tau: float,
                 pool_spatial: bool = False) -> tuple[Tensor, Tensor]:
    """(classification, contrastive) sharing one encoder/translator forward.

    Exactly equal in value to calling the two losses separately; used by the
    joint training mode to avoid re-encoding the batch.
    """
    if batch.size < 2:
        raise ValueError("contrastive loss is degenerate for batches smaller than 2")
    onehot = _onehot(batch.labels, n_classes)
    rep_src = bundle.encode_src(batch.x_src)
    rep_dst = bundle.encode_dst(batch.x_dst)
    translated = bundle.translate("s2d", rep_src)
    l_cl = (cross_entropy(T.softmax(bundle.classifier(rep_dst), -1), onehot)
            + cross_entropy(T.softmax(bundle.classifier(translated), -1), onehot))
    pooled_dst = time_pool(rep_dst, pool_spatial)
    pooled_src = time_pool(rep_src, pool_spatial)
    pooled_s2d = time_pool(translated, pool_spatial)
    pooled_d2s = time_pool(bundle.translate("d2s", rep_dst), pool_spatial)
    l_co = (_directional_nce(pooled_dst, pooled_s2d, tau)
            + _directional_nce(pooled_src, pooled_d2s, tau))
    return l_cl, l_co
