"""Asymmetric contrastive loss, IoU-supervised regression loss, and their sum.

All contrastive inputs are expected to be L2-normalised rows.  In the
asymmetric loss the auxiliary captions contribute only their sentences, and
only as extra negatives for moment anchors; auxiliary moments never enter it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import LossWeights
from .errors import ContractError

PROB_EPS = 1e-7


@dataclass
class ContrastiveBatch:
    gt_moments: ad.Variable
    gt_sentences: ad.Variable
    aux_sentences: ad.Variable | None = None
    aux_owner: np.ndarray | None = None
    # only read by the ablation variants that break the asymmetry
    aux_moments: ad.Variable | None = None

    def __post_init__(self):
        if self.gt_moments.shape[0] != self.gt_sentences.shape[0]:
            raise ContractError("one ground-truth sentence per ground-truth moment is required")
        if self.n_pairs == 0:
            raise ContractError("the batch has no positive pairs")
        if self.aux_sentences is not None and self.aux_sentences.shape[0] == 0:
            self.aux_sentences = None
        if self.aux_sentences is not None and self.aux_owner is not None \
                and len(self.aux_owner) != self.aux_sentences.shape[0]:
            raise ContractError("every auxiliary sentence needs an owning sample")

    @property
    def n_pairs(self) -> int:
        return self.gt_moments.shape[0]


def info_nce(anchors: ad.Variable, candidates: ad.Variable, tau: float) -> ad.Variable:
    """Mean over anchors of -log softmax(anchor . candidates / tau)[own index].

    Anchor ``i`` is positive with candidate ``i``; every other candidate is a negative.
    """
    n = anchors.shape[0]
    if n == 0:
        raise ContractError("no anchors")
    logp = ad.log_softmax_rows(ad.scale(anchors @ ad.transpose(candidates), 1.0 / tau))
    pick = np.zeros(logp.shape)
    pick[np.arange(n), np.arange(n)] = 1.0
    return ad.scale(ad.sum_all(ad.mul(logp, pick)), -1.0 / n)


def accl_v2s(batch: ContrastiveBatch, tau_v: float) -> ad.Variable:
    cands = batch.gt_sentences
    if batch.aux_sentences is not None:
        cands = ad.concat_rows([batch.gt_sentences, batch.aux_sentences])
    return info_nce(batch.gt_moments, cands, tau_v)


def accl_s2v(batch: ContrastiveBatch, tau_s: float) -> ad.Variable:
    return info_nce(batch.gt_sentences, batch.gt_moments, tau_s)


def _variant_terms(batch: ContrastiveBatch, weights: LossWeights, mode: str):
    has_aux = batch.aux_sentences is not None and batch.aux_moments is not None
    g_v, g_s = batch.gt_moments, batch.gt_sentences
    if mode == "accl":
        return (lambda: accl_v2s(batch, weights.tau_v)), (lambda: accl_s2v(batch, weights.tau_s))
    if mode == "vanilla" or not has_aux:
        return (lambda: info_nce(g_v, g_s, weights.tau_v)), (lambda: info_nce(g_s, g_v, weights.tau_s))
    all_v = lambda: ad.concat_rows([g_v, batch.aux_moments])  # noqa: E731
    all_s = lambda: ad.concat_rows([g_s, batch.aux_sentences])  # noqa: E731
    if mode == "no_apn":
        # auxiliary pairs become positives as well
        return (lambda: info_nce(all_v(), all_s(), weights.tau_v)), (lambda: info_nce(all_s(), all_v(), weights.tau_s))
    if mode == "no_andm":
        # query sentences are also pushed away from auxiliary moments
        return (lambda: accl_v2s(batch, weights.tau_v)), (lambda: info_nce(g_s, all_v(), weights.tau_s))
    raise ContractError(f"unknown contrastive mode {mode!r}")


def accl(batch: ContrastiveBatch, weights: LossWeights, mode: str = "accl") -> ad.Variable:
    """Weighted sum of both matching directions; zero-weight terms are left out of the graph."""
    v2s, s2v = _variant_terms(batch, weights, mode)
    terms = []
    if weights.lambda_v:
        terms.append(ad.scale(v2s(), weights.lambda_v))
    if weights.lambda_s:
        terms.append(ad.scale(s2v(), weights.lambda_s))
    return _sum(terms)


def regression_loss(pred: ad.Variable, labels, valid=None) -> ad.Variable:
    """Binary cross-entropy against IoU labels, averaged over the valid cells.

    ``pred`` and ``labels`` are aligned; ``valid`` (boolean) selects the cells
    that count.  Predictions are clamped to [1e-7, 1 - 1e-7].
    """
    y = np.asarray(labels, dtype=np.float64).reshape(pred.shape)
    if valid is not None:
        keep = np.flatnonzero(np.asarray(valid, dtype=bool).reshape(-1))
        pred = ad.gather_rows(ad.reshape(pred, (-1, 1)), keep)
        y = y.reshape(-1, 1)[keep]
    n = y.size
    if n == 0:
        raise ContractError("no valid cells")
    p = ad.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    ll = ad.mul(ad.log(p), y) + ad.mul(ad.log(ad.sub(1.0, p)), 1.0 - y)
    return ad.scale(ad.sum_all(ll), -1.0 / n)


def total_loss(l_c: ad.Variable | None, l_r: ad.Variable | None, weights: LossWeights) -> ad.Variable:
    terms = []
    if weights.lambda_c and l_c is not None:
        terms.append(ad.scale(l_c, weights.lambda_c))
    if weights.lambda_r and l_r is not None:
        terms.append(ad.scale(l_r, weights.lambda_r))
    return _sum(terms)


def _sum(terms: list[ad.Variable]) -> ad.Variable:
    if not terms:
        return ad.Variable([[0.0]])
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out
