"""Training objectives: the three-level hierarchical classification loss and the
dual-supervision segmentation loss.

The classification loss is a weighted sum of cross-entropies at tract, category
and finding level, where coarse-level probabilities are aggregates of the leaf
softmax. Default weights are log(n_level), the cross-entropy of a uniform
predictor at each level. Coarse terms are evaluated in log-space (logsumexp over
group members), never through explicit probabilities.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .hierarchy import LabelHierarchy


@dataclass(frozen=True)
class HierLossWeights:
    w_tract: float
    w_cat: float
    w_find: float

    @classmethod
    def from_hierarchy(cls, h: LabelHierarchy):
        return cls(math.log(h.n_tract), math.log(h.n_cat), math.log(h.n_find))

    def scaled(self, factor):
        return HierLossWeights(self.w_tract * factor, self.w_cat * factor, self.w_find * factor)


@dataclass(frozen=True)
class HierTarget:
    y_find: int
    y_cat: int
    y_tract: int

    @classmethod
    def from_finding(cls, finding_idx, h: LabelHierarchy):
        return cls(
            y_find=finding_idx,
            y_cat=h.finding_to_category[finding_idx],
            y_tract=h.finding_to_tract[finding_idx],
        )

    def validate(self, h: LabelHierarchy):
        if not 0 <= self.y_find < h.n_find:
            raise ValueError(f"finding index {self.y_find} out of range")
        if self.y_cat != h.finding_to_category[self.y_find]:
            raise ValueError(
                f"target category {self.y_cat} is not the parent of finding {self.y_find}"
            )
        if self.y_tract != h.finding_to_tract[self.y_find]:
            raise ValueError(
                f"target tract {self.y_tract} is not the parent of finding {self.y_find}"
            )


def _group_log_prob(log_p, members):
    # logsumexp of already-normalized leaf log-probabilities over one group
    return torch.logsumexp(log_p[..., list(members)], dim=-1)


def hier_loss(z, target: HierTarget, w: HierLossWeights, h: LabelHierarchy,
              per_tract_categories=True):
    """Hierarchical loss for a single logit vector of length n_find.

    per_tract_categories selects whether the category-level target group is the
    (tract, category) cell of the true finding (default) or the global category.
    """
    z = torch.as_tensor(z)
    if z.shape != (h.n_find,):
        raise ValueError(f"expected logits of shape ({h.n_find},), got {tuple(z.shape)}")
    if not torch.isfinite(z).all():
        raise ValueError("logits must be finite")
    target.validate(h)

    log_p = F.log_softmax(z, dim=-1)

    tract_map = h.tract_map()
    cat_map = h.category_map(per_tract=per_tract_categories)
    if per_tract_categories:
        cells = h._maps["category-cells"]
        y_cat_group = cells.index((target.y_tract, target.y_cat))
    else:
        y_cat_group = target.y_cat

    ce_tract = -_group_log_prob(log_p, tract_map.membership[target.y_tract])
    ce_cat = -_group_log_prob(log_p, cat_map.membership[y_cat_group])
    ce_find = -log_p[target.y_find]
    return w.w_tract * ce_tract + w.w_cat * ce_cat + w.w_find * ce_find


def hier_loss_batch(Z, targets, w: HierLossWeights, h: LabelHierarchy,
                    per_tract_categories=True):
    """Mean hierarchical loss over a batch of logit vectors (B, n_find)."""
    Z = torch.as_tensor(Z)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise ValueError("batch must be a nonempty (B, n_find) tensor")
    if len(targets) != Z.shape[0]:
        raise ValueError("batch size mismatch between logits and targets")
    if not torch.isfinite(Z).all():
        raise ValueError("logits must be finite")
    for t in targets:
        t.validate(h)

    log_p = F.log_softmax(Z, dim=-1)
    tract_map = h.tract_map()
    cat_map = h.category_map(per_tract=per_tract_categories)
    cells = h._maps["category-cells"]

    rows = torch.arange(Z.shape[0])
    y_find = torch.tensor([t.y_find for t in targets])
    ce_find = -log_p[rows, y_find]

    # coarse log-probs for all groups, then pick each sample's true group
    tract_lp = torch.stack(
        [_group_log_prob(log_p, m) for m in tract_map.membership], dim=-1
    )
    cat_lp = torch.stack(
        [_group_log_prob(log_p, m) for m in cat_map.membership], dim=-1
    )
    y_tract = torch.tensor([t.y_tract for t in targets])
    if per_tract_categories:
        y_cat = torch.tensor([cells.index((t.y_tract, t.y_cat)) for t in targets])
    else:
        y_cat = torch.tensor([t.y_cat for t in targets])

    loss = (
        w.w_tract * -tract_lp[rows, y_tract]
        + w.w_cat * -cat_lp[rows, y_cat]
        + w.w_find * ce_find
    )
    return loss.mean()


def seg_loss(logits_1, logits_2, mask):
    """Dual-supervision segmentation loss: mean BCE of each head, summed."""
    logits_1 = torch.as_tensor(logits_1)
    logits_2 = torch.as_tensor(logits_2)
    mask = torch.as_tensor(mask)
    if logits_1.shape != logits_2.shape or logits_1.shape != mask.shape:
        raise ValueError(
            f"shape mismatch: {tuple(logits_1.shape)} vs {tuple(logits_2.shape)} "
            f"vs mask {tuple(mask.shape)}"
        )
    uniq = torch.unique(mask)
    if not torch.all((uniq == 0) | (uniq == 1)):
        raise ValueError("mask must be binary")
    m = mask.to(logits_1.dtype)
    return (
        F.binary_cross_entropy_with_logits(logits_1, m)
        + F.binary_cross_entropy_with_logits(logits_2, m)
    )
