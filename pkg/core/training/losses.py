"""
Separation objectives
Per-cell BCE mask loss, the lambda-weighted two-branch separation loss,
the cross-branch triplet term and their total
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import torch
import torch.nn.functional as F

from config.settings import LossConfig
from core.exceptions import ShapeError

logger = logging.getLogger(__name__)

@dataclass
class LossBreakdown:
    """Scalar tensors of one objective evaluation"""

    separation: torch.Tensor
    triplet: torch.Tensor
    vis_mask_loss: torch.Tensor
    scn_mask_loss: torch.Tensor

    @property
    def total(self) -> torch.Tensor:
        return self.separation + self.triplet

    def as_floats(self) -> Dict[str, float]:
        return {
            "L_ss": float(self.separation.detach()),
            "L_triplet": float(self.triplet.detach()),
            "L_total": float(self.total.detach()),
            "vis_mask_loss": float(self.vis_mask_loss.detach()),
            "scn_mask_loss": float(self.scn_mask_loss.detach()),
        }


def mask_loss(gt: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    """Mean per-cell binary cross-entropy of pre-sigmoid mask logits"""
    if gt.shape != logits.shape:
        raise ShapeError(f"mask shapes differ: {tuple(gt.shape)} vs {tuple(logits.shape)}")
    return F.binary_cross_entropy_with_logits(logits, gt.to(logits.dtype))


def mask_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean squared difference between two mask grids"""
    return torch.mean((a - b) ** 2)


def _check_lengths(*groups: Sequence) -> None:
    lengths = {len(group) for group in groups}
    if len(lengths) != 1:
        raise ShapeError(f"per-source lists differ in length: {sorted(lengths)}")


def weighted_separation_sum(vis_losses: Sequence[torch.Tensor], scn_losses: Sequence[torch.Tensor],
                            lam: float) -> torch.Tensor:
    """sum_i lam * vis_i + (2 - lam) * scn_i"""
    _check_lengths(vis_losses, scn_losses)
    if not vis_losses:
        return torch.tensor(0.0)
    return lam * torch.stack(list(vis_losses)).sum() + (2.0 - lam) * torch.stack(list(scn_losses)).sum()


def separation_loss(gt_masks: Sequence[torch.Tensor], vis_logits: Sequence[torch.Tensor],
                    scn_logits: Sequence[torch.Tensor], cfg: LossConfig) -> torch.Tensor:
    """Weighted sum over every source of every mixture in the batch"""
    _check_lengths(gt_masks, vis_logits, scn_logits)
    vis = [mask_loss(gt, logits) for gt, logits in zip(gt_masks, vis_logits)]
    scn = [mask_loss(gt, logits) for gt, logits in zip(gt_masks, scn_logits)]
    return weighted_separation_sum(vis, scn, cfg.lam)


def triplet_loss(gt_masks: Sequence[torch.Tensor], vis_masks: Sequence[torch.Tensor],
                 scn_masks: Sequence[torch.Tensor], cfg: LossConfig) -> torch.Tensor:
    """
    Cross-branch triplet term for the sources of ONE mixture.

    Anchor gt_i, positive vis_i (scn_i), negative the mean distance to scn_j
    (vis_j) over j != i.
    """
    _check_lengths(gt_masks, vis_masks, scn_masks)
    m = len(gt_masks)
    if m < 2:
        logger.warning("⚠️ Triplet term needs at least two sources per mixture; using 0")
        return torch.tensor(0.0)
    if cfg.eta == 0.0:
        return torch.zeros((), dtype=vis_masks[0].dtype)

    terms: List[torch.Tensor] = []
    for i in range(m):
        others = [j for j in range(m) if j != i]
        neg_scn = torch.stack([mask_distance(gt_masks[i], scn_masks[j]) for j in others]).mean()
        neg_vis = torch.stack([mask_distance(gt_masks[i], vis_masks[j]) for j in others]).mean()
        pos_vis = mask_distance(gt_masks[i], vis_masks[i])
        pos_scn = mask_distance(gt_masks[i], scn_masks[i])
        terms.append(torch.relu(pos_vis - neg_scn + cfg.margin) + torch.relu(pos_scn - neg_vis + cfg.margin))
    return cfg.eta * torch.stack(terms).sum()


def total_loss(gt_groups: Sequence[Sequence[torch.Tensor]], vis_groups: Sequence[Sequence[torch.Tensor]],
               scn_groups: Sequence[Sequence[torch.Tensor]], cfg: LossConfig) -> LossBreakdown:
    """
    L_total = L_ss + L_triplet over a batch; each group holds the pre-sigmoid
    mask logits of one mixture. The triplet term compares sigmoid masks.
    """
    _check_lengths(gt_groups, vis_groups, scn_groups)
    flat_gt = [mask for group in gt_groups for mask in group]
    flat_vis = [logits for group in vis_groups for logits in group]
    flat_scn = [logits for group in scn_groups for logits in group]
    _check_lengths(flat_gt, flat_vis, flat_scn)

    vis = [mask_loss(gt, logits) for gt, logits in zip(flat_gt, flat_vis)]
    scn = [mask_loss(gt, logits) for gt, logits in zip(flat_gt, flat_scn)]
    separation = weighted_separation_sum(vis, scn, cfg.lam)
    triplet = sum(
        (triplet_loss(gt, [torch.sigmoid(x) for x in v], [torch.sigmoid(x) for x in s], cfg)
         for gt, v, s in zip(gt_groups, vis_groups, scn_groups)),
        torch.zeros((), dtype=separation.dtype),
    )
    return LossBreakdown(
        separation=separation,
        triplet=triplet,
        vis_mask_loss=torch.stack(vis).mean() if vis else torch.tensor(0.0),
        scn_mask_loss=torch.stack(scn).mean() if scn else torch.tensor(0.0),
    )
