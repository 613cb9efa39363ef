"""
Tests for the mask, separation and triplet losses
"""
import math

import pytest
import torch

from config.settings import LossConfig
from core.exceptions import ShapeError
from core.training.losses import (mask_distance, mask_loss, separation_loss, total_loss, triplet_loss,
                                  weighted_separation_sum)

A = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
B = 1.0 - A


def _sharp(mask, scale=20.0):
    """Logits whose sigmoid is (almost) the given binary mask"""
    return scale * (2.0 * mask - 1.0)


def test_mask_loss_values():
    assert float(mask_loss(A, _sharp(A))) < 1e-5
    assert float(mask_loss(A, torch.logit(A.clamp(1e-6, 1.0 - 1e-6)))) <= 2e-5
    assert float(mask_loss(A, torch.zeros_like(A))) == pytest.approx(math.log(2.0), rel=1e-6)
    with pytest.raises(ShapeError):
        mask_loss(A, torch.zeros(3))


def test_saturated_wrong_cell_keeps_its_gradient():
    logits = torch.tensor([30.0], dtype=torch.float64, requires_grad=True)
    loss = mask_loss(torch.zeros(1, dtype=torch.float64), logits)
    loss.backward()
    assert float(loss) == pytest.approx(30.0, rel=1e-9)
    assert float(logits.grad) == pytest.approx(1.0, rel=1e-9)

    right = torch.tensor([-30.0], dtype=torch.float64, requires_grad=True)
    mask_loss(torch.zeros(1, dtype=torch.float64), right).backward()
    assert 0.0 < float(right.grad) < 1e-12


def test_mask_distance():
    assert float(mask_distance(A, B)) == 1.0
    assert float(mask_distance(A, A)) == 0.0


def test_lambda_weights_the_branches():
    vis = [torch.tensor(1.0), torch.tensor(2.0)]
    scn = [torch.tensor(10.0), torch.tensor(20.0)]
    assert float(weighted_separation_sum(vis, scn, 2.0)) == 6.0
    assert float(weighted_separation_sum(vis, scn, 0.0)) == 60.0
    assert float(weighted_separation_sum(vis, scn, 1.5)) == pytest.approx(1.5 * 3 + 0.5 * 30)


def test_separation_loss_ignores_gated_branch():
    undecided = torch.zeros_like(A)
    visual_only = separation_loss([A, B], [_sharp(A), _sharp(B)], [undecided, undecided],
                                  LossConfig(lam=2.0, eta=0.0))
    assert float(visual_only) < 1e-4


def test_triplet_zero_when_branches_are_perfect():
    assert float(triplet_loss([A, B], [A, B], [A, B], LossConfig())) == 0.0


def test_triplet_hinge_when_masks_coincide():
    cfg = LossConfig(eta=0.1, margin=0.2)
    value = triplet_loss([A, A], [A, A], [A, A], cfg)
    assert float(value) == pytest.approx(0.1 * 2 * (0.2 + 0.2))


def test_triplet_degenerate_cases():
    assert float(triplet_loss([A], [A], [A], LossConfig())) == 0.0
    assert float(triplet_loss([A, B], [B, A], [B, A], LossConfig(eta=0.0))) == 0.0


def test_total_loss_breakdown():
    cfg = LossConfig()
    undecided = torch.zeros_like(A)
    breakdown = total_loss([[A, B]], [[undecided, undecided]], [[_sharp(A), _sharp(B)]], cfg)
    assert float(breakdown.total) == pytest.approx(float(breakdown.separation) + float(breakdown.triplet))
    floats = breakdown.as_floats()
    assert set(floats) == {"L_ss", "L_triplet", "L_total", "vis_mask_loss", "scn_mask_loss"}
    assert floats["vis_mask_loss"] == pytest.approx(math.log(2.0), rel=1e-6)
    assert floats["scn_mask_loss"] < 1e-5

    # triplet distances are measured on sigmoid masks, not on logits
    sharp = total_loss([[A, B]], [[_sharp(A), _sharp(B)]], [[_sharp(A), _sharp(B)]], cfg)
    assert float(sharp.triplet) == 0.0

    with pytest.raises(ShapeError):
        total_loss([[A, B]], [[A]], [[A, B]], cfg)


if __name__ == "__main__":
    pytest.main([__file__])
