"""
Tests for named gradients, finite-difference audits and operator gradchecks
"""
import pytest
import torch

from config.settings import ParserConfig, SeparatorConfig
from core.exceptions import GradientError
from core.parser.scene_parser import ScenePredictor
from core.separator.separator_model import SeparatorModel
from core.training.gradients import (AUDIT_TOLERANCE, ForwardTrace, backward, gradient_audit, named_parameters,
                                     operator_gradcheck)
from core.training.losses import mask_distance, mask_loss


def test_operator_gradcheck_passes():
    results = operator_gradcheck(seed=0)
    assert set(results) == {"linear", "conv3x3", "relu", "sigmoid", "inner_product", "mean_pool", "bce", "mse",
                            "hinge"}
    assert all(results.values()), results


def test_separator_gradient_audit():
    model = SeparatorModel(SeparatorConfig(k_r=4, num_classes=3, n_bins=5), seed=0)
    generator = torch.Generator().manual_seed(0)
    logspec = torch.rand((4, 5), generator=generator, dtype=torch.float64) * 2 - 1
    gt = (torch.rand((2, 4, 5), generator=generator, dtype=torch.float64) > 0.5).double()
    visual = torch.rand((2, 4), generator=generator, dtype=torch.float64)

    def objective(m):
        features = m.analysis(logspec)
        vis = m.synthesizer.logits(features, visual)
        scn = m.synthesizer.logits(features, m.label_alignment(torch.tensor([0, 2])))
        return mask_loss(gt, vis) + 0.5 * mask_loss(gt, scn) + mask_distance(torch.sigmoid(vis), torch.sigmoid(scn))

    report = gradient_audit(model, objective, seeds=range(20), step=1e-7)
    assert set(report) == set(named_parameters(model))
    assert max(report.values()) < AUDIT_TOLERANCE, report


def test_parser_gradient_audit():
    model = ScenePredictor(ParserConfig(k_r=4, num_classes=3, n_bins=5), seed=0)
    generator = torch.Generator().manual_seed(1)
    logspec = torch.rand((4, 5), generator=generator, dtype=torch.float64) * 2 - 1
    feats = torch.rand((2, 4), generator=generator, dtype=torch.float64)
    visible_target = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)
    audible_target = torch.tensor([1.0, 1.0, 0.0], dtype=torch.float64)

    def objective(m):
        visible, audible = m.logits(feats, logspec)
        return mask_loss(visible_target, visible) + mask_loss(audible_target, audible)

    report = gradient_audit(model, objective, seeds=range(20), step=1e-7)
    assert max(report.values()) < AUDIT_TOLERANCE, report


def test_backward_returns_zeros_for_unused_parameters():
    used = torch.nn.Parameter(torch.tensor([1.0, 2.0]))
    unused = torch.nn.Parameter(torch.tensor([3.0]))
    grads = backward((used ** 2).sum(), {"used": used, "unused": unused})
    torch.testing.assert_close(grads["used"], torch.tensor([2.0, 4.0]))
    torch.testing.assert_close(grads["unused"], torch.zeros(1))


def test_non_finite_values_name_their_location():
    trace = ForwardTrace()
    trace.record("ok", torch.ones(2))
    assert "ok" in trace
    with pytest.raises(GradientError) as error:
        trace.record("mixture0.analysis", torch.tensor([1.0, float("nan")]))
    assert error.value.location == "mixture0.analysis"

    param = torch.nn.Parameter(torch.tensor(1.0))
    with pytest.raises(GradientError) as error:
        backward(param * float("inf"), {"w": param})
    assert error.value.location == "loss"


if __name__ == "__main__":
    pytest.main([__file__])
