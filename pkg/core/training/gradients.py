"""
Reverse-mode gradients and their verification
Named gradients through torch autograd with non-finite guards, central
finite-difference audits per parameter block, and gradcheck over the
fixed operator set
"""

import copy
import logging
from typing import Callable, Dict, Iterable, Mapping, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from core.exceptions import GradientError
from core.training.losses import mask_distance, mask_loss

logger = logging.getLogger(__name__)

AUDIT_TOLERANCE = 1e-4
FD_STEP = 1e-6


class ForwardTrace:
    """Named forward intermediates; the first non-finite one raises with its name"""

    def __init__(self):
        self.values: Dict[str, torch.Tensor] = {}

    def record(self, name: str, tensor: torch.Tensor) -> torch.Tensor:
        if not torch.all(torch.isfinite(tensor.detach())):
            raise GradientError("non-finite forward value", location=name)
        self.values[name] = tensor
        return tensor

    def __contains__(self, name: str) -> bool:
        return name in self.values


def backward(loss: torch.Tensor, parameters: Mapping[str, torch.Tensor],
             trace: Optional[ForwardTrace] = None) -> Dict[str, torch.Tensor]:
    """Gradient of a scalar loss for every named parameter (zeros for unused ones)"""

    if trace is not None:
        trace.record("loss", loss)
    elif not torch.isfinite(loss.detach()):
        raise GradientError("non-finite loss", location="loss")

    names = list(parameters)
    tensors = [parameters[name] for name in names]
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)

    result: Dict[str, torch.Tensor] = {}
    for name, tensor, grad in zip(names, tensors, grads):
        grad = torch.zeros_like(tensor) if grad is None else grad
        if not torch.all(torch.isfinite(grad)):
            raise GradientError("non-finite gradient", location=name)
        result[name] = grad
    return result


def named_parameters(model: nn.Module, prefix: str = "") -> Dict[str, nn.Parameter]:
    return {prefix + name: param for name, param in model.named_parameters()}


def relative_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric), 1e-12)
    return abs(analytic - numeric) / scale


def gradient_audit(model: nn.Module, objective: Callable[[nn.Module], torch.Tensor],
                   seeds: Iterable[int] = range(20), step: float = FD_STEP) -> Dict[str, float]:
    """
    Worst relative error per parameter block between the autograd directional
    derivative and a float64 central difference along seeded random directions.
    """
    audited = copy.deepcopy(model).double()
    params = named_parameters(audited)
    grads = backward(objective(audited), params)

    report: Dict[str, float] = {}
    for name, param in params.items():
        worst = 0.0
        for seed in seeds:
            generator = torch.Generator().manual_seed(int(seed))
            direction = torch.randn(param.shape, generator=generator, dtype=torch.float64)
            direction /= direction.norm()
            analytic = float((grads[name] * direction).sum())
            with torch.no_grad():
                original = param.detach().clone()
                param.copy_(original + step * direction)
                plus = float(objective(audited))
                param.copy_(original - step * direction)
                minus = float(objective(audited))
                param.copy_(original)
            worst = max(worst, relative_error(analytic, (plus - minus) / (2 * step)))
        report[name] = worst
        level = logging.INFO if worst < AUDIT_TOLERANCE else logging.WARNING
        logger.log(level, f"{'✅' if worst < AUDIT_TOLERANCE else '⚠️'} {name}: rel err {worst:.2e}")
    return report


def _away_from_zero(shape: Tuple[int, ...], generator: torch.Generator) -> torch.Tensor:
    magnitude = 0.1 + torch.rand(shape, generator=generator, dtype=torch.float64)
    sign = torch.where(torch.rand(shape, generator=generator, dtype=torch.float64) < 0.5, -1.0, 1.0)
    return (magnitude * sign).requires_grad_()


def operator_gradcheck(seed: int = 0) -> Dict[str, bool]:
    """torch.autograd.gradcheck over every operator the models and losses use"""

    g = torch.Generator().manual_seed(seed)

    def rand(*shape):
        return torch.randn(shape, generator=g, dtype=torch.float64).requires_grad_()

    gt = (torch.rand((4, 5), generator=g, dtype=torch.float64) > 0.5).double()
    cases = {
        "linear": (lambda x, w, b: F.linear(x, w, b), (rand(3, 4), rand(2, 4), rand(2))),
        "conv3x3": (lambda x, w, b: F.conv2d(x, w, b, padding=1), (rand(1, 2, 4, 5), rand(2, 2, 3, 3), rand(2))),
        "relu": (torch.relu, (_away_from_zero((4, 5), g),)),
        "sigmoid": (torch.sigmoid, (rand(4, 5),)),
        "inner_product": (lambda f, c: f @ c, (rand(4, 5, 3), rand(3))),
        "mean_pool": (lambda x: x.mean(dim=(-3, -2)), (rand(4, 5, 3),)),
        "bce": (lambda p: mask_loss(gt, p), (rand(4, 5),)),
        "mse": (mask_distance, (rand(4, 5), rand(4, 5))),
        # b equals the margin, so the hinge kink sits at a == 0
        "hinge": (lambda a, b: torch.relu(a - b + 0.2).sum(),
                  (_away_from_zero((6,), g), torch.full((6,), 0.2, dtype=torch.float64))),
    }

    results = {}
    for name, (fn, inputs) in cases.items():
        try:
            results[name] = bool(torch.autograd.gradcheck(fn, inputs, eps=1e-6, atol=1e-8, rtol=AUDIT_TOLERANCE))
        except RuntimeError as e:
            logger.error(f"❌ gradcheck failed for {name}: {e}")
            results[name] = False
    return results
