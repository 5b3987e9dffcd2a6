# stsf_cd/gradcheck.py
"""
Finite-difference gradient harness.

Each registered subnet is rebuilt small (at most MAX_PARAMETERS trainable scalars), cast
to float64 and put in eval mode. The scalar objective is a fixed random projection of its
outputs; every trainable scalar gets a central difference with step `step`, compared to
the autograd gradient through |a - n| / max(|a|, |n|, 1e-6).

An element that misses the tolerance is retried at half the step. A perturbation that
straddles a ReLU kink shows up as disagreeing one-sided slopes and a gap that does not
shrink with the step; only such elements are reported under `kinks` and left out of the
maximum. Smooth elements always count.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from .errors import InvalidArgumentError
from .head import Decoder, loss
from .msfe import Adapter, HierarchicalEncoder, TransformerBlock
from .pgffm import PriorGuidedFusion
from .stcfm import FeatureInteraction, GraphStructureModeling, SpatioTemporalCommon

logger = logging.getLogger(__name__)

MAX_PARAMETERS = 2000
DEFAULT_STEP = 1e-4
REL_FLOOR = 1e-6
# a smooth element's central-difference error drops about fourfold when the step halves
KINK_SHRINK = 0.5


@dataclass
class GradCheckReport:
    subnet: str
    num_parameters: int
    max_rel_error: float
    worst_leaf: Optional[str]
    tolerance: float
    passed: bool
    kinks: int = 0
    per_leaf: Dict[str, float] = field(default_factory=dict)


# (module, inputs); inputs are passed positionally to module.forward
SubnetCase = Tuple[nn.Module, Tuple[torch.Tensor, ...]]


class _LossCase(nn.Module):
    """Logits as the only parameter, so the loss itself is the subnet."""

    def __init__(self, num_classes: int = 3, size: int = 4):
        super().__init__()
        self.logits = nn.Parameter(torch.randn(2, num_classes, size, size))
        self.register_buffer("labels", torch.randint(0, num_classes, (2, size, size)))
        self.register_buffer("weights", torch.rand(num_classes) + 0.5)

    def forward(self) -> torch.Tensor:
        return loss(self.logits, self.labels, self.weights)


def _pyramid(channels: Sequence[int], size: int = 32, batch: int = 1) -> Tuple[torch.Tensor, ...]:
    return tuple(torch.randn(batch, c, size // s, size // s) for c, s in zip(channels, (4, 8, 16, 32)))


def _linear() -> SubnetCase:
    return nn.Linear(5, 3), (torch.randn(4, 5),)


def _adapter() -> SubnetCase:
    return Adapter(8, 2), (torch.randn(2, 6, 8),)


def _attention() -> SubnetCase:
    return TransformerBlock(8, 2, mlp_ratio=2.0), (torch.randn(1, 5, 8),)


def _optical_encoder() -> SubnetCase:
    encoder = HierarchicalEncoder(3, 4, (1, 1, 1, 1), 4, 32, mlp_ratio=1.0, adapter_reduction=2)
    encoder.freeze_backbone()
    return encoder, (torch.rand(1, 3, 32, 32),)


def _fim() -> SubnetCase:
    return FeatureInteraction(4), (torch.randn(2, 4, 6, 6), torch.randn(2, 4, 6, 6))


def _gsfm() -> SubnetCase:
    return GraphStructureModeling(4), (torch.randn(1, 4, 5, 5),)


def _stcfm() -> SubnetCase:
    return SpatioTemporalCommon(4, use_gsfm=True, graph_pool=2), (torch.randn(1, 4, 8, 8), torch.randn(1, 4, 8, 8))


def _pgffm() -> SubnetCase:
    channels = (2, 2, 4, 4)
    inputs = tuple(_pyramid(channels) for _ in range(4)) + tuple(_pyramid((3, 3, 3, 3)) for _ in range(2))
    return PriorGuidedFusion(channels, projector_hidden=4), inputs


def _decoder() -> SubnetCase:
    return Decoder((2, 2, 4, 4), 4, 3), (_pyramid((2, 2, 4, 4)),)


def _loss() -> SubnetCase:
    return _LossCase(), ()


SUBNETS: Dict[str, Callable[[], SubnetCase]] = {
    "linear": _linear,
    "adapter": _adapter,
    "attention": _attention,
    "optical_encoder": _optical_encoder,
    "fim": _fim,
    "gsfm": _gsfm,
    "stcfm": _stcfm,
    "pgffm": _pgffm,
    "decoder": _decoder,
    "loss": _loss,
}


def _relative_error(a: float, numeric: float) -> float:
    return abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)


def _flatten(out) -> List[torch.Tensor]:
    if isinstance(out, torch.Tensor):
        return [out]
    return [t for item in out for t in _flatten(item)]


def _to_double(inputs):
    if isinstance(inputs, torch.Tensor):
        return inputs.double()
    return type(inputs)(_to_double(x) for x in inputs)


def build_case(subnet_id: str, seed: int = 0) -> SubnetCase:
    if subnet_id not in SUBNETS:
        raise InvalidArgumentError(f"Unknown subnet '{subnet_id}', valid: {sorted(SUBNETS)}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        module, inputs = SUBNETS[subnet_id]()
        # zero-initialized layers would hide the gradients of everything before them
        with torch.no_grad():
            for param in module.parameters():
                if param.requires_grad:
                    param.normal_(0.0, 0.5)
    return module.double().eval(), _to_double(inputs)


def grad_check(subnet_id: str, tolerance: float = 1e-4, corrupt_leaf: Optional[str] = None,
               step: float = DEFAULT_STEP, seed: int = 0) -> GradCheckReport:
    """
    `corrupt_leaf` scales that leaf's analytic gradient by 1.1 before comparison (negative control).
    """
    module, inputs = build_case(subnet_id, seed)
    named = [(name, p) for name, p in module.named_parameters() if p.requires_grad]
    count = sum(p.numel() for _, p in named)
    if count > MAX_PARAMETERS:
        raise InvalidArgumentError(f"Subnet '{subnet_id}' has {count} parameters, limit {MAX_PARAMETERS}")
    if corrupt_leaf is not None and corrupt_leaf not in dict(named):
        raise InvalidArgumentError(f"Subnet '{subnet_id}' has no trainable leaf '{corrupt_leaf}'")

    generator = torch.Generator().manual_seed(seed + 1)
    projections = [torch.randn(t.shape, generator=generator, dtype=torch.float64)
                   for t in _flatten(module(*inputs))]

    def objective() -> torch.Tensor:
        return sum((t * r).sum() for t, r in zip(_flatten(module(*inputs)), projections))

    analytic = torch.autograd.grad(objective(), [p for _, p in named], allow_unused=True)
    analytic = [torch.zeros_like(p) if g is None else g for (_, p), g in zip(named, analytic)]

    per_leaf: Dict[str, float] = {}
    kinks = 0
    with torch.no_grad():
        f0 = float(objective())

        def differences(flat: torch.Tensor, i: int, h: float) -> Tuple[float, float]:
            """Central difference and the spread between the two one-sided quotients."""
            orig = float(flat[i])
            flat[i] = orig + h
            f_plus = float(objective())
            flat[i] = orig - h
            f_minus = float(objective())
            flat[i] = orig
            return (f_plus - f_minus) / (2 * h), abs((f_plus - f0) / h - (f0 - f_minus) / h)

        for (name, param), grad in zip(named, analytic):
            if name == corrupt_leaf:
                grad = grad * 1.1
            flat = param.view(-1)
            worst = 0.0
            for i in range(flat.numel()):
                a = float(grad.view(-1)[i])
                numeric, one_sided = differences(flat, i, step)
                rel = _relative_error(a, numeric)
                if rel > tolerance:
                    # a kink inside the step: the quotients disagree and halving the step does not help
                    half, _ = differences(flat, i, step / 2)
                    if _relative_error(a, half) <= tolerance:
                        rel = _relative_error(a, half)
                    elif (one_sided >= abs(a - numeric)
                          and abs(a - half) > KINK_SHRINK * abs(a - numeric)):
                        kinks += 1
                        continue
                worst = max(worst, rel)
            per_leaf[name] = worst

    worst_leaf = max(per_leaf, key=per_leaf.get) if per_leaf else None
    max_rel = per_leaf[worst_leaf] if worst_leaf else 0.0
    report = GradCheckReport(subnet_id, count, max_rel, worst_leaf, tolerance, max_rel <= tolerance, kinks, per_leaf)
    logger.debug("gradcheck %s: max rel %.3e (%s), %d kinks", subnet_id, max_rel, worst_leaf, kinks)
    return report


def check_all(tolerance: float = 1e-4, subnets: Optional[Sequence[str]] = None) -> List[GradCheckReport]:
    return [grad_check(name, tolerance) for name in (subnets or SUBNETS)]
