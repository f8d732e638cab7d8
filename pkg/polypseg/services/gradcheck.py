"""Finite-difference and dense-oracle verification suites.

Gradient suites run in float64 with modules in eval mode. The scalar being
differentiated is a fixed random projection Σ(out·R) of the module output,
since plain sums of normalized features have zero gradient.
"""
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from polypseg.core.exceptions import GradCheckError, ValidationError
from polypseg.core.logger import get_logger
from polypseg.models.backbone import PyramidVisionTransformer
from polypseg.models.cfm import CFM
from polypseg.models.cim import CIM
from polypseg.models.sam import SAM
from polypseg.schemas.model import AblationVariant, DecoderConfig, ModelConfig
from polypseg.schemas.response import GradCheckEntry, GradCheckReport, GradCheckResult
from polypseg.schemas.training import LossConfig
from polypseg.services import oracles
from polypseg.services.losses import StructureLoss
from polypseg.utils.runtime import set_seed

logger = get_logger(__name__)

GRAD_TOLERANCE = 1e-3
ORACLE_TOLERANCE = 1e-5
PARAM_STEP = 1e-5
LOGIT_STEP = 1e-4
SAMPLES = 10

NamedTensors = List[Tuple[str, torch.Tensor]]
Scalar = Callable[[], torch.Tensor]


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)


def central_difference(fn: Scalar, tensor: torch.Tensor, index: Tuple[int, ...],
                       step: float) -> float:
    with torch.no_grad():
        original = tensor.data[index].item()
        tensor.data[index] = original + step
        plus = fn().item()
        tensor.data[index] = original - step
        minus = fn().item()
        tensor.data[index] = original
    return (plus - minus) / (2 * step)


def check_gradients(suite: str, fn: Scalar, tensors: NamedTensors, rng: np.random.Generator,
                    samples: int = SAMPLES, step: float = PARAM_STEP,
                    tolerance: float = GRAD_TOLERANCE) -> GradCheckResult:
    """Compare autograd against central differences on randomly drawn scalars"""
    for _, t in tensors:
        t.grad = None
    fn().backward()
    grads = {name: (t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t))
             for name, t in tensors}

    sizes = np.array([t.numel() for _, t in tensors])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks = rng.choice(int(offsets[-1]), size=min(samples, int(offsets[-1])), replace=False)

    entries = []
    for flat in sorted(picks.tolist()):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, t = tensors[which]
        index = tuple(int(i) for i in np.unravel_index(flat - offsets[which], tuple(t.shape)))
        analytic = grads[name][index].item()
        numeric = central_difference(fn, t, index, step)
        entries.append(GradCheckEntry(
            name=name, index=list(index), analytic=analytic, numeric=numeric,
            rel_error=relative_error(analytic, numeric),
        ))

    max_error = max((e.rel_error for e in entries), default=0.0)
    return GradCheckResult(
        suite=suite, kind="gradient", tolerance=tolerance, max_error=max_error,
        passed=max_error < tolerance, entries=entries,
    )


def _projection(outputs: Sequence[torch.Tensor]) -> Scalar:
    probes = [torch.randn_like(o) / np.sqrt(o.numel()) for o in outputs]

    def project(current: Sequence[torch.Tensor]) -> torch.Tensor:
        return sum((o * r).sum() for o, r in zip(current, probes))

    return project


def _module_suite(suite: str, module: nn.Module, forward: Callable[[], Sequence[torch.Tensor]],
                  rng: np.random.Generator) -> GradCheckResult:
    project = _projection([o.detach() for o in forward()])
    params = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    return check_gradients(suite, lambda: project(forward()), params, rng)


def toy_sam_config(variant: AblationVariant = AblationVariant.FULL) -> DecoderConfig:
    return DecoderConfig(channel=8, sam_pool=4, sam_nodes=2, sam_state=4, variant=variant)


def backbone_suite(rng: np.random.Generator) -> GradCheckResult:
    cfg = ModelConfig.desk().backbone.model_copy(update={"depths": [1, 1, 1, 1]})
    module = PyramidVisionTransformer(cfg).double().eval()
    img = torch.randn(1, 3, 32, 32, dtype=torch.float64)
    return _module_suite("backbone", module, lambda: list(module(img)), rng)


def _toy_pyramid(channel: int) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    return (torch.randn(1, channel, 8, 8, dtype=torch.float64),
            torch.randn(1, channel, 4, 4, dtype=torch.float64),
            torch.randn(1, channel, 2, 2, dtype=torch.float64))


def cfm_suite(rng: np.random.Generator) -> GradCheckResult:
    module = CFM(4).double().eval()
    x2, x3, x4 = _toy_pyramid(4)
    return _module_suite("cfm", module, lambda: [module(x2, x3, x4)], rng)


def cim_suite(rng: np.random.Generator) -> GradCheckResult:
    module = CIM(8, reduction=4).double().eval()
    x1 = torch.randn(1, 8, 6, 6, dtype=torch.float64)
    return _module_suite("cim", module, lambda: [module(x1)], rng)


def sam_suite(rng: np.random.Generator) -> GradCheckResult:
    module = SAM(toy_sam_config(), t2_channels=8).double().eval()
    t1 = torch.randn(1, 8, 8, 8, dtype=torch.float64)
    t2 = torch.randn(1, 8, 16, 16, dtype=torch.float64)
    return _module_suite("sam", module, lambda: [module(t1, t2)], rng)


def losses_suite(rng: np.random.Generator) -> GradCheckResult:
    logits = torch.randn(1, 1, 8, 8, dtype=torch.float64, requires_grad=True)
    mask = torch.zeros(1, 1, 8, 8, dtype=torch.float64)
    mask[..., 2:6, 3:7] = 1.0
    criterion = StructureLoss(LossConfig(weight_window=3))
    return check_gradients(
        "losses", lambda: criterion(logits, mask), [("logits", logits)], rng,
        step=LOGIT_STEP,
    )


def _randomize_batchnorm(module: nn.Module) -> None:
    """Non-trivial running statistics so the oracle exercises the full BN formula"""
    for m in module.modules():
        if isinstance(m, nn.BatchNorm2d):
            with torch.no_grad():
                m.running_mean.uniform_(-0.2, 0.2)
                m.running_var.uniform_(0.5, 1.5)
                m.weight.uniform_(0.5, 1.5)
                m.bias.uniform_(-0.2, 0.2)


def _oracle_result(suite: str, torch_out: torch.Tensor, dense: np.ndarray) -> GradCheckResult:
    error = float(np.abs(oracles.to_numpy(torch_out)[0] - dense).max())
    return GradCheckResult(
        suite=suite, kind="oracle", tolerance=ORACLE_TOLERANCE, max_error=error,
        passed=error < ORACLE_TOLERANCE,
    )


def decoder_oracle_suites() -> List[GradCheckResult]:
    """Frozen-weight toys of CFM, CIM and every SAM graph variant against the dense oracles"""
    results = []
    with torch.no_grad():
        module = CFM(4).double().eval()
        _randomize_batchnorm(module)
        x2, x3, x4 = _toy_pyramid(4)
        results.append(_oracle_result(
            "decoder.cfm", module(x2, x3, x4),
            oracles.cfm(module, *(oracles.to_numpy(x)[0] for x in (x2, x3, x4))),
        ))

        module = CIM(8, reduction=4).double().eval()
        x1 = torch.randn(1, 8, 4, 4, dtype=torch.float64)
        results.append(_oracle_result(
            "decoder.cim", module(x1), oracles.cim(module, oracles.to_numpy(x1)[0]),
        ))

        t1 = torch.randn(1, 8, 8, 8, dtype=torch.float64)
        t2 = torch.randn(1, 8, 16, 16, dtype=torch.float64)
        for variant in (AblationVariant.FULL, AblationVariant.SAM_CONV, AblationVariant.SAM_NOGCN):
            module = SAM(toy_sam_config(variant), t2_channels=8).double().eval()
            _randomize_batchnorm(module)
            results.append(_oracle_result(
                f"decoder.sam[{variant.value}]", module(t1, t2),
                oracles.sam(module, oracles.to_numpy(t1)[0], oracles.to_numpy(t2)[0]),
            ))
    return results


SUITES: Dict[str, List[str]] = {
    "backbone": ["backbone"],
    "cfm": ["cfm"],
    "cim": ["cim"],
    "sam": ["sam"],
    "decoder": ["cfm", "cim", "sam", "oracle"],
    "losses": ["losses"],
    "all": ["backbone", "cfm", "cim", "sam", "oracle", "losses"],
}

_GRADIENT_SUITES = {
    "backbone": backbone_suite,
    "cfm": cfm_suite,
    "cim": cim_suite,
    "sam": sam_suite,
    "losses": losses_suite,
}


def run_gradcheck(module_name: str, seed: int = 0) -> GradCheckReport:
    if module_name not in SUITES:
        raise ValidationError(
            f"unknown gradcheck module {module_name!r}; choose from {sorted(SUITES)}"
        )
    set_seed(seed)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(module=module_name, seed=seed)
    for suite in SUITES[module_name]:
        if suite == "oracle":
            report.results.extend(decoder_oracle_suites())
        else:
            report.results.append(_GRADIENT_SUITES[suite](rng))

    for r in report.results:
        level = logger.info if r.passed else logger.error
        level(f"{r.suite} ({r.kind}): max error {r.max_error:.3e} (tolerance {r.tolerance:.0e})")
    return report


def require_pass(report: GradCheckReport) -> GradCheckReport:
    failed = [r.suite for r in report.results if not r.passed]
    if failed:
        raise GradCheckError(f"gradient checks failed: {', '.join(failed)}", suite=",".join(failed))
    return report
