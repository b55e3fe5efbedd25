"""
pvgan — Reverse-mode gradients and finite-difference checks

gradients() wraps torch.autograd and reports the first layer that produced a
non-finite activation when the loss blows up. finite_difference_check()
compares autograd against central differences on sampled coordinates,
skipping coordinates whose perturbation flips a ReLU/LeakyReLU input sign
(the difference quotient is meaningless across a kink).
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np
import torch
import torch.nn as nn

from pvgan.errors import NumericError

log = logging.getLogger(__name__)

FD_STEP = 1e-5
REL_ERROR_FLOOR = 1e-8


def _named_tensors(params) -> dict[str, torch.Tensor]:
    if isinstance(params, nn.Module):
        return dict(params.named_parameters())
    return dict(params)


@contextmanager
def _nonfinite_watch(module: Optional[nn.Module]):
    """Record the index of the first layer (in module.layers) with a non-finite output."""
    found: list[int] = []
    handles = []
    layers = getattr(module, "layers", None) if module is not None else None
    if layers is not None:
        for i, layer in enumerate(layers):
            def hook(_mod, _inp, out, i=i):
                if not found and not torch.isfinite(out).all():
                    found.append(i)
            handles.append(layer.register_forward_hook(hook))
    try:
        yield found
    finally:
        for h in handles:
            h.remove()


def gradients(params, loss_closure: Callable[[], torch.Tensor]) -> dict[str, torch.Tensor]:
    """Exact gradients of a scalar loss w.r.t. every named parameter (same shapes)."""
    named = _named_tensors(params)
    module = params if isinstance(params, nn.Module) else None
    with _nonfinite_watch(module) as bad_layer:
        loss = loss_closure()
    if not torch.isfinite(loss).all():
        raise NumericError("non-finite loss", layer=bad_layer[0] if bad_layer else None)
    if not loss.requires_grad:
        return {name: torch.zeros_like(t) for name, t in named.items()}
    grads = torch.autograd.grad(loss, list(named.values()), allow_unused=True)
    return {
        name: (g if g is not None else torch.zeros_like(t))
        for (name, t), g in zip(named.items(), grads)
    }


@dataclass
class FDResult:
    name: str
    index: int
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        denom = max(abs(self.analytic), abs(self.numeric), REL_ERROR_FLOOR)
        return abs(self.analytic - self.numeric) / denom


@contextmanager
def _sign_recorder(modules: Iterable[nn.Module]):
    """Capture (output > 0) masks of the given modules on every forward pass."""
    masks: list[torch.Tensor] = []
    handles = [m.register_forward_hook(lambda _m, _i, out: masks.append(out.detach() > 0)) for m in modules]
    try:
        yield masks
    finally:
        for h in handles:
            h.remove()


def activation_inputs(*nets: nn.Module) -> list[nn.Module]:
    """Modules whose outputs feed a rectifier: the batch norms of our networks."""
    return [norm for net in nets for norm in getattr(net, "norms", [])]


def finite_difference_check(
    params,
    loss_closure: Callable[[], torch.Tensor],
    n_samples: int = 50,
    step: float = FD_STEP,
    seed: int = 0,
    kink_modules: Iterable[nn.Module] = (),
    max_attempts: Optional[int] = None,
) -> list[FDResult]:
    """Compare autograd with central differences on `n_samples` random coordinates.

    params: module or {name: leaf tensor}. The closure must recompute the loss
    from those tensors deterministically. Coordinates are drawn with
    probability proportional to tensor size.
    """
    named = _named_tensors(params)
    grads = gradients(named, loss_closure)
    names = list(named)
    sizes = np.array([named[n].numel() for n in names], dtype=np.float64)
    rng = np.random.default_rng(seed)
    kink_modules = list(kink_modules)
    max_attempts = max_attempts or 20 * n_samples

    results: list[FDResult] = []
    attempts = 0
    while len(results) < n_samples and attempts < max_attempts:
        attempts += 1
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        tensor = named[name]
        index = int(rng.integers(tensor.numel()))
        flat = tensor.data.view(-1)
        original = flat[index].item()

        with torch.no_grad(), _sign_recorder(kink_modules) as masks:
            flat[index] = original + step
            plus = loss_closure().item()
            n_plus = len(masks)
            flat[index] = original - step
            minus = loss_closure().item()
            flat[index] = original
        if kink_modules and any(
            not torch.equal(a, b) for a, b in zip(masks[:n_plus], masks[n_plus:])
        ):
            continue

        numeric = (plus - minus) / (2 * step)
        analytic = grads[name].reshape(-1)[index].item()
        results.append(FDResult(name, index, analytic, numeric))

    if len(results) < n_samples:
        log.warning(f"finite-difference check: only {len(results)} of {n_samples} coordinates usable")
    return results


def max_rel_error(results: list[FDResult]) -> float:
    return max((r.rel_error for r in results), default=0.0)
