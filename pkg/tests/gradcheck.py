"""Central finite-difference gradient checking for modules and losses.

All checks run in float64.  A closure rebuilds the scalar loss from scratch
on every call so parameter perturbations flow through a full forward pass.
"""

from __future__ import annotations

import torch

FD_STEP = 1e-4
FD_RTOL = 1e-3
_ATOL = 1e-8


def randomize_parameters(module: torch.nn.Module, seed: int, scale: float = 0.5) -> None:
    """Overwrite every parameter with seeded Gaussian values.

    Gradient checks should exercise the architecture at a generic point, not
    at special initializations (identity or zero blocks hide wiring errors).
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for param in module.parameters():
            param.copy_(torch.randn(param.shape, generator=gen, dtype=param.dtype) * scale)


def check_gradients(loss_fn, tensors: dict[str, torch.Tensor],
                    step: float = FD_STEP, rtol: float = FD_RTOL) -> int:
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``tensors`` maps names to float64 leaf tensors (parameters or inputs)
    that the closure reads.  Every entry of every tensor is perturbed.
    Returns the number of entries checked; raises AssertionError with the
    offending coordinate on mismatch.
    """
    for tensor in tensors.values():
        assert tensor.dtype == torch.float64, "finite differences need float64"
        tensor.requires_grad_(True)
        if tensor.grad is not None:
            tensor.grad = None

    loss = loss_fn()
    loss.backward()
    analytic = {name: (t.grad.detach().clone() if t.grad is not None
                       else torch.zeros_like(t))
                for name, t in tensors.items()}

    checked = 0
    for name, tensor in tensors.items():
        flat = tensor.detach().reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for idx in range(flat.numel()):
            original = flat[idx].item()
            with torch.no_grad():
                flat[idx] = original + step
            upper = float(loss_fn().detach())
            with torch.no_grad():
                flat[idx] = original - step
            lower = float(loss_fn().detach())
            with torch.no_grad():
                flat[idx] = original
            numeric = (upper - lower) / (2 * step)
            exact = float(grad_flat[idx])
            err = abs(exact - numeric)
            bound = rtol * max(abs(exact), abs(numeric)) + _ATOL
            assert err <= bound, (
                f"gradient mismatch at {name}[{idx}]: "
                f"analytic {exact:.10g} vs finite-difference {numeric:.10g} "
                f"(error {err:.3g} > bound {bound:.3g})")
            checked += 1
    return checked
