"""Central finite-difference gradient checking used across the test suite."""

from __future__ import annotations

import numpy as np

from patchkit.autodiff import Tensor, backward


def finite_difference_check(
    build_loss,
    tensors: list[Tensor],
    rng: np.random.Generator,
    eps: float = 1e-5,
    rel_tol: float = 1e-4,
    samples: int = 10,
) -> float:
    """Compare reverse-mode gradients against central differences.

    ``build_loss`` must construct a fresh scalar loss Tensor from the
    current values of ``tensors`` on every call. Checks ``samples`` random
    coordinates per tensor; returns the worst relative error seen and
    asserts it is within ``rel_tol``.
    """
    for t in tensors:
        t.zero_grad()
    loss = build_loss()
    backward(loss)
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    for t in tensors:
        t.zero_grad()

    worst = 0.0
    for tensor, grad in zip(tensors, grads):
        flat = tensor.data.ravel()
        count = min(samples, flat.size)
        idx = rng.choice(flat.size, size=count, replace=False)
        for i in idx:
            original = flat[i]
            flat[i] = original + eps
            up = build_loss().item()
            flat[i] = original - eps
            down = build_loss().item()
            flat[i] = original
            fd = (up - down) / (2.0 * eps)
            an = grad.ravel()[i]
            scale = max(1.0e-6, abs(fd), abs(an))
            worst = max(worst, abs(fd - an) / scale)
    assert worst <= rel_tol, f"finite-difference mismatch: worst relative error {worst:.3e}"
    return worst
