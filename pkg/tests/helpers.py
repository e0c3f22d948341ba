"""Shared test utilities: finite-difference gradient checking and tiny models."""
from __future__ import annotations

import numpy as np

from domainmoe.rng import RngStream
from domainmoe.tensor import Tensor


def numeric_grad(loss_fn, param: Tensor, indices, eps: float = 1e-5) -> dict:
    """Central finite differences of loss_fn() w.r.t. selected entries of param."""
    grads = {}
    flat = param.data.reshape(-1)
    for idx in indices:
        orig = flat[idx]
        flat[idx] = orig + eps
        up = float(loss_fn().data)
        flat[idx] = orig - eps
        down = float(loss_fn().data)
        flat[idx] = orig
        grads[idx] = (up - down) / (2.0 * eps)
    return grads


def assert_grads_close(loss_fn, params: dict[str, Tensor], rtol: float = 1e-4,
                       eps: float = 1e-5, max_coords: int = 8,
                       rng: RngStream | None = None) -> None:
    """Analytic gradients vs central differences on a sample of coordinates."""
    rng = rng or RngStream(0)
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    for name, p in params.items():
        assert p.grad is not None, f"no gradient reached {name}"
        n = p.data.size
        if n <= max_coords:
            indices = list(range(n))
        else:
            indices = sorted(set(int(i) for i in rng.integers(0, n, (max_coords,))))
        numeric = numeric_grad(loss_fn, p, indices, eps)
        analytic = p.grad.reshape(-1)
        for idx, num in numeric.items():
            ana = float(analytic[idx])
            denom = max(abs(ana), abs(num), 1e-4)
            rel = abs(ana - num) / denom
            assert rel <= rtol, (
                f"{name}[{idx}]: analytic {ana:.8g} vs numeric {num:.8g} "
                f"(rel err {rel:.3g})")


def rand64(rng: RngStream, shape) -> np.ndarray:
    return rng.normal(shape).astype(np.float64)


def param64(arr) -> Tensor:
    """Trainable float64 tensor regardless of the engine's default dtype."""
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def params64(params: dict[str, Tensor]) -> dict[str, Tensor]:
    """Float64 copy of a parameter dict (for finite-difference checks)."""
    return {n: param64(p.data) for n, p in params.items()}
