"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    worst: float
    worst_name: str
    errors: dict = field(default_factory=dict)

    def __str__(self):
        return f"max relative error {self.worst:.3e} at {self.worst_name}"


def rel_error(a: np.ndarray, b: np.ndarray, atol: float = 1e-7) -> float:
    """Norm-wise relative difference ``|a - b| / max(|a|, |b|)``.

    Both sides below ``atol`` in norm count as agreeing: an exactly zero
    gradient (a bias feeding batch norm, say) is then not compared against
    pure finite-difference roundoff.
    """
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < atol:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def linear_loss(weights):
    """Loss ``sum(weights * y)``; its gradient is ``weights``."""
    def loss(y):
        return float(np.sum(weights * y)), weights
    return loss


def squared_loss(target):
    def loss(y):
        d = y - target
        return float(0.5 * np.sum(d * d)), d
    return loss


def grad_check(model, x, loss, eps=1e-5, max_per_tensor=None, seed=0, check_input=True,
               names=None):
    """Compare backward() against central differences for every parameter.

    ``model`` needs ``forward(x, train)``, ``backward(cache, dy)`` and
    ``named_parameters()``. ``loss(y)`` returns ``(value, dvalue/dy)``.
    With ``max_per_tensor`` only that many randomly chosen coordinates of
    each tensor are perturbed.
    """
    x = np.array(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    y, cache = model.forward(x, True)
    _, dy = loss(y)
    dx, grads = model.backward(cache, dy)

    def f():
        return loss(model.forward(x, True)[0])[0]

    report = GradCheckReport(0.0, "")
    named = model.named_parameters()
    if names is not None:
        keep = set(names)
        selected = [(i, n, p) for i, (n, p) in enumerate(named) if n in keep]
    else:
        selected = [(i, n, p) for i, (n, p) in enumerate(named)]
    targets = [(n, p, grads[i]) for i, n, p in selected]
    if check_input:
        targets.append(("input", x, dx))

    for name, arr, analytic in targets:
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            coords = np.sort(rng.choice(flat.size, size=max_per_tensor, replace=False))
        numeric = np.empty(len(coords))
        for j, c in enumerate(coords):
            old = flat[c]
            flat[c] = old + eps
            fp = f()
            flat[c] = old - eps
            fm = f()
            flat[c] = old
            numeric[j] = (fp - fm) / (2 * eps)
        err = rel_error(analytic.reshape(-1)[coords], numeric)
        report.errors[name] = err
        if err >= report.worst:
            report.worst, report.worst_name = err, name
    return report
