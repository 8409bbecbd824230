"""Adam and RMSProp updates, applied in place to parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import OptimizerError, ShapeError


def _check(params, grads, buffers):
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"gradient {i} has shape {g.shape}, parameter {p.shape}")
        if buffers and buffers[i].shape != p.shape:
            raise ShapeError(f"optimizer state {i} has shape {buffers[i].shape}, parameter {p.shape}")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient in parameter {i}; update skipped")


@dataclass
class AdamState:
    s: list = field(default_factory=list)
    r: list = field(default_factory=list)
    t: int = 0
    rho1: float = 0.9
    rho2: float = 0.999
    eps_lr: float = 1e-3
    delta: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)

    def arrays(self, prefix="adam"):
        out = {f"{prefix}.s.{i}": a for i, a in enumerate(self.s)}
        out.update({f"{prefix}.r.{i}": a for i, a in enumerate(self.r)})
        return out

    def scalars(self):
        return {"t": self.t, "rho1": self.rho1, "rho2": self.rho2, "eps_lr": self.eps_lr,
                "delta": self.delta}


@dataclass
class RmsPropState:
    r: list = field(default_factory=list)
    rho: float = 0.9
    eps_lr: float = 5e-5
    delta: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw):
        return cls([np.zeros_like(p) for p in params], **kw)

    def arrays(self, prefix="rmsprop"):
        return {f"{prefix}.r.{i}": a for i, a in enumerate(self.r)}

    def scalars(self):
        return {"rho": self.rho, "eps_lr": self.eps_lr, "delta": self.delta}


def adam_step(state: AdamState, params, grads, m: int = 1) -> AdamState:
    """One Adam update with time-indexed bias correction.

    ``grads`` are divided by ``m`` first, so pass ``m`` when they are sums
    over a batch rather than means.
    """
    if not state.s:
        state.s = [np.zeros_like(p) for p in params]
        state.r = [np.zeros_like(p) for p in params]
    _check(params, grads, state.s)
    state.t += 1
    c1 = 1.0 - state.rho1 ** state.t
    c2 = 1.0 - state.rho2 ** state.t
    for p, g, s, r in zip(params, grads, state.s, state.r):
        g = g / m if m != 1 else g
        s *= state.rho1
        s += (1.0 - state.rho1) * g
        r *= state.rho2
        r += (1.0 - state.rho2) * (g * g)
        s_hat = s / c1
        r_hat = r / c2
        p += -state.eps_lr * s_hat / (np.sqrt(r_hat) + state.delta)
    return state


def rmsprop_step(state: RmsPropState, params, grads, m: int = 1) -> RmsPropState:
    """One RMSProp update: decayed squared-gradient average, no momentum."""
    if not state.r:
        state.r = [np.zeros_like(p) for p in params]
    _check(params, grads, state.r)
    for p, g, r in zip(params, grads, state.r):
        g = g / m if m != 1 else g
        r *= state.rho
        r += (1.0 - state.rho) * (g * g)
        p += -(state.eps_lr / (state.delta + np.sqrt(r))) * g
    return state
