"""RMSProp: per-parameter step sizes from a decaying average of squared grads.

The accumulator update is r <- rho * r + (1 - rho) * g * g and the parameter
update is theta <- theta - learning_rate / sqrt(delta + r) * g, with the
floor delta inside the square root.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeMismatchError(ValueError):
    pass


@dataclass
class RmsPropState:
    learning_rate: float
    rho: float = 0.9
    delta: float = 1e-8
    r: dict[str, np.ndarray] = field(default_factory=dict)


def init_rmsprop(tensors: dict[str, np.ndarray], learning_rate: float,
                 *, rho: float = 0.9, delta: float = 1e-8) -> RmsPropState:
    """Zero accumulators matching the given parameter tensors."""
    return RmsPropState(
        learning_rate=learning_rate,
        rho=rho,
        delta=delta,
        r={name: np.zeros_like(t) for name, t in tensors.items()},
    )


def rmsprop_step(state: RmsPropState, tensors: dict[str, np.ndarray],
                 grads: dict[str, np.ndarray]):
    """Apply one update in place to every tensor named in `grads`.

    Returns (tensors, state) for convenience; both are mutated.
    """
    for name, g in grads.items():
        if name not in state.r:
            raise ShapeMismatchError(f"no accumulator for {name!r}")
        r = state.r[name]
        theta = tensors[name]
        if g.shape != r.shape or g.shape != theta.shape:
            raise ShapeMismatchError(
                f"{name}: grad {g.shape}, accumulator {r.shape}, param {theta.shape}"
            )
        r *= state.rho
        r += (1.0 - state.rho) * g * g
        theta -= state.learning_rate / np.sqrt(state.delta + r) * g
    return tensors, state
