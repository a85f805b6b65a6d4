"""Adam with exponentially decaying learning rate, and loss gradients."""

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDivergedError
from .params import map2_leaves, map_leaves
from .tape import Var, backward

__all__ = ["AdamState", "adam_init", "adam_step", "learning_rate", "loss_grad"]


@dataclass
class AdamState:
    m: object
    v: object
    step: int = 0
    lr0: float = 1e-3
    decay: float = 0.9
    decay_steps: float = 1000.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params, lr0=1e-3, decay=0.9, decay_steps=1000.0):
    zeros = lambda p: np.zeros_like(p)
    return AdamState(m=map_leaves(zeros, params), v=map_leaves(zeros, params),
                     lr0=lr0, decay=decay, decay_steps=decay_steps)


def learning_rate(state, step=None):
    t = state.step if step is None else step
    return state.lr0 * state.decay ** (t / state.decay_steps)


def adam_step(state, params, grads):
    """One Adam update; returns (new_params, new_state)."""
    for _, g in _aligned(grads):
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient", step=state.step)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    lr = learning_rate(state, t)
    new_m = map2_leaves(lambda m, g: b1 * m + (1 - b1) * g, state.m, grads)
    new_v = map2_leaves(lambda v, g: b2 * v + (1 - b2) * g * g, state.v, grads)
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t

    def upd(p, mv):
        m, v = mv
        return p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)

    paired = map2_leaves(lambda m, v: (m, v), new_m, new_v)
    new_params = map2_leaves(upd, params, paired)
    new_state = AdamState(m=new_m, v=new_v, step=t, lr0=state.lr0, decay=state.decay,
                          decay_steps=state.decay_steps, beta1=b1, beta2=b2, eps=state.eps)
    return new_params, new_state


def _aligned(tree):
    from .params import leaves

    return leaves(tree)


def loss_grad(params, loss_fn):
    """Gradient of a scalar loss w.r.t. every array leaf of ``params``.

    ``loss_fn`` receives a structurally identical tree whose leaves are
    tape ``Var``s and must return a scalar ``Var`` (optionally a
    ``(loss, aux)`` pair).  Returns ``(loss_value, grads, aux)``.
    """
    wrapped = map_leaves(Var, params)
    out = loss_fn(wrapped)
    aux = None
    if isinstance(out, tuple):
        out, aux = out
    loss_val = float(out.val)
    if not np.isfinite(loss_val):
        raise TrainingDivergedError(f"non-finite loss {loss_val}")
    backward(out)
    grads = map_leaves(lambda v: v.grad if v.grad is not None else np.zeros_like(v.val), wrapped)
    return loss_val, grads, aux
