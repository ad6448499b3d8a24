"""Adam with bias correction plus a reduce-on-plateau learning-rate schedule.

The trainers perform gradient ascent by negating their accumulated gradients
before handing them to :func:`adam_step`, which is a plain minimizer. The
schedule tracks the best batch reward seen so far and multiplies the rate by
``decay`` after ``patience`` consecutive batches without improvement; both
the improvement check and a decay reset the counter, and the rate never
increases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import Params


@dataclass
class AdamState:
    """Moment accumulators mirroring one parameter container."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    v: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def adam_state(params: Params, lr: float) -> AdamState:
    st = AdamState(lr=lr)
    for path, layer in params.layers():
        st.m[path] = (np.zeros_like(layer.w), np.zeros_like(layer.b))
        st.v[path] = (np.zeros_like(layer.w), np.zeros_like(layer.b))
    return st


def adam_step(params: Params, grads: Params, st: AdamState) -> None:
    """One in-place minimization step; bumps the parameter version."""
    st.t += 1
    c1 = 1.0 - st.beta1**st.t
    c2 = 1.0 - st.beta2**st.t
    for (path, p), (_, g) in zip(params.layers(), grads.layers()):
        mw, mb = st.m[path]
        vw, vb = st.v[path]
        mw *= st.beta1
        mw += (1.0 - st.beta1) * g.w
        mb *= st.beta1
        mb += (1.0 - st.beta1) * g.b
        vw *= st.beta2
        vw += (1.0 - st.beta2) * g.w**2
        vb *= st.beta2
        vb += (1.0 - st.beta2) * g.b**2
        p.w -= st.lr * (mw / c1) / (np.sqrt(vw / c2) + st.eps)
        p.b -= st.lr * (mb / c1) / (np.sqrt(vb / c2) + st.eps)
    params.version += 1


@dataclass
class PlateauSchedule:
    """Reward-tracking learning-rate decay."""

    lr: float
    best: float = -np.inf
    counter: int = 0
    decay: float = 0.95
    patience: int = 10


def plateau_update(sched: PlateauSchedule, batch_mean_reward: float) -> float:
    """Feed one batch's mean reward; returns the (possibly decayed) rate."""
    if batch_mean_reward > sched.best:
        sched.best = batch_mean_reward
        sched.counter = 0
    else:
        sched.counter += 1
        if sched.counter >= sched.patience:
            sched.lr *= sched.decay
            sched.counter = 0
    return sched.lr
