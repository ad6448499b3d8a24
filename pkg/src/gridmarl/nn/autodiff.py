"""Minimal reverse-mode differentiation over numpy arrays.

Only the operations the message-passing networks actually use are provided:
affine maps, ReLU, elementwise add/multiply, row gather, segment sum, column
concatenation and a row-wise log-softmax. Every op returns a :class:`Var`
holding the forward value plus vector-Jacobian closures back to its parents;
:func:`backward` replays them in reverse topological order and accumulates
adjoints on the leaves. The ReLU subgradient at exactly zero is zero.

Everything is float64. This is deliberately not a general autodiff.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ShapeError

VJP = Callable[[np.ndarray], np.ndarray]


class Var:
    """A node in the computation graph: value, adjoint, parent links."""

    __slots__ = ("value", "grad", "parents", "tag")

    def __init__(
        self,
        value: np.ndarray,
        parents: Sequence[tuple["Var", VJP]] = (),
        tag: str = "",
    ):
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self.tag = tag


def leaf(value: np.ndarray) -> Var:
    return Var(value)


def linear(x: Var, w: Var, b: Var) -> Var:
    """Rows of ``x`` through the affine map ``x @ w.T + b``."""
    xv, wv, bv = x.value, w.value, b.value
    if xv.ndim != 2 or wv.ndim != 2 or bv.ndim != 1:
        raise ShapeError("linear expects x (n,in), w (out,in), b (out,)")
    if xv.shape[1] != wv.shape[1] or bv.shape[0] != wv.shape[0]:
        raise ShapeError(
            f"linear shape mismatch: x {xv.shape}, w {wv.shape}, b {bv.shape}"
        )
    out = xv @ wv.T + bv
    return Var(
        out,
        parents=(
            (x, lambda g: g @ wv),
            (w, lambda g: g.T @ xv),
            (b, lambda g: g.sum(axis=0)),
        ),
    )


def relu(x: Var) -> Var:
    mask = x.value > 0.0
    return Var(np.where(mask, x.value, 0.0), parents=((x, lambda g: g * mask),), tag="relu")


def add(a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")
    return Var(a.value + b.value, parents=((a, lambda g: g), (b, lambda g: g)))


def mul(a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul shape mismatch: {a.value.shape} vs {b.value.shape}")
    av, bv = a.value, b.value
    return Var(av * bv, parents=((a, lambda g: g * bv), (b, lambda g: g * av)))


def gather(x: Var, idx: np.ndarray) -> Var:
    """Select rows; the adjoint scatter-adds back to the source rows."""

    def back(g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x.value)
        np.add.at(out, idx, g)
        return out

    return Var(x.value[idx], parents=((x, back),))


def segment_sum(x: Var, seg: np.ndarray, n_segments: int) -> Var:
    """out[k] = sum of rows i with seg[i] == k; empty segments stay zero."""
    if x.value.ndim != 2 or seg.shape != (x.value.shape[0],):
        raise ShapeError("segment_sum expects x (n,d) and seg (n,)")
    out = np.zeros((n_segments, x.value.shape[1]), dtype=x.value.dtype)
    np.add.at(out, seg, x.value)
    return Var(out, parents=((x, lambda g: g[seg]),))


def concat_cols(parts: Sequence[Var]) -> Var:
    vals = [p.value for p in parts]
    if any(v.ndim != 2 for v in vals) or len({v.shape[0] for v in vals}) != 1:
        raise ShapeError("concat_cols expects 2-d arrays with equal row counts")
    widths = [v.shape[1] for v in vals]
    offsets = np.cumsum([0] + widths)

    def back_for(k: int) -> VJP:
        lo, hi = offsets[k], offsets[k + 1]
        return lambda g: g[:, lo:hi]

    return Var(
        np.concatenate(vals, axis=1),
        parents=tuple((p, back_for(k)) for k, p in enumerate(parts)),
    )


def log_softmax(x: Var) -> Var:
    """Row-wise log-softmax, numerically stabilized by the row max."""
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def back(g: np.ndarray) -> np.ndarray:
        return g - probs * g.sum(axis=1, keepdims=True)

    return Var(out, parents=((x, back),))


def _topo_order(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Var, seed: np.ndarray) -> None:
    """Accumulate d(seed . root) into ``grad`` of every reachable node."""
    if seed.shape != root.value.shape:
        raise ShapeError(f"seed shape {seed.shape} != output shape {root.value.shape}")
    root.grad = np.asarray(seed, dtype=np.float64)
    for node in reversed(_topo_order(root)):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node.parents:
            pg = vjp(g)
            parent.grad = pg if parent.grad is None else parent.grad + pg


def min_relu_preactivation(root: Var) -> float:
    """Smallest |pre-activation| among all ReLU nodes under ``root``.

    Finite-difference checks step across ReLU kinks when this is tiny; tests
    use it to reject degenerate configurations. Returns +inf with no ReLUs.
    """
    best = np.inf
    for node in _topo_order(root):
        if node.tag == "relu" and node.parents:
            pre = node.parents[0][0].value
            if pre.size:
                best = min(best, float(np.min(np.abs(pre))))
    return best
