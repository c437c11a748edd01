"""Minimal reverse-mode differentiation kernel.

A deliberately small tape over a fixed op vocabulary (matmul, add, mul,
sigmoid, tanh, exp, concat, column slices, masked reductions and a Cox
partial-likelihood loss node), plus named parameter storage with Adam
and a central finite-difference checker. Everything is float64 numpy;
graphs are rebuilt per call, so a "graph" is just a callable that
composes these ops.

Every op validates shapes up front and checks its output for NaN/inf so
a bad intermediate fails loudly with the op name instead of poisoning
the loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .survival import efron_nll_eta


class GraphError(RuntimeError):
    """Shape mismatch or non-finite intermediate inside a graph."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Var:
    """A node on the tape: value, accumulated gradient, backward closure."""

    __slots__ = ("value", "grad", "op", "_parents", "_backward")

    def __init__(self, value, op="leaf", parents=(), backward=None):
        self.value = _as_array(value)
        self.grad = None
        self.op = op
        self._parents = parents
        self._backward = backward
        if not np.all(np.isfinite(self.value)):
            raise GraphError(f"non-finite output of op '{op}'")

    @property
    def shape(self):
        return self.value.shape

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def backward(self):
        """Reverse sweep from a scalar node, accumulating into .grad."""
        if self.value.size != 1:
            raise GraphError("backward() requires a scalar loss node")
        topo: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in topo:
            node.grad = np.zeros_like(node.value)
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def const(x) -> Var:
    return Var(x, op="const")


def _accum(var: Var, g: np.ndarray):
    if var.grad is None:
        var.grad = np.zeros_like(var.value)
    var.grad += g


def matmul(a: Var, b: Var) -> Var:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise GraphError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Var(a.value @ b.value, op="matmul", parents=(a, b))

    def bwd(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    out._backward = bwd
    return out


def add(a: Var, b: Var) -> Var:
    try:
        val = a.value + b.value
    except ValueError:
        raise GraphError(f"add shape mismatch: {a.shape} + {b.shape}")
    out = Var(val, op="add", parents=(a, b))

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    out._backward = bwd
    return out


def mul(a: Var, b: Var) -> Var:
    try:
        val = a.value * b.value
    except ValueError:
        raise GraphError(f"mul shape mismatch: {a.shape} * {b.shape}")
    out = Var(val, op="mul", parents=(a, b))

    def bwd(g):
        _accum(a, _unbroadcast(g * b.value, a.shape))
        _accum(b, _unbroadcast(g * a.value, b.shape))

    out._backward = bwd
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def sigmoid(x: Var) -> Var:
    val = 1.0 / (1.0 + np.exp(-np.clip(x.value, -500, 500)))
    out = Var(val, op="sigmoid", parents=(x,))
    out._backward = lambda g: _accum(x, g * val * (1.0 - val))
    return out


def tanh(x: Var) -> Var:
    val = np.tanh(x.value)
    out = Var(val, op="tanh", parents=(x,))
    out._backward = lambda g: _accum(x, g * (1.0 - val * val))
    return out


def exp(x: Var) -> Var:
    out = Var(np.exp(x.value), op="exp", parents=(x,))
    out._backward = lambda g: _accum(x, g * out.value)
    return out


def col_slice(x: Var, start: int, stop: int) -> Var:
    if x.value.ndim != 2 or stop > x.shape[1]:
        raise GraphError(f"col_slice [{start}:{stop}] out of {x.shape}")
    out = Var(x.value[:, start:stop], op="col_slice", parents=(x,))

    def bwd(g):
        full = np.zeros_like(x.value)
        full[:, start:stop] = g
        _accum(x, full)

    out._backward = bwd
    return out


def concat_cols(parts: list[Var]) -> Var:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise GraphError(f"concat_cols row mismatch: {[p.shape for p in parts]}")
    out = Var(np.concatenate([p.value for p in parts], axis=1),
              op="concat_cols", parents=tuple(parts))

    def bwd(g):
        ofs = 0
        for p in parts:
            w = p.shape[1]
            _accum(p, g[:, ofs:ofs + w])
            ofs += w

    out._backward = bwd
    return out


def masked_sum(x: Var, mask: np.ndarray) -> Var:
    """Sum of x over positions where mask is true; scalar output."""
    if mask.shape != x.shape:
        raise GraphError(f"mask shape {mask.shape} != value shape {x.shape}")
    out = Var(x.value[mask].sum(), op="masked_sum", parents=(x,))

    def bwd(g):
        full = np.zeros_like(x.value)
        full[mask] = g
        _accum(x, full)

    out._backward = bwd
    return out


def sum_all(x: Var) -> Var:
    out = Var(x.value.sum(), op="sum", parents=(x,))
    out._backward = lambda g: _accum(x, np.broadcast_to(g, x.shape).copy())
    return out


def efron_loss(eta: Var, mask: np.ndarray, durations: np.ndarray,
               events: np.ndarray) -> Var:
    """Terminal loss node: Efron NLL over the valid (masked-in) slots.

    ``eta`` holds log hazard ratios per slot; slots where ``mask`` is
    false carry no observation and receive zero gradient.
    """
    if mask.shape != eta.shape:
        raise GraphError(f"mask shape {mask.shape} != eta shape {eta.shape}")
    flat = eta.value[mask]
    nll, grad_eta = efron_nll_eta(flat, durations, events)
    out = Var(nll, op="efron_loss", parents=(eta,))

    def bwd(g):
        full = np.zeros_like(eta.value)
        full[mask] = g * grad_eta
        _accum(eta, full)

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# parameter storage, Adam, serialization


class ParamStore:
    """Named float64 parameter tensors with Adam moment accumulators."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        arr = _as_array(value).copy()
        self.params[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def to_json(self, model_kind: str, meta: dict | None = None) -> str:
        doc = {
            "version": 1,
            "model_kind": model_kind,
            "meta": meta or {},
            "step": self.step,
            "params": {
                name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                for name, arr in self.params.items()
            },
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> tuple["ParamStore", str, dict]:
        doc = json.loads(text)
        if doc.get("version") != 1:
            raise ValueError(f"unsupported model file version {doc.get('version')!r}")
        store = cls()
        for name, spec in doc["params"].items():
            store.add(name, np.array(spec["data"]).reshape(spec["shape"]))
        store.step = int(doc.get("step", 0))
        return store, doc["model_kind"], doc.get("meta", {})


def adam_step(store: ParamStore, grads: dict[str, np.ndarray],
              lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place.

    Parameters stay untouched if any incoming gradient is non-finite.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise GraphError(f"non-finite gradient for parameter {name!r}")
        if g.shape != store.params[name].shape:
            raise GraphError(
                f"gradient shape {g.shape} != parameter shape "
                f"{store.params[name].shape} for {name!r}"
            )
    store.step += 1
    t = store.step
    for name, g in grads.items():
        store.m[name] = beta1 * store.m[name] + (1 - beta1) * g
        store.v[name] = beta2 * store.v[name] + (1 - beta2) * g * g
        m_hat = store.m[name] / (1 - beta1**t)
        v_hat = store.v[name] / (1 - beta2**t)
        store.params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """uniform(-k, k) with k = 1/sqrt(fan_in); the stock stable recipe."""
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape)


def forward_backward(graph, inputs, store: ParamStore):
    """Run ``graph(inputs, params)`` to a scalar loss and differentiate.

    Returns (loss value, {param name: gradient}). ``graph`` must build
    its output from Vars created over ``params`` (a dict name -> Var).
    """
    param_vars = {name: Var(arr, op=f"param:{name}")
                  for name, arr in store.params.items()}
    loss = graph(inputs, param_vars)
    if not isinstance(loss, Var) or loss.value.size != 1:
        raise GraphError("graph must return a scalar loss Var")
    loss.backward()
    grads = {name: var.grad if var.grad is not None else np.zeros_like(var.value)
             for name, var in param_vars.items()}
    return float(loss.value), grads


@dataclass
class FiniteDiffReport:
    max_rel_error: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.max_rel_error.values())

    def worst(self) -> tuple[str, float]:
        name = max(self.max_rel_error, key=self.max_rel_error.get)
        return name, self.max_rel_error[name]


def finite_diff_check(graph, inputs, store: ParamStore, step: float = 1e-4,
                      tolerance: float = 1e-4, max_coords: int = 200,
                      rng: np.random.Generator | None = None,
                      grads: dict[str, np.ndarray] | None = None) -> FiniteDiffReport:
    """Central-difference audit of the analytic gradients.

    Tensors larger than ``max_coords`` get a random sample of
    coordinates. Relative error uses a 1e-6 floor in the denominator so
    genuinely-zero gradients are compared absolutely against the
    difference noise instead of dividing by zero.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if grads is None:
        _, grads = forward_backward(graph, inputs, store)

    def loss_at() -> float:
        param_vars = {name: Var(arr, op=f"param:{name}")
                      for name, arr in store.params.items()}
        return float(graph(inputs, param_vars).value)

    report: dict[str, float] = {}
    for name, arr in store.params.items():
        flat = arr.ravel()
        n = flat.size
        coords = (np.arange(n) if n <= max_coords
                  else rng.choice(n, size=max_coords, replace=False))
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up = loss_at()
            flat[c] = orig - step
            down = loss_at()
            flat[c] = orig
            fd = (up - down) / (2 * step)
            an = grads[name].ravel()[c]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
            worst = max(worst, rel)
        report[name] = worst
    return FiniteDiffReport(max_rel_error=report, tolerance=tolerance)
