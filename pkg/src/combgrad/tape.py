"""A small reverse-mode tape over float64 numpy arrays.

Just enough autodiff to train the experiment models end to end: dense ops,
log-softmax / NLL heads, an embedding gather, a straight-through Gumbel
sampler, and `comb_node`, which splices an optimal-value layer (matching or
alignment) into the graph using its witness-based gradient instead of
differentiating through the solver.

Values are ordinary numpy arrays; gradients accumulate into `.grad` during
`backward()`, which runs an iterative topological sort (no recursion-depth
issues on long unrolled sequences).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .core import CombLayer, assemble_gengrad, comb_loss_backward
from .errors import DimensionMismatch, NonFinite, ShapeMismatch


class Tensor:
    """One node of the tape: a value, its parents, and a backward closure."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward: Optional[Callable] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into every reachable node's .grad."""
        if self.value.size != 1:
            raise DimensionMismatch("backward() starts from a scalar")
        if not np.isfinite(self.value):
            raise NonFinite("backward() from a non-finite loss")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = np.zeros_like(node.value)
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _acc(t: Tensor, g: np.ndarray) -> None:
    t.grad += _unbroadcast(g, t.value.shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value @ b.value, (a, b))

    def _bw():
        _acc(a, out.grad @ b.value.T)
        _acc(b, a.value.T @ out.grad)

    out._backward = _bw
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value + b.value, (a, b))

    def _bw():
        _acc(a, out.grad)
        _acc(b, out.grad)

    out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value * b.value, (a, b))

    def _bw():
        _acc(a, out.grad * b.value)
        _acc(b, out.grad * a.value)

    out._backward = _bw
    return out


def scale(a: Tensor, alpha: float) -> Tensor:
    alpha = float(alpha)
    out = Tensor(a.value * alpha, (a,))

    def _bw():
        _acc(a, out.grad * alpha)

    out._backward = _bw
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    out = Tensor(y, (a,))

    def _bw():
        _acc(a, out.grad * (1.0 - y * y))

    out._backward = _bw
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.value, 0.0), (a,))

    def _bw():
        _acc(a, out.grad * (a.value > 0.0))

    out._backward = _bw
    return out


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax of a 2-D tensor."""
    if a.value.ndim != 2:
        raise ShapeMismatch("log_softmax expects a 2-D tensor")
    x = a.value
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = Tensor(shifted - lse, (a,))

    def _bw():
        soft = np.exp(out.value)
        _acc(a, out.grad - soft * out.grad.sum(axis=1, keepdims=True))

    out._backward = _bw
    return out


def softmax_t(a: Tensor, tau: float) -> Tensor:
    """Row-wise tempered softmax, softmax(x / tau) — the soft feed for
    decoders that consume their own output distribution."""
    if a.value.ndim != 2:
        raise ShapeMismatch("softmax_t expects a 2-D tensor")
    tau = float(tau)
    z = a.value / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y, (a,))

    def _bw():
        gy = out.grad
        _acc(a, (y / tau) * (gy - (gy * y).sum(axis=1, keepdims=True)))

    out._backward = _bw
    return out


def gumbel_softmax_st(logits: Tensor, tau: float, rng: np.random.Generator) -> Tensor:
    """Straight-through Gumbel sampler over rows.

    Forward emits the one-hot of argmax(logits + Gumbel noise), an exact
    categorical sample from softmax(logits); backward routes gradients
    through the tempered softmax of the noisy logits at temperature tau.
    """
    if logits.value.ndim != 2:
        raise ShapeMismatch("gumbel_softmax_st expects a 2-D tensor")
    tau = float(tau)
    u = rng.uniform(low=np.finfo(np.float64).tiny, high=1.0, size=logits.value.shape)
    noisy = logits.value - np.log(-np.log(u))
    z = noisy / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    soft = e / e.sum(axis=1, keepdims=True)
    hard = np.zeros_like(soft)
    hard[np.arange(soft.shape[0]), noisy.argmax(axis=1)] = 1.0
    out = Tensor(hard, (logits,))

    def _bw():
        gy = out.grad
        _acc(logits, (soft / tau) * (gy - (gy * soft).sum(axis=1, keepdims=True)))

    out._backward = _bw
    return out


def nll(logp: Tensor, targets: np.ndarray, *, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood under row log-probabilities.

    targets may be integer class ids (n,) or one-hot rows (n, d)."""
    if reduction not in ("mean", "sum"):
        raise ValueError("reduction must be 'mean' or 'sum'")
    targets = np.asarray(targets)
    if targets.ndim == 2:
        if targets.shape != logp.value.shape:
            raise ShapeMismatch("one-hot targets must match the log-prob shape")
        ids = targets.argmax(axis=1)
    else:
        ids = targets.astype(np.int64)
    if logp.value.ndim != 2 or ids.ndim != 1 or ids.shape[0] != logp.value.shape[0]:
        raise ShapeMismatch("nll expects (n, d) log-probs and (n,) targets")
    n = ids.shape[0]
    picked = logp.value[np.arange(n), ids]
    val = -picked.sum()
    if reduction == "mean":
        val /= n
    out = Tensor(val, (logp,))

    def _bw():
        w = float(out.grad)
        if reduction == "mean":
            w /= n
        g = np.zeros_like(logp.value)
        np.subtract.at(g, (np.arange(n), ids), w)
        _acc(logp, g)

    out._backward = _bw
    return out


def tsum(a: Tensor) -> Tensor:
    out = Tensor(a.value.sum(), (a,))

    def _bw():
        _acc(a, np.full_like(a.value, float(out.grad)))

    out._backward = _bw
    return out


def tmean(a: Tensor) -> Tensor:
    out = Tensor(a.value.mean(), (a,))

    def _bw():
        _acc(a, np.full_like(a.value, float(out.grad) / a.value.size))

    out._backward = _bw
    return out


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather table[ids]; backward scatter-adds (repeats accumulate)."""
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.value[ids], (table,))

    def _bw():
        g = np.zeros_like(table.value)
        np.add.at(g, ids, out.grad)
        _acc(table, g)

    out._backward = _bw
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [t.value for t in tensors]
    out = Tensor(np.concatenate(parts, axis=axis), tuple(tensors))
    sizes = [p.shape[axis] for p in parts]

    def _bw():
        offs = np.cumsum([0] + sizes)
        for t, lo, hi in zip(tensors, offs[:-1], offs[1:]):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(lo, hi)
            _acc(t, out.grad[tuple(sl)])

    out._backward = _bw
    return out


def comb_node(w: Tensor, layer: CombLayer) -> Tensor:
    """Splice an optimal-value layer into the graph.

    Forward runs the layer's discrete solver on the parameters; backward
    multiplies the upstream scalar through the witness-based gradient and
    the layer's chain maps — one solve total, no differentiation through
    the solver.
    """
    outcome, chains = layer.run(w.value.ravel())
    out = Tensor(outcome.z_star, (w,))

    def _bw():
        gg = assemble_gengrad(outcome, layer.dependence)
        gw = comb_loss_backward(gg, chains, float(out.grad))
        _acc(w, gw.reshape(w.value.shape))

    out._backward = _bw
    return out


def custom_node(parents: Sequence[Tensor], value, vjps: Sequence[Callable]) -> Tensor:
    """A tensor whose forward value and per-parent vector-Jacobian products
    were computed outside the tape (e.g. a batched discrete loss)."""
    if len(parents) != len(vjps):
        raise ShapeMismatch("one vjp per parent required")
    out = Tensor(value, tuple(parents))

    def _bw():
        for p, vjp in zip(parents, vjps):
            _acc(p, np.asarray(vjp(out.grad), dtype=np.float64))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# Parameters, optimizers, checkpoints.
# ---------------------------------------------------------------------------


@dataclass
class ParamStore:
    """Named trainable tensors plus optimizer slots and the step counter."""

    params: Dict[str, Tensor] = field(default_factory=dict)
    seed: int = 0
    state: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float64))
        self.params[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def collect_grads(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, t in self.params.items():
            out[name] = np.zeros_like(t.value) if t.grad is None else t.grad
        return out


def sgd_step(store: ParamStore, lr: float) -> None:
    for t in store.params.values():
        if t.grad is not None:
            t.value -= lr * t.grad
    store.step += 1


def adam_step(
    store: ParamStore,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update with bias correction (defaults are the standard ones)."""
    store.step += 1
    t = store.step
    m_slot = store.state.setdefault("m", {})
    v_slot = store.state.setdefault("v", {})
    for name, p in store.params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = m_slot.get(name)
        v = v_slot.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        m_slot[name] = m
        v_slot[name] = v
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        p.value -= lr * mhat / (np.sqrt(vhat) + eps)


_CKPT_MAGIC = "combgrad-params v1"


def save_checkpoint(store: ParamStore, path: str) -> None:
    """Plain-text checkpoint: magic line, seed/step, then one parameter per
    block with shape header and %.17g values (exact float64 round-trip)."""
    buf = io.StringIO()
    buf.write(_CKPT_MAGIC + "\n")
    buf.write(f"seed {store.seed}\n")
    buf.write(f"step {store.step}\n")
    for name, t in store.params.items():
        dims = " ".join(str(d) for d in t.value.shape)
        buf.write(f"param {name} {t.value.ndim} {dims}".rstrip() + "\n")
        buf.write(" ".join("%.17g" % x for x in t.value.ravel()) + "\n")
    buf.write("end\n")
    with open(path, "w") as f:
        f.write(buf.getvalue())


def load_checkpoint(path: str) -> ParamStore:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != _CKPT_MAGIC:
        raise ValueError("not a recognized checkpoint file")
    store = ParamStore()
    i = 1
    while i < len(lines):
        line = lines[i]
        if line == "end":
            break
        head = line.split()
        if head[0] == "seed":
            store.seed = int(head[1])
            i += 1
        elif head[0] == "step":
            store.step = int(head[1])
            i += 1
        elif head[0] == "param":
            name = head[1]
            ndim = int(head[2])
            shape = tuple(int(x) for x in head[3 : 3 + ndim])
            raw = lines[i + 1].split()
            vals = np.array([float(x) for x in raw], dtype=np.float64)
            store.add(name, vals.reshape(shape))
            i += 2
        else:
            raise ValueError(f"unrecognized checkpoint line: {line!r}")
    return store


@dataclass(frozen=True)
class GumbelConfig:
    """Temperature schedule for the straight-through sampler.

    tau_at(epoch) anneals linearly from `start` by `step` per epoch, never
    below `floor`; epochs count from 1.  resample_per_step=False reuses one
    noise draw per epoch instead of drawing fresh noise every optimizer
    step.
    """

    start: float = 5.0
    step: float = 0.5
    floor: float = 1.0
    resample_per_step: bool = True

    def tau_at(self, epoch: int) -> float:
        return max(self.start - self.step * (epoch - 1), self.floor)
