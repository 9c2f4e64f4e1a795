"""Dense feedforward networks with an optional scalar linear head.

Implements forward/backward passes for the square loss, SGD/Adam parameter
updates, measured operator norms, and the product-form Lipschitz and
boundedness estimates used by the complexity bounds.

Conventions: a network is a stack of dense layers z -> act(W z + b) followed
by an optional head z -> alpha.z + beta.  The square loss over a batch is the
mean of ||y_hat - y||_2^2 with no 1/2 factor.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError
from .seeding import make_rng

Array = np.ndarray

# Each entry maps to (function, derivative-in-terms-of-preactivation).
ACTIVATIONS = ("relu", "sigmoid", "identity")

# relu/identity are 1-Lipschitz with act(0) = 0, which the product-form norm
# bounds assume; sigmoid is only 1/4-Lipschitz and does not vanish at 0, so
# its constant is recorded separately and the training helpers exclude it.
ACTIVATION_LIPSCHITZ = {"relu": 1.0, "identity": 1.0, "sigmoid": 0.25}


def _act(z: Array, kind: str) -> Array:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        out = np.empty_like(z, dtype=float)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if kind == "identity":
        return np.asarray(z, dtype=float)
    raise ContractError(f"unknown activation {kind!r}")


def _act_grad(z: Array, kind: str) -> Array:
    if kind == "relu":
        return (z > 0.0).astype(float)
    if kind == "sigmoid":
        s = _act(z, "sigmoid")
        return s * (1.0 - s)
    if kind == "identity":
        return np.ones_like(z, dtype=float)
    raise ContractError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    weight: Array  # (out, in)
    bias: Array  # (out,)
    activation: str = "relu"


@dataclass
class LinearHead:
    alpha: Array  # (in,)
    beta: float = 0.0


@dataclass
class Mlp:
    layers: list[DenseLayer]
    head: LinearHead | None = None

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return 1 if self.head is not None else self.layers[-1].weight.shape[0]


def validate(net: Mlp) -> None:
    """Check dimension chaining, known activations and finite entries."""
    if not net.layers:
        raise ContractError("network needs at least one layer")
    prev_out = None
    for k, layer in enumerate(net.layers):
        w, b = np.asarray(layer.weight), np.asarray(layer.bias)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ContractError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
        if prev_out is not None and w.shape[1] != prev_out:
            raise ContractError(f"layer {k}: expects {w.shape[1]} inputs, got {prev_out}")
        if layer.activation not in ACTIVATIONS:
            raise ContractError(f"layer {k}: unknown activation {layer.activation!r}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise NumericError(f"layer {k} has non-finite entries")
        prev_out = w.shape[0]
    if net.head is not None:
        alpha = np.asarray(net.head.alpha)
        if alpha.shape != (prev_out,):
            raise ContractError(f"head expects {prev_out} inputs, got {alpha.shape}")
        if not np.isfinite(alpha).all() or not np.isfinite(net.head.beta):
            raise NumericError("head has non-finite entries")


def forward_batch(net: Mlp, xs: Array) -> Array:
    """Evaluate the network on a batch, rows of `xs`; returns (n, out_dim)."""
    z = np.asarray(xs, dtype=float)
    if z.ndim != 2 or z.shape[1] != net.in_dim:
        raise ContractError(f"input shape {z.shape} incompatible with in_dim {net.in_dim}")
    for layer in net.layers:
        z = _act(z @ layer.weight.T + layer.bias, layer.activation)
    if net.head is not None:
        z = (z @ net.head.alpha + net.head.beta)[:, None]
    return z


def forward(net: Mlp, x: Array) -> Array:
    """Evaluate the network on a single input vector."""
    return forward_batch(net, np.asarray(x, dtype=float)[None, :])[0]


def _forward_cached(net: Mlp, xs: Array):
    """Forward pass keeping per-layer inputs and pre-activations."""
    z = np.asarray(xs, dtype=float)
    inputs, preacts = [], []
    for layer in net.layers:
        inputs.append(z)
        pre = z @ layer.weight.T + layer.bias
        preacts.append(pre)
        z = _act(pre, layer.activation)
    head_in = z
    if net.head is not None:
        z = (z @ net.head.alpha + net.head.beta)[:, None]
    return inputs, preacts, head_in, z


@dataclass
class Gradients:
    """Gradient structure shaped like the network parameters."""

    layers: list[tuple[Array, Array]]  # (dW, db) per layer
    head: tuple[Array, float] | None = None  # (dalpha, dbeta)

    def as_list(self) -> list[Array]:
        out: list[Array] = []
        for dw, db in self.layers:
            out.extend((dw, db))
        if self.head is not None:
            out.extend((self.head[0], np.asarray([self.head[1]])))
        return out


def _backward_from_cotangent(net: Mlp, inputs, preacts, head_in, d_out: Array) -> Gradients:
    """Propagate d(objective)/d(output) back to every parameter."""
    head_grad = None
    if net.head is not None:
        dalpha = head_in.T @ d_out[:, 0]
        dbeta = float(d_out.sum())
        dz = d_out @ net.head.alpha[None, :]
        head_grad = (dalpha, dbeta)
    else:
        dz = d_out
    layer_grads: list[tuple[Array, Array]] = [None] * len(net.layers)  # type: ignore
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        dpre = dz * _act_grad(preacts[k], layer.activation)
        layer_grads[k] = (dpre.T @ inputs[k], dpre.sum(axis=0))
        if k > 0:
            dz = dpre @ layer.weight
    return Gradients(layers=layer_grads, head=head_grad)


def loss_and_gradients(net: Mlp, xs: Array, ys: Array) -> tuple[float, Gradients]:
    """Mean squared loss over the batch and its exact parameter gradient."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape[0] == 0:
        raise ContractError("empty batch")
    if ys.ndim == 1:
        ys = ys[:, None]
    inputs, preacts, head_in, out = _forward_cached(net, xs)
    if out.shape != ys.shape:
        raise ContractError(f"labels {ys.shape} do not match outputs {out.shape}")
    resid = out - ys
    loss = float((resid ** 2).sum() / xs.shape[0])
    grads = _backward_from_cotangent(net, inputs, preacts, head_in, 2.0 * resid / xs.shape[0])
    return loss, grads


def backward(net: Mlp, batch, loss: str = "square") -> Gradients:
    """Gradient of the mean squared loss over a list of (x, y) pairs."""
    if loss != "square":
        raise ContractError(f"unsupported loss {loss!r}")
    if not batch:
        raise ContractError("empty batch")
    xs = np.stack([np.atleast_1d(np.asarray(x, dtype=float)) for x, _ in batch])
    ys = np.stack([np.atleast_1d(np.asarray(y, dtype=float)) for _, y in batch])
    return loss_and_gradients(net, xs, ys)[1]


def parameters(net: Mlp) -> list[Array]:
    """Flat list of parameter arrays (weights, biases, head last)."""
    out: list[Array] = []
    for layer in net.layers:
        out.extend((layer.weight, layer.bias))
    if net.head is not None:
        out.extend((net.head.alpha, np.asarray([net.head.beta])))
    return out


def with_parameters(net: Mlp, arrays: list[Array]) -> Mlp:
    """Copy of `net` with parameters replaced by `arrays` (parameters() order)."""
    expected = parameters(net)
    if len(arrays) != len(expected):
        raise ContractError(f"expected {len(expected)} arrays, got {len(arrays)}")
    new = copy.deepcopy(net)
    it = iter(arrays)
    for layer in new.layers:
        layer.weight = np.array(next(it), dtype=float)
        layer.bias = np.array(next(it), dtype=float)
    if new.head is not None:
        new.head.alpha = np.array(next(it), dtype=float)
        new.head.beta = float(np.asarray(next(it)).reshape(()))
    return new


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

@dataclass
class OptState:
    method: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: list[Array] = field(default_factory=list)
    v: list[Array] = field(default_factory=list)
    step_count: int = 0


def init_opt_state(params: list[Array], method: str = "adam",
                   learning_rate: float = 1e-3) -> OptState:
    if method not in ("adam", "sgd"):
        raise ContractError(f"unknown optimizer {method!r}")
    zeros = [np.zeros_like(np.asarray(p, dtype=float)) for p in params]
    return OptState(method=method, learning_rate=learning_rate,
                    m=zeros, v=[z.copy() for z in zeros])


def step(opt: OptState, params: list[Array], grads: list[Array]) -> tuple[list[Array], OptState]:
    """One optimizer update; returns new parameters and the advanced state."""
    if len(params) != len(grads):
        raise ContractError("params/grads length mismatch")
    params = [np.asarray(p, dtype=float) for p in params]
    grads = [np.asarray(g, dtype=float) for g in grads]
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {p.shape}")
    lr = opt.learning_rate
    if opt.method == "sgd":
        new_params = [p - lr * g for p, g in zip(params, grads)]
        return new_params, OptState(method="sgd", learning_rate=lr,
                                    m=opt.m, v=opt.v, step_count=opt.step_count + 1)
    t = opt.step_count + 1
    new_m, new_v, new_params = [], [], []
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        if m.shape != p.shape:
            raise ContractError("moment shape does not match parameter shape")
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * g * g
        m_hat = m / (1.0 - opt.beta1 ** t)
        v_hat = v / (1.0 - opt.beta2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + opt.epsilon))
        new_m.append(m)
        new_v.append(v)
    new_state = OptState(method="adam", learning_rate=lr, beta1=opt.beta1,
                         beta2=opt.beta2, epsilon=opt.epsilon,
                         m=new_m, v=new_v, step_count=t)
    return new_params, new_state


# ---------------------------------------------------------------------------
# Norm budgets and bound formulas
# ---------------------------------------------------------------------------

@dataclass
class NormBudget:
    """Per-layer operator-norm budget plus head and input-scale bounds.

    m_k[k] bounds max(infinity norm, spectral norm) of layer k's weight,
    m_alpha bounds the head's L2 norm, d_z bounds the size of representation
    outputs fed into the network.
    """

    m_alpha: float
    m_k: list[float]
    d_z: float = 0.0

    def validate(self) -> None:
        if self.m_alpha < 0 or self.d_z < 0 or any(m < 0 for m in self.m_k):
            raise ContractError("norm budget entries must be non-negative")


def lipschitz_bound(budget: NormBudget) -> float:
    """L2 Lipschitz constant implied by the budget: m_alpha * prod(m_k)."""
    budget.validate()
    return float(budget.m_alpha * np.prod([float(m) for m in budget.m_k]))


def output_bound(budget: NormBudget) -> float:
    """Bound on the diameter of the output set: 2 * d_z * m_alpha * prod(m_k).

    The factor 2 comes from bounding ||f(z) - f'(z')|| by twice the largest
    single output norm.
    """
    budget.validate()
    return float(2.0 * budget.d_z * lipschitz_bound(budget))


def spectral_norm(w: Array, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value via power iteration with a fixed start vector."""
    w = np.asarray(w, dtype=float)
    if w.size == 0 or not w.any():
        return 0.0
    v = make_rng(0x5EC7, "power-iteration", w.shape).standard_normal(w.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        u = w @ v
        norm_u = np.linalg.norm(u)
        if norm_u == 0.0:
            return 0.0
        v = w.T @ (u / norm_u)
        sigma_new = np.linalg.norm(v)
        v /= sigma_new
        if abs(sigma_new - sigma) <= tol * max(1.0, sigma_new):
            return float(sigma_new)
        sigma = sigma_new
    raise NumericError(f"power iteration did not converge within {max_iter} iterations")


def measured_norms(net: Mlp) -> NormBudget:
    """Measured per-layer max(infinity norm, spectral norm) and head L2 norm.

    A headless network gets m_alpha = 1 so the product formulas reduce to the
    bare layer product.  d_z is an input-scale bound the caller must supply;
    it is returned as 0.
    """
    validate(net)
    m_k = []
    for layer in net.layers:
        inf_norm = float(np.abs(layer.weight).sum(axis=1).max())
        m_k.append(max(inf_norm, spectral_norm(layer.weight)))
    m_alpha = float(np.linalg.norm(net.head.alpha)) if net.head is not None else 1.0
    return NormBudget(m_alpha=m_alpha, m_k=m_k, d_z=0.0)
