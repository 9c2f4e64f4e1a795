"""Monte-Carlo empirical Gaussian/Rademacher complexity and closed-form
bound evaluators.

The empirical Gaussian complexity of a class Q on data x_1..x_N is
E_g [ sup_q (1/sqrt(N)) sum_i g_i . q(x_i) ] with g_i standard normal; note
the 1/sqrt(N) normalization (not 1/N), so values reflect class size rather
than shrinking with N.  The supremum is exact for finite lists and linear
balls and approximated by multi-restart projected gradient ascent for
norm-budgeted network families.

All logarithms here are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError
from .netcore import (Mlp, DenseLayer, LinearHead, NormBudget,
                      _backward_from_cotangent, _forward_cached,
                      lipschitz_bound, spectral_norm)
from .seeding import make_rng


@dataclass
class FiniteFunctions:
    """Explicit list of member functions, each mapping an input row to an
    output vector (scalars are promoted to 1-vectors)."""

    functions: list[Callable]


@dataclass
class LinearBall:
    """Scalar-output linear functions x -> w.x with ||w||_2 <= radius."""

    radius: float


@dataclass
class NetFamily:
    """Bias-free dense networks within a per-layer spectral-norm budget.

    sizes[0] is the input dimension; each weight obeys
    ||W_k||_2 <= budget.m_k[k] (enforced by spectral rescaling; the infinity
    norm is not separately constrained), and an optional linear head with
    ||alpha||_2 <= budget.m_alpha makes the output scalar.  A single-layer
    head-free family with one output row is exactly the L2 linear ball.
    """

    budget: NormBudget
    sizes: list[int]
    activation: str = "relu"
    head: bool = True
    restarts: int = 8
    steps: int = 200


@dataclass
class ComplexityEstimate:
    mean: float
    stderr: float
    n_mc: int
    sup_method: str
    low_confidence: bool = False
    flagged_draws: int = 0


def _finite_sups(handle: FiniteFunctions, data: np.ndarray, draws: np.ndarray) -> np.ndarray:
    try:
        values = np.stack([
            np.stack([np.atleast_1d(np.asarray(fn(x), dtype=float)) for x in data])
            for fn in handle.functions
        ])  # (n_f, N, r)
    except ValueError as exc:
        raise ContractError(f"member functions must share output dimensions: {exc}") from exc
    if values.ndim != 3:
        raise ContractError("member functions must return fixed-size vectors")
    scores = np.einsum("fnr,mnr->mf", values, draws)
    return scores.max(axis=1) / math.sqrt(data.shape[0])


def _linear_ball_sups(handle: LinearBall, data: np.ndarray, draws: np.ndarray) -> np.ndarray:
    # sup_{||w||<=M} sum_i g_i w.x_i = M || sum_i g_i x_i ||_2
    sums = np.einsum("mn,nd->md", draws[:, :, 0], data)
    return handle.radius * np.linalg.norm(sums, axis=1) / math.sqrt(data.shape[0])


def _project_to_budget(net: Mlp, family: NetFamily) -> None:
    for layer, cap in zip(net.layers, family.budget.m_k):
        norm = spectral_norm(layer.weight)
        if norm > cap > 0:
            layer.weight *= cap / norm
        elif cap == 0:
            layer.weight[:] = 0.0
    if net.head is not None:
        norm = float(np.linalg.norm(net.head.alpha))
        if norm > family.budget.m_alpha > 0:
            net.head.alpha *= family.budget.m_alpha / norm
        elif family.budget.m_alpha == 0:
            net.head.alpha[:] = 0.0


def _random_member(family: NetFamily, rng) -> Mlp:
    layers = []
    for k in range(len(family.sizes) - 1):
        w = rng.standard_normal((family.sizes[k + 1], family.sizes[k]))
        layers.append(DenseLayer(weight=w, bias=np.zeros(family.sizes[k + 1]),
                                 activation=family.activation))
    head = None
    if family.head:
        head = LinearHead(alpha=rng.standard_normal(family.sizes[-1]), beta=0.0)
    net = Mlp(layers=layers, head=head)
    _project_to_budget(net, family)
    return net


def _net_objective(net: Mlp, data: np.ndarray, cotangent: np.ndarray):
    inputs, preacts, head_in, out = _forward_cached(net, data)
    value = float((out * cotangent).sum())
    return value, (inputs, preacts, head_in)


def _ascend_one_draw(family: NetFamily, data: np.ndarray, g: np.ndarray, rng):
    """Adaptive-step projected gradient ascent; returns (best value, improved)."""
    cot = g / math.sqrt(data.shape[0])
    best = -math.inf
    improved = False
    for _ in range(family.restarts):
        net = _random_member(family, rng)
        value, caches = _net_objective(net, data, cot)
        start = value
        lr = 0.25
        for _ in range(family.steps):
            grads = _backward_from_cotangent(net, *caches, cot)
            proposal = Mlp(layers=[DenseLayer(weight=l.weight.copy(), bias=l.bias,
                                              activation=l.activation)
                                   for l in net.layers],
                           head=None if net.head is None
                           else LinearHead(alpha=net.head.alpha.copy(), beta=0.0))
            for layer, (dw, _), cap in zip(proposal.layers, grads.layers,
                                           family.budget.m_k):
                norm = np.linalg.norm(dw)
                if norm > 0:
                    layer.weight += lr * max(cap, 1e-3) * dw / norm
            if proposal.head is not None and grads.head is not None:
                dalpha = grads.head[0]
                norm = np.linalg.norm(dalpha)
                if norm > 0:
                    proposal.head.alpha += lr * max(family.budget.m_alpha, 1e-3) * dalpha / norm
            _project_to_budget(proposal, family)
            new_value, new_caches = _net_objective(proposal, data, cot)
            if new_value > value:
                net, value, caches = proposal, new_value, new_caches
                lr = min(lr * 1.25, 1.0)
            else:
                lr = max(lr * 0.5, 1e-12)
        if value > start + 1e-15:
            improved = True
        best = max(best, value)
    return best, improved


def _estimate(handle, data, n_mc: int, seed: int, draw_kind: str) -> ComplexityEstimate:
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[0] == 0:
        raise ContractError("data must be non-empty")
    if n_mc < 1:
        raise ContractError("n_mc must be >= 1")

    if isinstance(handle, LinearBall):
        r = 1
    elif isinstance(handle, NetFamily):
        r = 1 if handle.head else handle.sizes[-1]
        if len(handle.budget.m_k) != len(handle.sizes) - 1:
            raise ContractError("budget length must match family depth")
    elif isinstance(handle, FiniteFunctions):
        r = np.atleast_1d(np.asarray(handle.functions[0](data[0]))).shape[0]
    else:
        raise ContractError(f"unknown function-class handle {type(handle).__name__}")

    # Draws are pre-generated in one table so results never depend on the
    # order individual sups are evaluated in.
    rng = make_rng(seed, "complexity", draw_kind)
    if draw_kind == "gaussian":
        draws = rng.standard_normal((n_mc, data.shape[0], r))
    else:
        draws = rng.integers(0, 2, size=(n_mc, data.shape[0], r)) * 2.0 - 1.0

    flagged = 0
    if isinstance(handle, FiniteFunctions):
        sups = _finite_sups(handle, data, draws)
        method = "enumerate"
    elif isinstance(handle, LinearBall):
        sups = _linear_ball_sups(handle, data, draws)
        method = "closed_form"
    else:
        values = []
        for m in range(n_mc):
            value, improved = _ascend_one_draw(handle, data, draws[m], rng)
            values.append(value)
            if not improved:
                flagged += 1
        sups = np.asarray(values)
        method = "ascent"

    stderr = float(sups.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else 0.0
    return ComplexityEstimate(mean=float(sups.mean()), stderr=stderr, n_mc=n_mc,
                              sup_method=method, low_confidence=flagged > 0,
                              flagged_draws=flagged)


def gaussian_complexity(handle, data, n_mc: int, seed: int) -> ComplexityEstimate:
    """Monte-Carlo estimate of the empirical Gaussian complexity."""
    return _estimate(handle, data, n_mc, seed, "gaussian")


def rademacher_complexity(handle, data, n_mc: int, seed: int) -> ComplexityEstimate:
    """Monte-Carlo estimate of the empirical Rademacher complexity (same
    normalization, +-1 draws)."""
    return _estimate(handle, data, n_mc, seed, "rademacher")


# ---------------------------------------------------------------------------
# Closed-form bound evaluators
# ---------------------------------------------------------------------------

def dnn_bound(budget: NormBudget, K: int, d_out: int, n: int) -> float:
    """Norm-based complexity bound for a depth-K network with linear head:
    2 * D_Z * sqrt(K + 2 + log d_out) * m_alpha * prod(m_k) / sqrt(n)."""
    budget.validate()
    if len(budget.m_k) != K:
        raise ContractError(f"budget has {len(budget.m_k)} layers, K={K}")
    if K < 1 or d_out < 1 or n < 1:
        raise ContractError("K, d_out and n must be >= 1")
    return float(2.0 * budget.d_z * math.sqrt(K + 2 + math.log(d_out))
                 * lipschitz_bound(budget) / math.sqrt(n))


def chain_bound(d_x: float, l_f: float, g_h: float, g_f_max: float,
                n: int, T: int) -> float:
    """Composite-class complexity bound:
    4 d_x / (nT)^{3/2} + 128 (l_f * g_h + g_f_max) log(nT)."""
    if n < 1 or T < 1:
        raise ContractError("n and T must be >= 1")
    if min(d_x, l_f, g_h, g_f_max) < 0:
        raise ContractError("bound inputs must be non-negative")
    nt = n * T
    return float(4.0 * d_x / nt ** 1.5 + 128.0 * (l_f * g_h + g_f_max) * math.log(nt))


def deviation_term(g_hat: float, n: float, delta: float) -> float:
    """High-probability deviation: sqrt(2 pi) g_hat / sqrt(n) + sqrt(9 ln(2/delta) / (2n))."""
    if not 0.0 < delta < 1.0:
        raise ContractError("delta must lie in (0, 1)")
    if n < 1:
        raise ContractError("n must be >= 1")
    if g_hat < 0:
        raise ContractError("g_hat must be non-negative")
    return float(math.sqrt(2.0 * math.pi) * g_hat / math.sqrt(n)
                 + math.sqrt(9.0 * math.log(2.0 / delta) / (2.0 * n)))


def target_bound(nu: float, mu: float, excess_source: float, g_hat_target: float,
                 n_ta: int, delta: float) -> float:
    """Target excess-error bound: nu * excess_source + mu + deviation_term."""
    if min(nu, mu, excess_source) < 0:
        raise ContractError("nu, mu and excess_source must be non-negative")
    return float(nu * excess_source + mu
                 + deviation_term(g_hat_target, n_ta, delta))
