"""Lower-bound gadgets: sphere packings, the thresholded depth-1 families,
and their worst-case evaluation distributions.

The construction pattern: take a packing of unit vectors with pairwise inner
products at most 1 - eps.  Thresholded units f_w(x) = act(<x, w>) peak only
where <x, w> exceeds 1 - eps/4, which a unit w can manage at no more than
one packing point, while every source task vanishes (or is tiny) off its own
peak.  Evaluating against a distribution supported on the points where all
sources vanish, with one representation collapsing everything to a single
peak point u and the other being the identity, the sources can be fit
perfectly while no single function can match the target's peak across the
support, forcing the measured excess-error ratio apart.

The infimum over the continuous weight ball is taken over an analytic
candidate set (packing vectors and their negations, the support, the zero
vector) plus a seeded direction grid; for the axes packing the candidate
set is exact because a feasible function can be nonzero on at most one
support point, so the optimum zeroes exactly one term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConstructionInfeasibleError, ContractError
from .seeding import make_rng


@dataclass
class Packing:
    """Unit vectors with pairwise inner products at most 1 - eps."""

    vectors: np.ndarray  # (n, d)
    eps: float

    def validate(self) -> None:
        if not 0.0 < self.eps <= 1.0:
            raise ContractError("packing eps must lie in (0, 1]")
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2 or v.shape[0] == 0:
            raise ContractError("packing must hold at least one vector")
        norms = np.linalg.norm(v, axis=1)
        if np.abs(norms - 1.0).max() > 1e-12:
            raise ContractError("packing vectors must be unit length")
        grams = v @ v.T
        off = grams - np.diag(np.diag(grams))
        if v.shape[0] > 1 and off.max() > 1.0 - self.eps + 1e-12:
            raise ContractError("pairwise inner product exceeds 1 - eps")

    @property
    def count(self) -> int:
        return self.vectors.shape[0]


def make_packing(d: int, eps: float, strategy: str = "axes", count: int | None = None,
                 seed: int = 0, rejection_budget: int = 10_000) -> Packing:
    """Axes strategy returns {+-e_1..+-e_d}; greedy sampling keeps random
    unit vectors that respect the constraint until `count` of them are found
    or the rejection budget runs out (a partial packing is not an error)."""
    if d < 1:
        raise ContractError("d must be >= 1")
    if not 0.0 < eps <= 1.0:
        raise ContractError("eps must lie in (0, 1]")
    if strategy == "axes":
        eye = np.eye(d)
        packing = Packing(vectors=np.concatenate([eye, -eye]), eps=eps)
    elif strategy == "greedy":
        if count is None or count < 1:
            raise ContractError("greedy strategy needs a target count")
        rng = make_rng(seed, "greedy-packing", d, eps)
        kept: list[np.ndarray] = []
        rejections = 0
        while len(kept) < count and rejections < rejection_budget:
            v = rng.standard_normal(d)
            v /= np.linalg.norm(v)
            if all(float(v @ u) <= 1.0 - eps for u in kept):
                kept.append(v)
            else:
                rejections += 1
        packing = Packing(vectors=np.stack(kept), eps=eps)
    else:
        raise ContractError(f"unknown packing strategy {strategy!r}")
    packing.validate()
    return packing


def lift_with_offset(packing: Packing, c: float) -> Packing:
    """Append a constant coordinate c to every vector (rescaled back onto the
    sphere) so weight vectors gain a bias slot; the separation shrinks to
    eps * (1 - c^2)."""
    if not 0.0 <= c < 1.0:
        raise ContractError("offset coordinate must lie in [0, 1)")
    scale = math.sqrt(1.0 - c * c)
    lifted = np.concatenate([scale * packing.vectors,
                             np.full((packing.count, 1), c)], axis=1)
    out = Packing(vectors=lifted, eps=packing.eps * (1.0 - c * c))
    out.validate()
    return out


# ---------------------------------------------------------------------------
# Thresholded depth-1 families
# ---------------------------------------------------------------------------

_ACTIVATIONS = {
    "relu": lambda z: np.maximum(z, 0.0),
    "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500))),
    "identity": lambda z: np.asarray(z, dtype=float),
}


def relu_family_eval(w, x, eps: float) -> float:
    """max(0, <x, w> - (1 - eps/4)) with unit-ball preconditions."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.linalg.norm(w) > 1.0 + 1e-12:
        raise ContractError("||w|| must be at most 1")
    if np.linalg.norm(x) > 1.0 + 1e-12:
        raise ContractError("||x|| must be at most 1")
    return float(max(0.0, float(x @ w) - (1.0 - eps / 4.0)))


@dataclass
class ReluFamily:
    eps: float

    def batch_eval(self, ws: np.ndarray, xs: np.ndarray) -> np.ndarray:
        return np.maximum(0.0, ws @ xs.T - (1.0 - self.eps / 4.0))

    @property
    def kind(self) -> str:
        return f"relu(eps={self.eps})"


@dataclass
class GeneralFamily:
    """x -> act(8(x1 - x2) <x, w> - 7 x1 + 8 x2): the argument equals x1 when
    the inner product is 1 and crosses x2 at inner product 7/8."""

    activation: str
    x1: float
    x2: float
    M: float

    def batch_eval(self, ws: np.ndarray, xs: np.ndarray) -> np.ndarray:
        a = 8.0 * (self.x1 - self.x2)
        b = -7.0 * self.x1 + 8.0 * self.x2
        return _ACTIVATIONS[self.activation](a * (ws @ xs.T) + b)

    @property
    def kind(self) -> str:
        return f"general({self.activation}, x1={self.x1}, x2={self.x2})"


def left_tail_sup(activation: str, x2: float, grid: int = 20_001,
                  reach: float = 80.0) -> float:
    """sup_{x <= x2} |act(x)|, taken numerically over a grid."""
    fn = _ACTIVATIONS[activation]
    zs = np.linspace(x2 - reach, x2, grid)
    return float(np.abs(fn(zs)).max())


@dataclass
class HardInstance:
    packing: Packing
    family: ReluFamily | GeneralFamily
    source_params: np.ndarray   # (T, d)
    target_param: np.ndarray    # (d,)
    support: np.ndarray         # (m, d) evaluation support V'
    weights: np.ndarray         # (m,)
    rep_image: np.ndarray       # u: the collapsing representation's image
    source_excess: float = math.nan
    target_excess: float = math.nan
    ratio: float = math.nan

    def validate(self) -> None:
        self.packing.validate()
        if self.support.shape[0] != self.weights.shape[0]:
            raise ContractError("support and weights disagree")
        if abs(self.weights.sum() - 1.0) > 1e-9 or (self.weights < 0).any():
            raise ContractError("weights must be a distribution")


def _candidate_weights(inst: HardInstance) -> np.ndarray:
    d = inst.packing.vectors.shape[1]
    rows = [inst.packing.vectors, -inst.packing.vectors, inst.support,
            inst.rep_image[None, :], np.zeros((1, d))]
    if inst.source_params.size:
        rows.append(inst.source_params)
    rows.append(inst.target_param[None, :])
    return np.unique(np.concatenate(rows, axis=0), axis=0)


def _sphere_grid(d: int, n: int, seed: int) -> np.ndarray:
    g = make_rng(seed, "hardness-grid", d, n).standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _infimum(inst: HardInstance, truth: float, n_grid: int, seed: int) -> float:
    """inf over the weight ball of sum_x w_x (f_w(x) - truth)^2, via the
    analytic candidates plus a seeded direction grid, with coordinate-descent
    refinement above three dimensions."""
    ws = _candidate_weights(inst)
    if n_grid > 0:
        ws = np.concatenate([ws, _sphere_grid(inst.packing.vectors.shape[1],
                                              n_grid, seed)], axis=0)
    values = inst.family.batch_eval(ws, inst.support)
    objectives = (inst.weights[None, :] * (values - truth) ** 2).sum(axis=1)
    best = float(objectives.min())
    d = inst.packing.vectors.shape[1]
    if d > 3 and n_grid > 0:
        best = min(best, _coordinate_descent(inst, truth,
                                             ws[int(objectives.argmin())]))
    return best


def _coordinate_descent(inst: HardInstance, truth: float, w0: np.ndarray,
                        sweeps: int = 4, steps: int = 41) -> float:
    w = np.array(w0, dtype=float)

    def objective(wv):
        vals = inst.family.batch_eval(wv[None, :], inst.support)[0]
        return float((inst.weights * (vals - truth) ** 2).sum())

    best = objective(w)
    for _ in range(sweeps):
        for i in range(w.shape[0]):
            for value in np.linspace(-1.0, 1.0, steps):
                trial = w.copy()
                trial[i] = value
                norm = np.linalg.norm(trial)
                if norm > 1.0:
                    trial /= norm
                obj = objective(trial)
                if obj < best:
                    best, w = obj, trial
    return best


def evaluate_instance(inst: HardInstance, n_grid: int | None = None,
                      seed: int = 0) -> tuple[float, float, float]:
    """Exact finite sums over the evaluation support; infima over the family
    via candidates plus grid.  Returns (source_excess, target_excess, ratio);
    a zero source excess yields an infinite ratio sentinel when the target
    excess is positive and 0 otherwise."""
    inst.validate()
    if n_grid is None:
        n_grid = 10_000
    T = inst.source_params.shape[0]
    if T:
        truths = inst.family.batch_eval(inst.source_params,
                                        inst.rep_image[None, :])[:, 0]
        source = float(np.mean([_infimum(inst, truths[t], n_grid, seed)
                                for t in range(T)]))
    else:
        source = 0.0
    target_truth = float(inst.family.batch_eval(inst.target_param[None, :],
                                                inst.rep_image[None, :])[0, 0])
    target = _infimum(inst, target_truth, n_grid, seed)
    if source == 0.0:
        ratio = math.inf if target > 1e-15 else 0.0
    else:
        ratio = target / source
    return source, target, ratio


def _vanishing_set(packing: Packing, values_on_packing: np.ndarray,
                   tol: float = 1e-12) -> np.ndarray:
    """Indices of packing points where every source value is below tol."""
    if values_on_packing.size == 0:
        return np.arange(packing.count)
    return np.where(np.abs(values_on_packing).max(axis=0) <= tol)[0]


def _finalize(inst: HardInstance, n_grid: int | None, seed: int) -> HardInstance:
    inst.source_excess, inst.target_excess, inst.ratio = evaluate_instance(
        inst, n_grid=n_grid, seed=seed)
    return inst


def _locate_in_packing(packing: Packing, w: np.ndarray) -> int:
    match = np.where(np.linalg.norm(packing.vectors - w[None, :], axis=1) <= 1e-12)[0]
    if match.size == 0:
        raise ContractError("vector is not a packing member")
    return int(match[0])


def build_relu_hard_instance(d: int, eps: float, sources, target_u=None,
                             n_grid: int | None = None, seed: int = 0,
                             offset_coordinate: float | None = None) -> HardInstance:
    """Separation instance for the thresholded-relu family on the axes
    packing: sources can be fit exactly (excess 0) while the best fit of the
    target is at least eps^2/32 away."""
    packing = make_packing(d, eps, strategy="axes")
    source_idx = [_locate_in_packing(packing, np.asarray(w, dtype=float))
                  for w in sources]
    if offset_coordinate is not None:
        packing = lift_with_offset(packing, offset_coordinate)
        eps = packing.eps
    family = ReluFamily(eps=eps)
    source_params = (packing.vectors[source_idx] if source_idx
                     else np.zeros((0, packing.vectors.shape[1])))

    values = family.batch_eval(source_params, packing.vectors) \
        if source_params.size else np.zeros((0, packing.count))
    vanishing = _vanishing_set(packing, values)
    if vanishing.size == 0:
        raise ConstructionInfeasibleError("every packing point is peaked by a source")

    if target_u is None:
        u_idx = int(vanishing[0])
    else:
        u_idx = _locate_in_packing(packing, np.asarray(target_u, dtype=float))
        if u_idx not in vanishing:
            raise ContractError("target_u must belong to the vanishing set")
    support_idx = [i for i in vanishing if i != u_idx]
    if not support_idx:
        raise ConstructionInfeasibleError("no support left after removing the peak")

    u = packing.vectors[u_idx]
    support = packing.vectors[support_idx]
    inst = HardInstance(packing=packing, family=family,
                        source_params=source_params, target_param=u,
                        support=support,
                        weights=np.full(len(support_idx), 1.0 / len(support_idx)),
                        rep_image=u)
    _finalize(inst, n_grid, seed)
    if inst.source_excess > 1e-9:
        raise ContractError(f"source excess {inst.source_excess} not ~0")
    if inst.target_excess < eps ** 2 / 32.0 - 1e-9:
        raise ContractError(f"target excess {inst.target_excess} below eps^2/32")
    return inst


def build_general_hard_instance(activation: str, x1: float, x2: float, M: float,
                                d: int, sources, target_u=None,
                                n_grid: int | None = None, seed: int = 0) -> HardInstance:
    """Separation instance for a general activation with a peak-vs-tail gap:
    requires |act(x1)| >= M * sup_{x <= x2} |act(x)| (checked numerically).

    The separation level is fixed at eps = 1/2, so the family's argument is
    x1 at a packing point's own peak and at most x2 on every other one."""
    if activation not in _ACTIVATIONS:
        raise ContractError(f"unknown activation {activation!r}")
    if not x1 > x2:
        raise ContractError("need x1 > x2")
    if M <= 0:
        raise ContractError("M must be positive")
    peak = abs(float(_ACTIVATIONS[activation](np.asarray([x1]))[0]))
    tail = left_tail_sup(activation, x2)
    if peak < M * tail - 1e-12:
        raise ContractError(
            f"activation violates the peak condition: |act(x1)|={peak:.6g} "
            f"< M * sup tail = {M * tail:.6g}")

    eps = 0.5
    packing = make_packing(d, eps, strategy="axes")
    family = GeneralFamily(activation=activation, x1=x1, x2=x2, M=M)
    source_params = (np.asarray(sources, dtype=float).reshape(-1, d)
                     if len(sources) else np.zeros((0, d)))
    for w in source_params:
        _locate_in_packing(packing, w)

    # small-tail set: points where every source's inner product stays below
    # the 7/8 crossing, hence its value below the tail sup
    if source_params.size:
        inner = source_params @ packing.vectors.T
        vanishing = np.where((inner <= 7.0 / 8.0 + 1e-12).all(axis=0))[0]
    else:
        vanishing = np.arange(packing.count)
    if vanishing.size == 0:
        raise ConstructionInfeasibleError("every packing point is peaked by a source")
    if target_u is None:
        u_idx = int(vanishing[0])
    else:
        u_idx = _locate_in_packing(packing, np.asarray(target_u, dtype=float))
        if u_idx not in vanishing:
            raise ContractError("target_u must belong to the vanishing set")
    support_idx = [i for i in vanishing if i != u_idx]
    if not support_idx:
        raise ConstructionInfeasibleError("no support left after removing the peak")

    u = packing.vectors[u_idx]
    inst = HardInstance(packing=packing, family=family,
                        source_params=source_params, target_param=u,
                        support=packing.vectors[support_idx],
                        weights=np.full(len(support_idx), 1.0 / len(support_idx)),
                        rep_image=u)
    _finalize(inst, n_grid, seed)
    if source_params.size and inst.ratio < (M - 1.0) ** 2 / 8.0 - 1e-6:
        raise ContractError(f"ratio {inst.ratio} below (M-1)^2/8")
    return inst


def axis_vector(name: str, d: int) -> np.ndarray:
    """Parse 'e1', '-e3' style axis names into unit vectors."""
    name = name.strip()
    sign = 1.0
    if name.startswith("-"):
        sign = -1.0
        name = name[1:]
    if not name.startswith("e"):
        raise ContractError(f"cannot parse axis vector {name!r}")
    try:
        idx = int(name[1:]) - 1
    except ValueError as exc:
        raise ContractError(f"cannot parse axis vector {name!r}") from exc
    if not 0 <= idx < d:
        raise ContractError(f"axis {name!r} out of range for d={d}")
    v = np.zeros(d)
    v[idx] = sign
    return v


def to_finite_instance(inst: HardInstance):
    """Export as a tabulated instance for the exact-enumeration tooling.

    The continuous family is restricted to the analytic candidate set, which
    is exact for the axes packing (see module docstring); the two tabulated
    representations are the identity and the collapse onto u.
    """
    from .diversity import FiniteInstance

    features = np.concatenate([inst.support, inst.rep_image[None, :]], axis=0)
    ws = _candidate_weights(inst)
    values = inst.family.batch_eval(ws, features)[:, :, None]  # (n_w, n_feat, 1)
    m = inst.support.shape[0]
    identity_rep = list(range(m))
    collapse_rep = [m] * m

    def locate(w):
        return int(np.where(np.linalg.norm(ws - w[None, :], axis=1) <= 1e-12)[0][0])

    if inst.source_params.shape[0] == 0:
        raise ContractError("cannot export an instance without source tasks")
    return FiniteInstance(
        weights=inst.weights,
        features=features,
        representations=np.array([identity_rep, collapse_rep]),
        source_functions=values,
        target_functions=values,
        sources=[locate(w) for w in inst.source_params],
        target_true=locate(inst.target_param),
        true_rep=1,
        points=inst.support)
