"""Exact transferability/diversity computation on finite instances.

A finite instance tabulates everything: a weighted input support, a finite
feature support, representations as index maps from inputs to features, and
finite source/target prediction classes as value tables over the features.
Excess errors are then exact weighted sums, and the worst-case transfer
ratio is computed by enumeration plus a monotone bisection in the transfer
component nu (the ratio's denominator couples mu and nu through mu/nu, so
the minimal certified nu is a fixed point rather than a closed form).

Also houses the reductions between losses and task formats: stacking
single-output tasks into one multi-output task, the softmax-cross-entropy
constant conversion, strong-convexity/smoothness loss conversions, the KL
sandwich check, and inner-product embedding (rank) certificates.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CertificateInvalidError, ContractError

INF = math.inf


@dataclass
class FiniteInstance:
    """Finite substrate for exact diversity computation.

    representations[h, i] is the feature index that representation h assigns
    to support point i; prediction functions are value tables indexed by
    feature.  `sources` designates the true source function per task,
    `target_true` the true target function, `true_rep` the true
    representation.
    """

    weights: np.ndarray            # (n_x,) probability weights
    features: np.ndarray           # (n_z, d_z) feature coordinates
    representations: np.ndarray    # (n_h, n_x) int feature indices
    source_functions: np.ndarray   # (n_fso, n_z, d_so)
    target_functions: np.ndarray   # (n_fta, n_z, d_ta)
    sources: list[int]
    target_true: int
    true_rep: int
    points: np.ndarray | None = None  # optional input coordinates, metadata

    @property
    def n_tasks(self) -> int:
        return len(self.sources)

    def validate(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or (w < -1e-15).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ContractError("weights must be non-negative and sum to 1")
        reps = np.asarray(self.representations)
        n_z = self.features.shape[0]
        if reps.ndim != 2 or reps.shape[1] != w.shape[0]:
            raise ContractError("representation table must be (n_h, n_x)")
        if reps.min() < 0 or reps.max() >= n_z:
            raise ContractError("representation index out of feature range")
        for name, table in (("source", self.source_functions),
                            ("target", self.target_functions)):
            if table.ndim != 3 or table.shape[1] != n_z:
                raise ContractError(f"{name} function table must be (n_f, n_z, d)")
        if not self.sources or not all(0 <= t < self.source_functions.shape[0]
                                       for t in self.sources):
            raise ContractError("source task indices out of range")
        if not 0 <= self.target_true < self.target_functions.shape[0]:
            raise ContractError("target_true out of range")
        if not 0 <= self.true_rep < reps.shape[0]:
            raise ContractError("true_rep out of range")


def _pair_excess(weights, values_pred, values_true) -> float:
    return float((weights * ((values_pred - values_true) ** 2).sum(axis=1)).sum())


@dataclass
class ExcessTable:
    """Exact excess errors per (representation, candidate function, task)."""

    target: np.ndarray           # (n_h, n_fta) vs the instance's target truth
    source: np.ndarray           # (n_h, n_fso, T)
    target_best: np.ndarray      # (n_h,) inf over the target class
    source_best_avg: np.ndarray  # (n_h,) average over tasks of per-task infs


def excess_table(inst: FiniteInstance) -> ExcessTable:
    """Tabulate E = sum_x w(x) ||f(h(x)) - f*(h*(x))||^2 for every pair."""
    inst.validate()
    w = np.asarray(inst.weights, dtype=float)
    reps = np.asarray(inst.representations)
    true_idx = reps[inst.true_rep]
    n_h = reps.shape[0]
    n_fta = inst.target_functions.shape[0]
    n_fso = inst.source_functions.shape[0]
    T = inst.n_tasks

    target = np.empty((n_h, n_fta))
    ta_truth = inst.target_functions[inst.target_true][true_idx]
    for h in range(n_h):
        pred = inst.target_functions[:, reps[h], :]  # (n_fta, n_x, d)
        target[h] = (w * ((pred - ta_truth) ** 2).sum(axis=2)).sum(axis=1)

    source = np.empty((n_h, n_fso, T))
    for t, true_f in enumerate(inst.sources):
        so_truth = inst.source_functions[true_f][true_idx]
        for h in range(n_h):
            pred = inst.source_functions[:, reps[h], :]
            source[h, :, t] = (w * ((pred - so_truth) ** 2).sum(axis=2)).sum(axis=1)

    return ExcessTable(target=target, source=source,
                       target_best=target.min(axis=1),
                       source_best_avg=source.min(axis=1).mean(axis=1))


@dataclass
class DiversityCertificate:
    nu_hat: float                # may be math.inf
    mu: float
    worst_h: int
    worst_target: int | None
    per_h: np.ndarray            # ratio table at the certified nu

    def validate(self) -> None:
        if self.nu_hat < 0:
            raise ContractError("nu_hat must be non-negative")
        if math.isfinite(self.nu_hat):
            finite = self.per_h[np.isfinite(self.per_h)]
            if finite.size and finite.max() > self.nu_hat + 1e-9:
                raise ContractError("tabulated ratio exceeds certified nu")


def _target_numerators(inst: FiniteInstance, diverse: bool) -> np.ndarray:
    """Best-target excess per (target truth, representation); a single row
    for the instance's own truth unless `diverse` sups over all truths."""
    reps = np.asarray(inst.representations)
    w = np.asarray(inst.weights, dtype=float)
    true_idx = reps[inst.true_rep]
    truths = range(inst.target_functions.shape[0]) if diverse else [inst.target_true]
    rows = []
    for tau in truths:
        truth_vals = inst.target_functions[tau][true_idx]
        best = np.empty(reps.shape[0])
        for h in range(reps.shape[0]):
            pred = inst.target_functions[:, reps[h], :]
            best[h] = (w * ((pred - truth_vals) ** 2).sum(axis=2)).sum(axis=1).min()
        rows.append(best)
    return np.stack(rows)


def transfer_ratio(inst: FiniteInstance, mu: float, nu_cap: float = 1e6,
                   diverse: bool = False, iterations: int = 60) -> DiversityCertificate:
    """Smallest nu <= nu_cap with sup_h num(h) / (den(h) + mu/nu) <= nu.

    The condition is equivalent to num(h) <= nu * den(h) + mu for every h,
    which is monotone in nu, so the minimal nu is found by bisection
    (`iterations` halvings).  When some representation has zero source excess
    but target excess above mu, no finite nu works and the certificate
    carries an infinity sentinel.  `diverse=True` additionally sups over all
    target truths, recording the worst one.
    """
    if mu < 0:
        raise ContractError("mu must be non-negative")
    if nu_cap <= 0:
        raise ContractError("nu_cap must be positive")
    table = excess_table(inst)
    nums = _target_numerators(inst, diverse)       # (n_truths, n_h)
    den = table.source_best_avg                    # (n_h,)

    def satisfied(nu: float) -> bool:
        return bool((nums <= nu * den[None, :] + mu).all())

    def ratio_table(shift: float) -> np.ndarray:
        # num / (den + shift) with the 0/0 convention -> 0.
        denom = den + shift
        num_max = nums.max(axis=0)
        safe = np.where(denom > 0, denom, 1.0)
        return np.where(denom > 0, num_max / safe,
                        np.where(num_max <= mu, 0.0, INF))

    if not satisfied(nu_cap):
        viol = nums - (nu_cap * den[None, :] + mu)
        tau, h = np.unravel_index(np.argmax(viol), viol.shape)
        return DiversityCertificate(nu_hat=INF, mu=mu, worst_h=int(h),
                                    worst_target=int(tau) if diverse else None,
                                    per_h=ratio_table(0.0))

    lo, hi = 0.0, nu_cap
    if satisfied(0.0):
        hi = 0.0
    else:
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            if satisfied(mid):
                hi = mid
            else:
                lo = mid
    nu_hat = hi
    if nu_hat == 0.0 or mu == 0.0:
        ratios = ratio_table(0.0) if nu_hat > 0 else np.zeros_like(den)
    else:
        ratios = ratio_table(mu / nu_hat)
    worst = int(np.argmax(ratios))
    worst_tau = int(np.argmax(nums[:, worst])) if diverse else None
    cert = DiversityCertificate(nu_hat=float(nu_hat), mu=mu, worst_h=worst,
                                worst_target=worst_tau, per_h=ratios)
    cert.validate()
    return cert


def negative_transfer_witness(inst: FiniteInstance, tol: float = 1e-12) -> int | None:
    """A representation that is optimal for the sources yet strictly
    suboptimal for the target, or None when the source optimum transfers."""
    table = excess_table(inst)
    source_opt = table.source_best_avg.min()
    for h in range(table.source_best_avg.shape[0]):
        if table.source_best_avg[h] <= source_opt + tol and table.target_best[h] > tol:
            return h
    return None


def stack_multi_output(inst: FiniteInstance, nu: float, mu: float,
                       max_combinations: int = 100_000) -> tuple[FiniteInstance, tuple[float, float]]:
    """Stack K single-output source tasks into one K-output task.

    The stacked class is the full Cartesian product of the single-task class,
    so its infimum decomposes coordinate-wise and the stacked excess equals
    the sum of per-task excesses exactly.  Certified constants convert as
    (nu, mu) -> (nu/K, mu/K).
    """
    inst.validate()
    K = inst.n_tasks
    if inst.source_functions.shape[2] != 1:
        raise ContractError("stacking requires single-output source tasks")
    n_f = inst.source_functions.shape[0]
    if n_f ** K > max_combinations:
        raise ContractError(f"{n_f}^{K} stacked combinations exceed the cap")
    combos = list(itertools.product(range(n_f), repeat=K))
    stacked = np.stack([
        np.concatenate([inst.source_functions[i] for i in combo], axis=1)
        for combo in combos
    ])
    true_combo = combos.index(tuple(inst.sources))
    stacked_inst = FiniteInstance(
        weights=inst.weights, features=inst.features,
        representations=inst.representations,
        source_functions=stacked, target_functions=inst.target_functions,
        sources=[true_combo], target_true=inst.target_true,
        true_rep=inst.true_rep, points=inst.points)
    return stacked_inst, (nu / K, mu / K)


def softmax_ce_conversion(nu: float, mu: float, B: float, B_star: float) -> tuple[float, float]:
    """Constants for a softmax-cross-entropy classification source task:
    (nu, mu) -> (2 B*^2 B^4 nu, B*^2 mu)."""
    if B < 1 or B_star < 1:
        raise ContractError("B and B_star must be >= 1")
    return 2.0 * B_star ** 2 * B ** 4 * nu, B_star ** 2 * mu


def loss_conversion(nu: float, mu: float, c: float, direction: str) -> tuple[float, float]:
    """Diversity constants under a different loss.

    'strongly_convex_c1': the new loss is c-strongly-convex, giving
    (nu/c, mu/c).  'smooth_c2': the new loss has Hessian above c, giving
    (nu*c, mu*c).
    """
    if c <= 0:
        raise ContractError("c must be positive")
    if direction == "strongly_convex_c1":
        return nu / c, mu / c
    if direction == "smooth_c2":
        return nu * c, mu * c
    raise ContractError(f"unknown direction {direction!r}")


@dataclass
class KlSandwich:
    kl: float
    lower: float
    upper: float
    ok: bool


def kl_sandwich_check(p, q, b: float, slack: float = 1e-12) -> KlSandwich:
    """KL(p, q) against 0.5*(sum |p-q|)^2 below and (1/b^2) sum (p-q)^2 above.

    Uses the 0 log 0 = 0 convention; when some q_i = 0 with p_i > 0 the KL is
    an infinity sentinel and the upper leg is skipped.  The upper bound
    requires b to lower-bound the entries of both distributions (it is
    applied to softmax outputs, which are bounded below on both sides).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ContractError("p and q must be distributions over one alphabet")
    for name, dist in (("p", p), ("q", q)):
        if (dist < -1e-15).any() or abs(dist.sum() - 1.0) > 1e-9:
            raise ContractError(f"{name} is not a probability distribution")
    if not 0 < b <= p.min() + 1e-12:
        raise ContractError("need 0 < b <= min(p) for the upper bound leg")

    lower = 0.5 * float(np.abs(p - q).sum()) ** 2
    upper = float(((p - q) ** 2).sum()) / b ** 2
    if ((q == 0) & (p > 0)).any():
        return KlSandwich(kl=INF, lower=lower, upper=upper, ok=lower <= INF)
    mask = p > 0
    kl = float((p[mask] * np.log(p[mask] / q[mask])).sum())
    ok = (lower <= kl + slack) and (kl <= upper + slack)
    return KlSandwich(kl=kl, lower=lower, upper=upper, ok=ok)


def idrank_certificate(values: np.ndarray, phi: np.ndarray, w: np.ndarray,
                       R: float, mu: float, tol: float = 1e-12) -> bool:
    """Check an inner-product embedding of a scalar class on a grid.

    values[f, i] is f(x_i); phi[i] embeds x_i into the unit ball; w[f] embeds
    f into the radius-R ball.  Norm violations raise CertificateInvalidError
    (the certificate is inadmissible, not false); otherwise the result says
    whether |f(x) - <w(f), phi(x)>| <= mu holds on the whole grid.
    """
    values = np.asarray(values, dtype=float)
    phi = np.asarray(phi, dtype=float)
    w = np.asarray(w, dtype=float)
    if values.shape != (w.shape[0], phi.shape[0]):
        raise ContractError("values table must be (n_functions, n_grid)")
    if (np.linalg.norm(phi, axis=1) > 1.0 + tol).any():
        raise CertificateInvalidError("phi must map into the unit ball")
    if (np.linalg.norm(w, axis=1) > R + tol).any():
        raise CertificateInvalidError(f"w must map into the radius-{R} ball")
    errors = np.abs(values - w @ phi.T)
    return bool(errors.max() <= mu + tol)


def basis_task_diversity(w_basis: np.ndarray, mu: float,
                         rank_tol: float = 1e-10) -> tuple[int, float]:
    """Diversity constants (d, mu) from d tasks whose embedding vectors span.

    w_basis is (d, d): one embedding vector per selected task.  Rank
    deficiency (duplicated or collinear tasks) is a contract error.
    """
    w_basis = np.asarray(w_basis, dtype=float)
    if w_basis.ndim != 2 or w_basis.shape[0] != w_basis.shape[1]:
        raise ContractError("need exactly d tasks embedded in d dimensions")
    d = w_basis.shape[0]
    if np.linalg.matrix_rank(w_basis, tol=rank_tol) < d:
        raise ContractError("embedding vectors do not span the space")
    return d, mu


# ---------------------------------------------------------------------------
# JSON instance schema (shared with the eluder/hardness tooling)
# ---------------------------------------------------------------------------

def instance_to_dict(inst: FiniteInstance) -> dict:
    doc = {
        "weights": np.asarray(inst.weights).tolist(),
        "features": np.asarray(inst.features).tolist(),
        "representations": np.asarray(inst.representations).tolist(),
        "source_functions": np.asarray(inst.source_functions).tolist(),
        "target_functions": np.asarray(inst.target_functions).tolist(),
        "sources": list(inst.sources),
        "target_true": inst.target_true,
        "true_rep": inst.true_rep,
    }
    if inst.points is not None:
        doc["points"] = np.asarray(inst.points).tolist()
    return doc


def instance_from_dict(doc: dict) -> FiniteInstance:
    try:
        inst = FiniteInstance(
            weights=np.asarray(doc["weights"], dtype=float),
            features=np.asarray(doc["features"], dtype=float),
            representations=np.asarray(doc["representations"], dtype=int),
            source_functions=np.asarray(doc["source_functions"], dtype=float),
            target_functions=np.asarray(doc["target_functions"], dtype=float),
            sources=[int(t) for t in doc["sources"]],
            target_true=int(doc["target_true"]),
            true_rep=int(doc["true_rep"]),
            points=None if "points" not in doc else np.asarray(doc["points"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ContractError(f"malformed instance document: {exc}") from exc
    inst.validate()
    return inst


def save_instance(inst: FiniteInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=1))


def load_instance(path: str | Path) -> FiniteInstance:
    path = Path(path)
    if not path.exists():
        raise ContractError(f"instance file not found: {path}")
    return instance_from_dict(json.loads(path.read_text()))
