"""Synthetic ground truth and noisy dataset sampling.

A ground truth is a shared representation trunk (K relu layers, n_u units),
one multi-output source prediction stack and one scalar target prediction
stack.  Inputs are standard normal; labels are the mean function plus
isotropic Gaussian noise.  All true biases are zero; representation and
prediction weights are N(0, 1/sqrt(n_u)), except the source head, which is
row-orthonormal when it is a single linear layer with p <= n_u.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError
from .netcore import DenseLayer, Mlp, forward_batch
from .seeding import make_rng


@dataclass(frozen=True)
class NetDims:
    """Architecture dimensions: input, hidden width, trunk and head depths,
    and source output dimension."""

    d_in: int = 4
    n_u: int = 4
    K: int = 5
    K_so: int = 1
    K_ta: int = 1
    p: int = 4

    def validate(self) -> None:
        if min(self.d_in, self.n_u, self.K, self.K_so, self.K_ta, self.p) < 1:
            raise ContractError("all dimensions must be >= 1")


@dataclass
class GroundTruth:
    h_star: Mlp
    f_sources: list[Mlp]
    f_target: Mlp
    noise_sigma: float
    dims: NetDims
    source_terminal_activation: bool = False
    orthonormal_fallback: bool = False  # set when p > n_u forced Gaussian init


@dataclass
class Dataset:
    inputs: np.ndarray  # (n, d_in)
    labels: np.ndarray  # (n, d_out)
    task_id: str

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ContractError("inputs and labels must have equal length")


def random_mlp(rng, sizes: list[int], scale: float, terminal_activation: bool,
               activation: str = "relu") -> Mlp:
    """Dense stack with N(0, scale) weights and zero biases; the last layer
    is linear unless `terminal_activation` asks for the hidden activation
    right before the output."""
    layers = []
    for k in range(len(sizes) - 1):
        last = k == len(sizes) - 2
        act = activation if (not last or terminal_activation) else "identity"
        w = rng.normal(0.0, scale, size=(sizes[k + 1], sizes[k]))
        layers.append(DenseLayer(weight=w, bias=np.zeros(sizes[k + 1]), activation=act))
    return Mlp(layers=layers)


def _orthonormal_rows(rng, rows: int, cols: int) -> np.ndarray:
    """rows x cols matrix with orthonormal rows (requires rows <= cols)."""
    g = rng.standard_normal((cols, rows))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity for determinism
    return q.T


def make_ground_truth(dims: NetDims, seed: int, noise_sigma: float = 0.1,
                      source_terminal_activation: bool = False,
                      activation: str = "relu") -> GroundTruth:
    """Sample a ground truth per the generative model.

    The source head is a single p x n_u matrix with orthonormal rows when
    K_so == 1 and p <= n_u; if p > n_u that is impossible and the init falls
    back to Gaussian with `orthonormal_fallback` set on the result.
    """
    dims.validate()
    if noise_sigma < 0:
        raise ContractError("noise_sigma must be >= 0")
    scale = 1.0 / np.sqrt(dims.n_u)

    rep_rng = make_rng(seed, "gt-representation")
    rep_sizes = [dims.d_in] + [dims.n_u] * dims.K
    h_star = random_mlp(rep_rng, rep_sizes, scale, terminal_activation=True,
                        activation=activation)

    src_rng = make_rng(seed, "gt-source")
    fallback = False
    src_sizes = [dims.n_u] * dims.K_so + [dims.p]
    if dims.K_so == 1 and dims.p <= dims.n_u:
        w = _orthonormal_rows(src_rng, dims.p, dims.n_u)
        act = activation if source_terminal_activation else "identity"
        source = Mlp(layers=[DenseLayer(weight=w, bias=np.zeros(dims.p), activation=act)])
    else:
        if dims.K_so == 1 and dims.p > dims.n_u:
            fallback = True
        source = random_mlp(src_rng, src_sizes, scale, source_terminal_activation,
                            activation=activation)

    ta_rng = make_rng(seed, "gt-target")
    ta_sizes = [dims.n_u] * dims.K_ta + [1]
    f_target = random_mlp(ta_rng, ta_sizes, scale, False, activation=activation)

    return GroundTruth(h_star=h_star, f_sources=[source], f_target=f_target,
                       noise_sigma=noise_sigma, dims=dims,
                       source_terminal_activation=source_terminal_activation,
                       orthonormal_fallback=fallback)


def mean_function(gt: GroundTruth, which: str, xs: np.ndarray,
                  task_index: int = 0) -> np.ndarray:
    """Noise-free mean function f* . h* on a batch of inputs."""
    z = forward_batch(gt.h_star, xs)
    if which == "target":
        return forward_batch(gt.f_target, z)
    if which == "source":
        return forward_batch(gt.f_sources[task_index], z)
    raise ContractError(f"which must be 'source' or 'target', got {which!r}")


def sample_dataset(gt: GroundTruth, which: str, n: int, seed: int,
                   task_index: int = 0) -> Dataset:
    """n rows of x ~ N(0, I) with y = f*.h*(x) + noise_sigma * g."""
    if n < 1:
        raise ContractError("n must be >= 1")
    rng = make_rng(seed, "dataset", which, task_index)
    xs = rng.standard_normal((n, gt.dims.d_in))
    ys = mean_function(gt, which, xs, task_index)
    if gt.noise_sigma > 0:
        ys = ys + gt.noise_sigma * rng.standard_normal(ys.shape)
    tag = "target" if which == "target" else f"source[{task_index}]"
    return Dataset(inputs=xs, labels=ys, task_id=tag)


def export_csv(dataset: Dataset, path: str | Path) -> None:
    """Debug export with columns x_0..x_{d-1}, y_0..y_{m-1}."""
    d = dataset.inputs.shape[1]
    m = dataset.labels.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{j}" for j in range(d)] + [f"y_{j}" for j in range(m)])
        for x, y in zip(dataset.inputs, dataset.labels):
            writer.writerow([f"{v:.17g}" for v in x] + [f"{v:.17g}" for v in y])
