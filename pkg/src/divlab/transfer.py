"""Two-phase transfer training and Monte-Carlo excess-error estimation.

Phase one fits a shared trunk jointly with per-task source heads by
full-batch Adam on the pooled mean squared loss.  Phase two freezes the
trunk bit-for-bit and fits a fresh target head on the target sample.  The
no-pretraining baseline trains a full trunk+head network from scratch on the
same target sample.

Excess errors are measured against the known mean function on fresh inputs,
which is exact in expectation and avoids subtracting an estimated minimal
risk; MSE figures reported here therefore exclude the irreducible noise
floor.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, NumericError
from .netcore import (Mlp, forward_batch, init_opt_state, loss_and_gradients,
                      step)
from .seeding import derive_seed, make_rng
from .synth import Dataset, GroundTruth, NetDims, mean_function, random_mlp, sample_dataset


@dataclass
class TwoPhaseConfig:
    dims: NetDims = field(default_factory=NetDims)
    n_so: int = 1000
    n_ta: int = 100
    T: int = 1
    steps_source: int = 2000
    steps_target: int = 2000
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    freeze_representation: bool = True
    n_eval: int = 10_000
    activation: str = "relu"  # hidden activation of the trained networks

    def validate(self) -> None:
        self.dims.validate()
        if self.n_so < 1 or self.n_ta < 1 or self.T < 1:
            raise ContractError("sample counts and task count must be >= 1")
        if not self.freeze_representation:
            raise ContractError("unfreezing the representation is not supported")
        if self.activation not in ("relu", "identity"):
            raise ContractError("training supports relu or identity activations only")


@dataclass
class SourceFit:
    h_hat: Mlp
    f_hats: list[Mlp]
    trace: list[float]


@dataclass
class TargetFit:
    f_hat: Mlp
    trace: list[float]


@dataclass
class TransferReport:
    source_train_loss: list[float]
    target_mse: float
    baseline_mse: float
    excess_target: float
    excess_source: float
    seed: int
    config: dict


def compose(trunk: Mlp, head_stack: Mlp) -> Mlp:
    """Stack a prediction network on top of a trunk as one network."""
    return Mlp(layers=[*copy.deepcopy(trunk.layers), *copy.deepcopy(head_stack.layers)])


def _train_inplace(net: Mlp, xs: np.ndarray, ys: np.ndarray, steps: int,
                   optimizer: str, learning_rate: float,
                   first_trainable_layer: int = 0) -> list[float]:
    """Full-batch training of `net.layers[first_trainable_layer:]`; earlier
    layers are never touched.  Returns the per-step loss trace."""
    trainable = lambda: [a for layer in net.layers[first_trainable_layer:]
                         for a in (layer.weight, layer.bias)]
    opt = init_opt_state(trainable(), method=optimizer, learning_rate=learning_rate)
    trace: list[float] = []
    for t in range(steps):
        with np.errstate(over="ignore", invalid="ignore"):  # divergence checked below
            loss, grads = loss_and_gradients(net, xs, ys)
        if not np.isfinite(loss):
            raise NumericError("training loss diverged", step=t)
        trace.append(loss)
        grad_list = [a for pair in grads.layers[first_trainable_layer:] for a in pair]
        new_params, opt = step(opt, trainable(), grad_list)
        it = iter(new_params)
        for layer in net.layers[first_trainable_layer:]:
            layer.weight = next(it)
            layer.bias = next(it)
    return trace


def _fresh_trunk(cfg: TwoPhaseConfig, rng) -> Mlp:
    d = cfg.dims
    return random_mlp(rng, [d.d_in] + [d.n_u] * d.K, 1.0 / np.sqrt(d.n_u),
                      terminal_activation=True, activation=cfg.activation)


def _fresh_source_head(cfg: TwoPhaseConfig, rng, terminal_activation: bool) -> Mlp:
    d = cfg.dims
    return random_mlp(rng, [d.n_u] * d.K_so + [d.p], 1.0 / np.sqrt(d.n_u),
                      terminal_activation=terminal_activation, activation=cfg.activation)


def _fresh_target_head(cfg: TwoPhaseConfig, rng) -> Mlp:
    d = cfg.dims
    return random_mlp(rng, [d.n_u] * d.K_ta + [1], 1.0 / np.sqrt(d.n_u),
                      terminal_activation=False, activation=cfg.activation)


def train_source_phase(gt: GroundTruth, cfg: TwoPhaseConfig, seed: int) -> SourceFit:
    """Joint ERM over (shared trunk, per-task source heads) by Adam.

    With T > 1 the per-task heads share the trunk and the objective pools all
    samples; the fitted trunk and heads are returned split apart again.
    """
    cfg.validate()
    if cfg.T != len(gt.f_sources):
        raise ContractError(f"config T={cfg.T} but ground truth has {len(gt.f_sources)} source tasks")
    datasets = [sample_dataset(gt, "source", cfg.n_so, derive_seed(seed, "source-data", t),
                               task_index=t) for t in range(cfg.T)]
    init_rng = make_rng(seed, "model-init")
    trunk = _fresh_trunk(cfg, init_rng)
    heads = [_fresh_source_head(cfg, init_rng, gt.source_terminal_activation)
             for _ in range(cfg.T)]

    if cfg.T == 1:
        net = compose(trunk, heads[0])
        trace = _train_inplace(net, datasets[0].inputs, datasets[0].labels,
                               cfg.steps_source, cfg.optimizer, cfg.learning_rate)
        k = cfg.dims.K
        return SourceFit(h_hat=Mlp(layers=net.layers[:k]),
                         f_hats=[Mlp(layers=net.layers[k:])], trace=trace)
    return _train_multi_task(trunk, heads, datasets, cfg)


def _train_multi_task(trunk: Mlp, heads: list[Mlp], datasets: list[Dataset],
                      cfg: TwoPhaseConfig) -> SourceFit:
    """Pooled-objective training when several source tasks share the trunk."""
    nets = [compose(trunk, head) for head in heads]
    k = cfg.dims.K
    # All composites must share the literal trunk arrays so updates stay joint.
    for net in nets[1:]:
        net.layers[:k] = nets[0].layers[:k]
    params = [a for layer in nets[0].layers[:k] for a in (layer.weight, layer.bias)]
    for net in nets:
        params.extend(a for layer in net.layers[k:] for a in (layer.weight, layer.bias))
    opt = init_opt_state(params, method=cfg.optimizer, learning_rate=cfg.learning_rate)
    total_n = sum(ds.inputs.shape[0] for ds in datasets)
    trace: list[float] = []
    for t in range(cfg.steps_source):
        loss_sum = 0.0
        grad_acc = [np.zeros_like(p) for p in params]
        offset = 2 * k
        for j, (net, ds) in enumerate(zip(nets, datasets)):
            n_j = ds.inputs.shape[0]
            with np.errstate(over="ignore", invalid="ignore"):
                loss_j, grads_j = loss_and_gradients(net, ds.inputs, ds.labels)
            w_j = n_j / total_n
            loss_sum += w_j * loss_j
            flat = [a for pair in grads_j.layers for a in pair]
            for i in range(2 * k):  # shared trunk accumulates across tasks
                grad_acc[i] += w_j * flat[i]
            head_len = len(flat) - 2 * k
            for i in range(head_len):
                grad_acc[offset + i] = w_j * flat[2 * k + i]
            offset += head_len
        if not np.isfinite(loss_sum):
            raise NumericError("training loss diverged", step=t)
        trace.append(loss_sum)
        params, opt = step(opt, params, grad_acc)
        it = iter(params[:2 * k])
        for layer in nets[0].layers[:k]:
            layer.weight = next(it)
            layer.bias = next(it)
        pos = 2 * k
        for net in nets:
            for layer in net.layers[k:]:
                layer.weight = params[pos]
                layer.bias = params[pos + 1]
                pos += 2
        for net in nets[1:]:
            net.layers[:k] = nets[0].layers[:k]
    return SourceFit(h_hat=Mlp(layers=nets[0].layers[:k]),
                     f_hats=[Mlp(layers=net.layers[k:]) for net in nets], trace=trace)


def train_target_phase(h_hat: Mlp, gt: GroundTruth, cfg: TwoPhaseConfig,
                       seed: int) -> TargetFit:
    """Fit the target head on n_ta samples with the trunk frozen.

    The trunk arrays inside `h_hat` are never written; only the appended
    target-head layers receive optimizer updates.
    """
    cfg.validate()
    if h_hat.layers[-1].weight.shape[0] != cfg.dims.n_u:
        raise ContractError("trunk output width does not match target head input")
    ds = sample_dataset(gt, "target", cfg.n_ta, derive_seed(seed, "target-data"))
    head = _fresh_target_head(cfg, make_rng(seed, "target-init"))
    net = Mlp(layers=[*h_hat.layers, *head.layers])  # trunk shared, not copied
    k = len(h_hat.layers)
    trace = _train_inplace(net, ds.inputs, ds.labels, cfg.steps_target,
                           cfg.optimizer, cfg.learning_rate,
                           first_trainable_layer=k)
    return TargetFit(f_hat=Mlp(layers=net.layers[k:]), trace=trace)


def run_baseline(gt: GroundTruth, cfg: TwoPhaseConfig, seed: int) -> float:
    """Train the full trunk+target network from scratch on the n_ta target
    samples and return its excess error."""
    cfg.validate()
    ds = sample_dataset(gt, "target", cfg.n_ta, derive_seed(seed, "target-data"))
    init_rng = make_rng(seed, "baseline-init")
    net = compose(_fresh_trunk(cfg, init_rng), _fresh_target_head(cfg, init_rng))
    _train_inplace(net, ds.inputs, ds.labels,
                   cfg.steps_source, cfg.optimizer, cfg.learning_rate)
    return excess_of_net(net, gt, cfg.n_eval, derive_seed(seed, "baseline-eval"))


def excess_of_net(net: Mlp, gt: GroundTruth, n_eval: int, seed: int,
                  task: str = "target", task_index: int = 0) -> float:
    """Monte-Carlo E_X ||net(X) - f*.h*(X)||^2 on fresh standard-normal X."""
    if n_eval < 1:
        raise ContractError("n_eval must be >= 1")
    xs = make_rng(seed, "excess-eval", task, task_index).standard_normal(
        (n_eval, gt.dims.d_in))
    pred = forward_batch(net, xs)
    truth = mean_function(gt, task, xs, task_index)
    return float(((pred - truth) ** 2).sum(axis=1).mean())


def estimate_excess_error(f: Mlp, h: Mlp, gt: GroundTruth, n_eval: int, seed: int,
                          task: str = "target", task_index: int = 0) -> float:
    """Excess error of the composition f.h, measured noise-free.

    The mean squared distance to the known mean function is the excess risk
    exactly in expectation because label noise is independent and additive.
    """
    return excess_of_net(compose(h, f), gt, n_eval, seed, task, task_index)


def run_two_phase(gt: GroundTruth, cfg: TwoPhaseConfig, seed: int) -> TransferReport:
    """Source phase, frozen-trunk target phase, scratch baseline, excesses."""
    source = train_source_phase(gt, cfg, seed)
    target = train_target_phase(source.h_hat, gt, cfg, seed)
    # Same seed so the baseline sees the same n_ta target samples.
    baseline_mse = run_baseline(gt, cfg, seed)
    excess_target = estimate_excess_error(target.f_hat, source.h_hat, gt,
                                          cfg.n_eval, derive_seed(seed, "eval-target"))
    excess_source = estimate_excess_error(source.f_hats[0], source.h_hat, gt,
                                          cfg.n_eval, derive_seed(seed, "eval-source"),
                                          task="source")
    report = TransferReport(source_train_loss=source.trace,
                            target_mse=excess_target,
                            baseline_mse=baseline_mse,
                            excess_target=excess_target,
                            excess_source=excess_source,
                            seed=seed, config=asdict(cfg))
    for value in (report.target_mse, report.baseline_mse,
                  report.excess_target, report.excess_source):
        if not (np.isfinite(value) and value >= 0):
            raise NumericError("report contains an invalid loss value")
    return report
