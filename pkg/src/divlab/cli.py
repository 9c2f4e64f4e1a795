"""Command-line entry point.

Subcommands: `exp {a,b,c,d}` runs a named experiment sweep and writes CSV
(plus a PNG figure unless --no-plot); `diversity` computes a transfer-ratio
certificate for a tabulated instance; `eluder` computes eluder/shortest-cover
dimensions for a tabulated class; `hardness` builds and measures a
separation instance; `complexity` estimates Gaussian/Rademacher complexity.

Exit codes: 0 success, 2 contract violation (bad inputs, missing files),
3 numeric failure, 4 search budget exceeded, 64 usage error.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import complexity as cx
from . import diversity as dv
from . import eluder as el
from . import hardness as hd
from .errors import BudgetExceededError, ContractError, NumericError
from .experiments import (ExperimentConfig, config_from_file,
                          run_named_experiment, write_rows)

USAGE_EXIT = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(USAGE_EXIT)


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".12g")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="divlab",
                     description="numerical laboratory for representation-transfer diversity")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    exp = sub.add_parser("exp", help="run a named experiment sweep")
    exp.add_argument("which", choices=["a", "b", "c", "d"])
    exp.add_argument("--runs", type=int, default=None)
    exp.add_argument("--seed", type=int, default=None)
    exp.add_argument("--steps", type=int, default=None)
    exp.add_argument("--noise-sigma", type=float, default=None)
    exp.add_argument("--n-so-grid", type=str, default=None,
                     help="comma-separated, experiment a only")
    exp.add_argument("--n-ta-grid", type=str, default=None)
    exp.add_argument("--config", type=str, default=None,
                     help="flat JSON file with ExperimentConfig fields")
    exp.add_argument("--out", type=str, default=None,
                     help="CSV path (default: exp_<which>.csv)")
    exp.add_argument("--no-plot", action="store_true",
                     help="skip the PNG figure next to the CSV")

    div = sub.add_parser("diversity", help="transfer-ratio certificate for an instance")
    div.add_argument("instance", type=str)
    div.add_argument("--mu", type=float, default=0.0)
    div.add_argument("--nu-cap", type=float, default=1e6)
    div.add_argument("--diverse", action="store_true",
                     help="sup over all target truths, not just the designated one")

    elu = sub.add_parser("eluder", help="eluder dimensions of a tabulated class")
    elu.add_argument("class_file", type=str)
    elu.add_argument("--eps", type=float, required=True)
    elu.add_argument("--variant", choices=["longest", "shortest", "both"],
                     default="both")
    elu.add_argument("--node-cap", type=int, default=1_000_000)
    elu.add_argument("--dual", action="store_true", help="analyze the dual class")

    hard = sub.add_parser("hardness", help="build and measure a separation instance")
    hard_sub = hard.add_subparsers(dest="family", required=True, parser_class=_Parser)
    relu = hard_sub.add_parser("relu")
    relu.add_argument("--d", type=int, required=True)
    relu.add_argument("--eps", type=float, required=True)
    relu.add_argument("--sources", type=str, default="e1",
                      help="comma-separated axis names, e.g. e1,-e2")
    relu.add_argument("--target-u", type=str, default=None)
    relu.add_argument("--grid", type=int, default=10_000)
    relu.add_argument("--seed", type=int, default=0)
    relu.add_argument("--export", type=str, default=None,
                      help="write the tabulated instance JSON here")
    gen = hard_sub.add_parser("general")
    gen.add_argument("--activation", type=str, default="sigmoid")
    gen.add_argument("--x1", type=float, required=True)
    gen.add_argument("--x2", type=float, required=True)
    gen.add_argument("--m", type=float, default=None,
                     help="peak ratio; default |act(x1)| / sup tail")
    gen.add_argument("--d", type=int, required=True)
    gen.add_argument("--sources", type=str, default="e1")
    gen.add_argument("--target-u", type=str, default=None)
    gen.add_argument("--grid", type=int, default=10_000)
    gen.add_argument("--seed", type=int, default=0)

    comp = sub.add_parser("complexity", help="Monte-Carlo complexity estimates")
    comp.add_argument("kind", choices=["gaussian", "rademacher"])
    group = comp.add_mutually_exclusive_group(required=True)
    group.add_argument("--linear-ball", type=float, default=None,
                       help="radius of the linear class")
    group.add_argument("--finite", type=str, default=None,
                       help="tabulated class JSON; data indexes its points")
    comp.add_argument("--data", type=str, default=None,
                      help="CSV of input rows (defaults to a single basis point)")
    comp.add_argument("--dim", type=int, default=3)
    comp.add_argument("--n-mc", type=int, default=10_000)
    comp.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_exp(args) -> int:
    overrides = {"which": args.which, "runs": args.runs, "base_seed": args.seed,
                 "steps": args.steps, "noise_sigma": args.noise_sigma,
                 "out": args.out}
    for key, raw in (("n_so_grid", args.n_so_grid), ("n_ta_grid", args.n_ta_grid)):
        if raw is not None:
            overrides[key] = tuple(int(v) for v in raw.split(","))
    if args.config:
        cfg = config_from_file(args.config, overrides)
    else:
        cfg = ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    rows = run_named_experiment(cfg)
    out = Path(cfg.out) if cfg.out else Path(f"exp_{cfg.which}.csv")
    write_rows(rows, cfg, out)
    print(f"wrote {out}")
    if not args.no_plot:
        from .figures import render_rows  # deferred: matplotlib is heavy
        fig_path = out.with_suffix(".png")
        render_rows(rows, fig_path, title=f"experiment {cfg.which}")
        print(f"wrote {fig_path}")
    for row in rows:
        tag = "baseline" if row.baseline else "transfer"
        print(f"{row.param}={row.value} [{tag}] mean={_fmt(row.mean)} "
              f"std={_fmt(row.std)} runs={len(row.mses)} failed={row.failed_runs}")
    return 0


def _cmd_diversity(args) -> int:
    inst = dv.load_instance(args.instance)
    cert = dv.transfer_ratio(inst, mu=args.mu, nu_cap=args.nu_cap,
                             diverse=args.diverse)
    print(f"nu_hat={_fmt(cert.nu_hat)} mu={_fmt(cert.mu)} worst_h={cert.worst_h}"
          + (f" worst_target={cert.worst_target}" if cert.worst_target is not None else ""))
    for h, ratio in enumerate(cert.per_h):
        print(f"h={h} ratio={_fmt(float(ratio))}")
    witness = dv.negative_transfer_witness(inst)
    if witness is not None:
        print(f"negative_transfer_witness={witness}")
    return 0


def _cmd_eluder(args) -> int:
    fc = el.load_class(args.class_file)
    if args.dual:
        fc = el.dual_class(fc)
    if args.variant in ("longest", "both"):
        cert = el.eluder_dimension(fc, args.eps, node_cap=args.node_cap)
        witness = ",".join(fc.domain[i] for i in cert.witness_sequence)
        print(f"dim_longest={cert.dim} witness=[{witness}] eps_prime={_fmt(cert.epsilon)}")
    if args.variant in ("shortest", "both"):
        cert = el.shortest_cover_dimension(fc, args.eps, node_cap=args.node_cap)
        witness = ",".join(fc.domain[i] for i in cert.witness_sequence)
        print(f"dim_shortest_cover={cert.dim} witness=[{witness}]")
    return 0


def _print_instance(inst) -> None:
    print(f"packing={inst.packing.count} vectors, support={inst.support.shape[0]} points")
    print(f"source_excess={_fmt(inst.source_excess)}")
    print(f"target_excess={_fmt(inst.target_excess)}")
    print(f"ratio={_fmt(inst.ratio)}")


def _cmd_hardness(args) -> int:
    sources = [hd.axis_vector(name, args.d)
               for name in args.sources.split(",") if name]
    if args.family == "relu":
        target = hd.axis_vector(args.target_u, args.d) if args.target_u else None
        inst = hd.build_relu_hard_instance(args.d, args.eps, sources,
                                           target_u=target, n_grid=args.grid,
                                           seed=args.seed)
        _print_instance(inst)
        if args.export:
            dv.save_instance(hd.to_finite_instance(inst), args.export)
            print(f"wrote {args.export}")
    else:
        m = args.m
        if m is None:
            peak = abs(float(hd._ACTIVATIONS[args.activation](np.asarray([args.x1]))[0]))
            tail = hd.left_tail_sup(args.activation, args.x2)
            if tail == 0.0:
                raise ContractError("tail sup is zero; pass --m explicitly")
            m = peak / tail
        target = hd.axis_vector(args.target_u, args.d) if args.target_u else None
        inst = hd.build_general_hard_instance(args.activation, args.x1, args.x2,
                                              m, args.d, sources, target_u=target,
                                              n_grid=args.grid, seed=args.seed)
        print(f"M={_fmt(m)} bound=(M-1)^2/8={_fmt((m - 1.0) ** 2 / 8.0)}")
        _print_instance(inst)
    return 0


def _cmd_complexity(args) -> int:
    if args.finite:
        fc = el.load_class(args.finite)
        handle = cx.FiniteFunctions(
            [(lambda row: (lambda x: row[int(round(float(x[0])))]))(fc.table[j])
             for j in range(fc.n_functions)])
        data = (np.arange(fc.n_points, dtype=float)[:, None] if args.data is None
                else _load_data(args.data))
    else:
        handle = cx.LinearBall(args.linear_ball)
        if args.data is None:
            data = np.zeros((1, args.dim))
            data[0, 0] = 1.0
        else:
            data = _load_data(args.data)
    fn = cx.gaussian_complexity if args.kind == "gaussian" else cx.rademacher_complexity
    est = fn(handle, data, n_mc=args.n_mc, seed=args.seed)
    flag = " low_confidence" if est.low_confidence else ""
    print(f"{args.kind}_complexity mean={_fmt(est.mean)} stderr={_fmt(est.stderr)} "
          f"n_mc={est.n_mc} sup={est.sup_method}{flag}")
    return 0


def _load_data(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise ContractError(f"data file not found: {p}")
    rows = []
    for line in p.read_text().strip().split("\n"):
        parts = line.split(",")
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            continue  # header line
    if not rows:
        raise ContractError(f"no numeric rows in {p}")
    return np.asarray(rows)


_COMMANDS = {"exp": _cmd_exp, "diversity": _cmd_diversity, "eluder": _cmd_eluder,
             "hardness": _cmd_hardness, "complexity": _cmd_complexity}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ContractError as exc:
        print(f"contract error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
