"""Command-line entry point ``covert-qcd``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import dp
from .bounds import BoundVacuousError
from .config import ConfigError, load_config
from .covertness_oracle import InfeasibleEnumerationError, truncated_kl_vs_ecb
from .experiments import sweep, verify, write_outputs
from .policy import ConstantBetaShiryaev


def _err(msg: str) -> None:
    print(f"covert-qcd: error: {msg}", file=sys.stderr)


def cmd_reproduce(args) -> int:
    config = load_config(args.config)
    out = Path(args.out or config.output_dir)
    rows = sweep(config, progress=None if args.quiet else lambda m: print(m, file=sys.stderr))
    for p in write_outputs(rows, out, plots=not args.no_plots):
        print(p)
    capped = sum(r.summary.n_capped for r in rows)
    if capped:
        _err(f"{capped} runs hit the step cap and were excluded from the means")
        return 3
    return 0


def cmd_verify(args) -> int:
    config = load_config(args.config)
    results = verify(config)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_dp_solve(args) -> int:
    config = load_config(args.config)
    L = args.abs_ln_alpha if args.abs_ln_alpha is not None else config.grid[-1]
    scenario = config.scenario(L)
    acts = config.dp.actions
    if acts == "default":
        acts = dp.default_actions(scenario)
    elif acts == "ladder":
        acts = dp.ladder_actions(scenario)
    table = dp.solve(scenario, grid_size=config.dp.grid_size, actions=acts)
    Path(args.out).write_text(table.to_json() + "\n", encoding="utf-8")
    md = table.metadata
    print(
        f"lambda = {table.lam:.6g}, lambda_f = {table.lam_f:.6g}; grid ADD {md['grid_add']:.6g}, "
        f"PFA {md['grid_pfa']:.3g}, ECB {md['grid_ecb']:.3g}"
    )
    return 0


def cmd_oracle(args) -> int:
    config = load_config(args.config)
    scenario = config.scenario(args.abs_ln_alpha)
    r = truncated_kl_vs_ecb(scenario, ConstantBetaShiryaev(args.beta), args.horizon)
    print("gamma_class,weight,kl,ecb")
    for j, (w, kl, cost) in enumerate(zip(r.weights, r.per_k_kl, r.per_k_ecb)):
        label = f"{j + 1}" if j < r.horizon - 1 else f">={r.horizon}"
        print(f"{label},{w:.12g},{kl:.12g},{cost:.12g}")
    print(f"true_kl = {r.true_kl:.12g}")
    print(f"ecb_truncated = {r.ecb_truncated:.12g}")
    print(f"pinsker_complement = {r.pinsker_complement:.12g}")
    ok = r.true_kl <= r.ecb_truncated
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covert-qcd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    help_cfg = "experiment config (JSON) or @reference for the bundled example"

    p = sub.add_parser("reproduce", help="run the grid sweep and write fig1/fig2 CSV and SVG")
    p.add_argument("--config", required=True, help=help_cfg)
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.add_argument("--no-plots", action="store_true", help="write CSV files only")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("verify", help="run the oracle checks and print pass/fail per check")
    p.add_argument("--config", required=True, help=help_cfg)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("dp-solve", help="solve the belief-grid DP and save the policy as JSON")
    p.add_argument("--config", required=True, help=help_cfg)
    p.add_argument("--out", required=True, help="output JSON path")
    p.add_argument("--abs-ln-alpha", type=float, help="PFA target |ln alpha| (default: last grid point)")
    p.set_defaults(func=cmd_dp_solve)

    p = sub.add_parser("oracle", help="exact truncated KL against the truncated ECB")
    p.add_argument("--config", required=True, help=help_cfg)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--abs-ln-alpha", type=float, default=1.0)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(str(exc))
        return 2
    except (InfeasibleEnumerationError, BoundVacuousError, dp.DPConvergenceError, ValueError) as exc:
        _err(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
