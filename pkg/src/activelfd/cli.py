"""Command-line entry point for batch experiments and the teaching service."""

from __future__ import annotations

import argparse
import sys

from . import campaign


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML experiment config (defaults embedded)")
    p.add_argument("--seed", type=int, help="override: single seed campaign")
    p.add_argument("--out", help="override: output directory")


def _load_config(args) -> campaign.ExperimentConfig:
    if args.config:
        config = campaign.config_from_toml(args.config)
    else:
        config = campaign.ExperimentConfig()
    if getattr(args, "out", None):
        config.out = args.out
    if getattr(args, "seed", None) is not None:
        config.seeds = (args.seed,)
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="activelfd",
        description="Active learning of demonstration-based control policies",
    )
    parser.add_argument("--print-config", action="store_true",
                        help="print the default config as TOML and exit")
    sub = parser.add_subparsers(dest="command")

    p_fit = sub.add_parser("fit", help="fit the initial policy on scripted demos")
    _add_common(p_fit)

    p_active = sub.add_parser("active", help="run the active-learning campaign")
    _add_common(p_active)
    p_active.add_argument("--iterations", type=int, help="override iteration count")

    p_rand = sub.add_parser("random-baseline",
                            help="run the uniform random-exploration baseline")
    _add_common(p_rand)
    p_rand.add_argument("--iterations", type=int, help="override iteration count")

    p_grid = sub.add_parser("grid", help="dump an uncertainty or cost grid")
    _add_common(p_grid)
    p_grid.add_argument("--mode", default="epistemic",
                        choices=["total", "aleatoric", "epistemic", "cost"])
    p_grid.add_argument("--resolution", type=int, help="grid points per axis")

    p_roll = sub.add_parser("rollouts", help="roll the fitted policy out")
    _add_common(p_roll)
    p_roll.add_argument("--policy", default="poe", choices=["poe", "bgmm"])
    p_roll.add_argument("--mode", default="sample", choices=["sample", "mean"])
    p_roll.add_argument("--n", type=int, help="rollouts per start")

    p_serve = sub.add_parser("serve", help="serve the live teaching HTTP API")
    _add_common(p_serve)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.print_config:
        print(campaign.config_to_toml(campaign.ExperimentConfig()), end="")
        return 0
    if not args.command:
        parser.print_help()
        return 2

    try:
        config = _load_config(args)
        if args.command == "fit":
            session = campaign.fit_initial(config)
            print(f"fitted posterior on {session.dataset.n} points "
                  f"-> {config.out}/fit/")
        elif args.command == "active":
            report = campaign.run_active(config, iterations=args.iterations)
            final = report["aggregate"]["mean"][-1]
            print(f"active campaign done, mean final H2(q) = {final:.4f} "
                  f"-> {config.out}/active/")
        elif args.command == "random-baseline":
            report = campaign.run_random_baseline(config, iterations=args.iterations)
            final = report["aggregate"]["mean"][-1]
            print(f"random baseline done, mean final H2(q) = {final:.4f} "
                  f"-> {config.out}/random/")
        elif args.command == "grid":
            path = campaign.dump_uncertainty_grid(config, args.mode, args.resolution)
            print(f"grid written to {path}")
        elif args.command == "rollouts":
            summary = campaign.run_rollouts(config, policy=args.policy,
                                            mode=args.mode, n_per_start=args.n)
            print(f"{summary['n_success']}/{len(summary['results'])} rollouts "
                  f"succeeded -> {config.out}/rollouts/")
        elif args.command == "serve":
            import uvicorn

            from .service import create_app

            uvicorn.run(create_app(config), host=args.host, port=args.port)
    except Exception as exc:  # nonzero exit with diagnostic per contract
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
