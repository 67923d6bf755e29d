"""Command-line interface: dataset simulation, single identification runs,
and the Monte Carlo study.

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 I/O
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

from . import pem
from .bench import (
    ExperimentConfig,
    config_from_dict,
    emit_csv,
    emit_summary,
    run_monte_carlo,
    _identify,
)
from .errors import ConfigError, NumericalError
from .netsim import generate_dataset, load_record_csv, save_record_csv

CLI_METHODS = {
    "wnsf1": "wnsf1",
    "wnsf3": "wnsf3",
    "pem-true": "pem_true",
    "pem-wnsf": "pem_wnsf_init",
}


def _load_config(path) -> tuple[ExperimentConfig, dict]:
    if path is None:
        return ExperimentConfig(), {}
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return config_from_dict(raw), raw


def _cmd_simulate(args) -> int:
    config, raw = _load_config(args.config)
    n = int(raw.get("N", config.n_list[0]))
    record = generate_dataset(config.model, n, args.seed, config.input_spec)
    save_record_csv(record, args.out)
    print(f"wrote {n} samples to {args.out}")
    return 0


def _cmd_identify(args) -> int:
    config, _ = _load_config(args.config)
    data = load_record_csv(args.data)
    method = CLI_METHODS[args.method]
    theta, chosen_n, converged = _identify(config, method, data)
    cost = pem.pem_cost(theta, data) if theta.is_stable() else float("inf")

    names = []
    for j, o in enumerate(theta.orders, start=1):
        names += [f"module{j}.f{k}" for k in range(1, o.n_f + 1)]
        names += [f"module{j}.b{k}" for k in range(o.n_b)]
    print(f"method={args.method} chosen_n={chosen_n} converged={converged}")
    print(f"criterion={cost:.6g}")
    for name, value in zip(names, theta.values):
        print(f"  {name} = {value:.8g}")

    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "value"])
            for name, value in zip(names, theta.values):
                writer.writerow([name, format(value, ".17g")])
            writer.writerow(["criterion", format(cost, ".17g")])
            writer.writerow(["chosen_n", chosen_n])
            writer.writerow(["converged", "true" if converged else "false"])
    return 0


def _cmd_montecarlo(args) -> int:
    config, _ = _load_config(args.config)
    rows = run_monte_carlo(config, jobs=args.jobs)
    emit_csv(rows, args.out)
    if args.summary:
        emit_summary(rows, args.summary)
    n_cells = len(config.n_list) * config.runs
    print(f"completed {n_cells} runs x {len(config.methods)} methods -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascadeid",
        description="Identification of serial cascade networks with sensor noise.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate one dataset as CSV")
    p_sim.add_argument("--config", help="JSON experiment configuration")
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_id = sub.add_parser("identify", help="run one identification method")
    p_id.add_argument("--method", choices=sorted(CLI_METHODS), required=True)
    p_id.add_argument("--data", required=True, help="dataset CSV")
    p_id.add_argument("--config", help="JSON experiment configuration")
    p_id.add_argument("--out", help="write estimate and diagnostics as CSV")
    p_id.set_defaults(func=_cmd_identify)

    p_mc = sub.add_parser("montecarlo", help="run the full Monte Carlo study")
    p_mc.add_argument("--config", help="JSON experiment configuration")
    p_mc.add_argument("--out", required=True, help="raw results CSV")
    p_mc.add_argument("--summary", help="aggregated results CSV")
    p_mc.add_argument("--jobs", type=int, default=1)
    p_mc.set_defaults(func=_cmd_montecarlo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
