"""Command-line entry point: ``msda-wjdot {generate,train,experiment,diagnose}``.

Exit codes: 0 success, 1 invalid input (config, data files, arguments),
2 runtime failure (a method failed, the output directory is unusable, ...).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import InputError
from .experiment import (
    METHODS,
    ExperimentConfig,
    generate_data,
    load_domains,
    parse_config,
    prepare_output_dir,
    run_diagnostics,
    run_experiment,
    run_method,
    serialize_config,
)
from .model import accuracy, save_model
from .wjdot import write_trajectory

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2

log = logging.getLogger("msda_wjdot")


def build_parser():
    parser = argparse.ArgumentParser(prog="msda-wjdot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", help="output directory (default: output_dir from the config)")
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        return p

    common(sub.add_parser("generate", help="write the synthetic datasets as CSV"))
    train = common(sub.add_parser("train", help="train one method on one dataset set"))
    train.add_argument("--method", choices=METHODS, help="method to train (default: first configured method)")
    common(sub.add_parser("experiment", help="run the replication sweep"))
    common(sub.add_parser("diagnose", help="bound diagnostics on labelled synthetic targets"))
    return parser


def _setup_logging(out=None):
    log.setLevel(logging.INFO)
    for h in list(log.handlers):
        log.removeHandler(h)
        h.close()
    fmt = logging.Formatter("%(levelname)s %(message)s")
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(fmt)
    log.addHandler(stream)
    if out is not None:
        handler = logging.FileHandler(Path(out) / "run.log", mode="w")
        handler.setFormatter(fmt)
        log.addHandler(handler)
    log.propagate = False


def _train(config: ExperimentConfig, out, method):
    method = method or config.methods[0]
    seed = config.base_seed
    domains = load_domains(config, config.target_parameters[0], seed)
    f, state = run_method(method, config, domains, seed)
    test = domains.target[2]
    acc = accuracy(f, test.features, test.labels)
    save_model(f, out / "model.txt")
    if state is not None:
        write_trajectory(state, out / "trajectory.csv")
    (out / "metrics.csv").write_text(f"method,seed,accuracy\n{method},{seed},{acc!r}\n")
    log.info("%s test accuracy %.4f", method, acc)
    print(f"{method} test accuracy: {acc:.4f}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        config = parse_config(args.config)
        if args.seed is not None:
            config.base_seed = args.seed
        if args.jobs < 1:
            raise InputError("--jobs must be >= 1")
        config.validate(Path(args.config).parent)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    try:
        out = prepare_output_dir(args.out or config.output_dir)
    except OSError as exc:
        log.error("output directory is not writable: %s", exc)
        return EXIT_FAILED
    _setup_logging(out)
    for line in serialize_config(config).splitlines():
        log.info("config: %s", line)
    try:
        if args.command == "generate":
            for path in generate_data(config, out):
                log.info("wrote %s", path)
        elif args.command == "train":
            _train(config, out, args.method)
        elif args.command == "experiment":
            results = run_experiment(config, out, jobs=args.jobs)
            if results.n_failed:
                log.error("%d method runs failed; see replications.csv", results.n_failed)
                return EXIT_FAILED
        elif args.command == "diagnose":
            run_diagnostics(config, out)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - reported through the exit status
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
