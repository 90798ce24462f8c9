"""Command-line entry point: ``bada {run,suite,score,plot}``.

Exit codes: 0 success, 1 a run failed, 2 bad configuration.
"""

import argparse
import glob
import json
import logging
import os
import sys

from .exceptions import ConfigError
from .harness import (
    RunConfig,
    load_run,
    run,
    run_suite,
    summary_row,
    write_scores,
    write_summary,
)

EXIT_OK, EXIT_RUN_FAILURE, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("bada")


def _overrides(args):
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.method is not None:
        out["method"] = args.method
    if args.checkpoint:
        out["checkpoint"] = True
    return out


def _load_config(path, overrides):
    cfg = RunConfig() if path is None else RunConfig.from_json(path)
    # replace() re-validates through __post_init__
    return cfg.replace(**overrides) if overrides else cfg


def expand_suite_file(path, overrides):
    """A suite file holds one config, optionally with ``seeds``/``methods`` lists."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    seeds = doc.pop("seeds", [doc.get("seed", 0)])
    methods = doc.pop("methods", [doc.get("method", "bada")])
    configs = []
    for method in methods:
        for seed in seeds:
            cfg = RunConfig.from_dict({**doc, "seed": int(seed), "method": method})
            configs.append(cfg.replace(**overrides) if overrides else cfg)
    return configs


def _suite_configs(path, overrides):
    if path is None:
        raise ConfigError("suite needs --config pointing at a directory or JSON file")
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.json")))
    elif os.path.isfile(path):
        files = [path]
    else:
        raise ConfigError(f"no such config path: {path}")
    configs = []
    for f in files:
        configs.extend(expand_suite_file(f, overrides))
    return configs


def _run_dirs(root):
    if os.path.exists(os.path.join(root, "epochs.jsonl")):
        return [root]
    return sorted(os.path.dirname(p) for p in glob.glob(os.path.join(root, "*", "epochs.jsonl")))


def cmd_run(args):
    cfg = _load_config(args.config, _overrides(args))
    out = args.out or cfg.out_dir or "runs/run"
    cfg = cfg.replace(out_dir=out)
    reports = run(cfg)
    row = summary_row(cfg, reports)
    write_summary([row], os.path.join(out, "summary.csv"))
    print(f"{cfg.env} {cfg.method} seed={cfg.seed} f1={row['f1']:.3f} "
          f"cumulative_reward={row['cumulative_reward']:.2f} -> {out}")
    return EXIT_OK


def cmd_suite(args):
    configs = _suite_configs(args.config, _overrides(args))
    out = args.out or "runs/suite"
    rows, failures = run_suite(configs, out)
    print(f"{len(rows)} runs ok, {len(failures)} failed -> {os.path.join(out, 'summary.csv')}")
    return EXIT_RUN_FAILURE if failures else EXIT_OK


def cmd_score(args):
    root = args.out or args.config
    if root is None or not os.path.isdir(root):
        raise ConfigError("score needs --out pointing at a run or suite directory")
    rows = []
    for d in _run_dirs(root):
        cfg, reports, change_epochs = load_run(d)
        write_scores(d, cfg, reports, change_epochs)
        rows.append(summary_row(cfg.replace(change_epochs=change_epochs), reports))
    write_summary(rows, os.path.join(root, "summary.csv"))
    print(f"re-scored {len(rows)} runs -> {os.path.join(root, 'summary.csv')}")
    return EXIT_OK


def cmd_plot(args):
    from .plotting import write_suite_plots

    root = args.out or args.config
    if root is None or not os.path.isdir(root):
        raise ConfigError("plot needs --out pointing at a run or suite directory")
    results, rows = [], []
    for d in _run_dirs(root):
        cfg, reports, _ = load_run(d)
        results.append((cfg, reports))
        rows.append(summary_row(cfg, reports))
    for path in write_suite_plots(results, rows, root):
        print(path)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "suite": cmd_suite, "score": cmd_score, "plot": cmd_plot}


def build_parser():
    parser = argparse.ArgumentParser(prog="bada", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--method", metavar="NAME")
        p.add_argument("--checkpoint", action="store_true",
                       help="write policy weights every epoch")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which is our config-error code too
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any run failure maps to exit 1
        log.debug("run failed", exc_info=True)
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE


if __name__ == "__main__":
    sys.exit(main())
