"""Batch command line: generate, run, compare, scaling-study.

Each subcommand takes one declarative config file plus optional dotted
``--set path=value`` overrides; there are no other positional arguments.
Validation failures exit nonzero with a machine-readable error JSON on
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import (
    apply_overrides,
    load_config,
    resolve_compare_spec,
    resolve_generate_spec,
    resolve_run_spec,
    resolve_scaling_spec,
)
from .errors import TallMCError
from .runner import (
    execute_compare,
    execute_generate,
    execute_run,
    execute_scaling_study,
)


def _emit_error(exc, code):
    payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    print(json.dumps(payload), file=sys.stderr)
    return code


def _load(args):
    return apply_overrides(load_config(args.config), args.set)


def _cmd_generate(args):
    spec = resolve_generate_spec(_load(args))
    result = execute_generate(spec)
    print(json.dumps({"generated": result}))
    return 0


def _cmd_run(args):
    spec = resolve_run_spec(_load(args))
    result = execute_run(spec)
    print(json.dumps({"trace": result["trace"], "manifest": result["manifest"],
                      "report": result["report"]}))
    return 0


def _cmd_compare(args):
    spec = resolve_compare_spec(_load(args))
    result = execute_compare(spec)
    print(json.dumps({"comparison_dir": result["comparison_dir"],
                      "manifest": result["manifest"]}))
    return 0


def _cmd_scaling_study(args):
    spec = resolve_scaling_spec(_load(args))
    result = execute_scaling_study(spec)
    print(json.dumps({"table": result["table"], "slopes": result["slopes"],
                      "manifest": result["manifest"]}))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tallmc",
        description="Subsampling pseudo-marginal MCMC for tall datasets")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler, doc in [
        ("generate", _cmd_generate, "write a synthetic dataset"),
        ("run", _cmd_run, "run one chain from a config"),
        ("compare", _cmd_compare, "run several specs on one dataset and compare"),
        ("scaling-study", _cmd_scaling_study, "estimator error against subsample size"),
    ]:
        p = sub.add_parser(name, help=doc)
        p.add_argument("config", help="path to the config file")
        p.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                       help="override a config value (dotted path)")
        p.set_defaults(handler=handler)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except TallMCError as exc:
        return _emit_error(exc, 2)
    except FileNotFoundError as exc:
        return _emit_error(exc, 2)


if __name__ == "__main__":
    sys.exit(main())
