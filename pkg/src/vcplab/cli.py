"""Scenario runner front end.

``vcplab run <spec-file>`` executes one scenario described by a JSON
document (name, optional parameter overrides, output directory) and writes
comma-separated tables plus a machine-readable summary; ``vcplab list``
prints the scenario catalog.  Exit codes: 0 success, 1 assertion-grade
failure inside a run, 2 spec parse/validation failure, 3 unknown scenario.
"""

import argparse
import copy
import json
import os
import sys
import tempfile

import numpy as np

from . import scenarios

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_PARSE = 2
EXIT_UNKNOWN = 3


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _format_cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_table(path, header, rows):
    lines = [",".join(header)]
    lines.extend(",".join(_format_cell(c) for c in row) for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def load_spec(path, overrides):
    with open(path) as fh:
        spec = json.load(fh)
    if not isinstance(spec, dict) or "name" not in spec:
        raise ValueError("spec must be a JSON object with a 'name' field")
    name = spec["name"]
    if name not in scenarios.DEFAULTS:
        raise KeyError(name)
    params = copy.deepcopy(scenarios.DEFAULTS[name]["parameters"])
    params.update(spec.get("parameters", {}))
    if overrides.get("seed") is not None:
        params["seed"] = overrides["seed"]
    if overrides.get("grid") is not None:
        params["grid"] = overrides["grid"]
        if "grids" in params:
            params["grids"] = [overrides["grid"]]
    if overrides.get("ladder") is not None:
        params["ladder"] = overrides["ladder"]
    if params.get("seed") is None:
        raise ValueError("a seed is mandatory for every scenario run")
    out_dir = overrides.get("out_dir") or spec.get("output", ".")
    return name, params, out_dir


def cmd_run(args):
    try:
        name, params, out_dir = load_spec(args.spec, {
            "seed": args.seed,
            "grid": args.grid,
            "ladder": [int(x) for x in args.ladder.split(",")]
            if args.ladder else None,
            "out_dir": args.out_dir,
        })
    except KeyError as exc:
        print(f"unknown scenario: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_PARSE

    tables, summary, passed = scenarios.run_scenario(name, params)
    os.makedirs(out_dir, exist_ok=True)
    for tname, (header, rows) in sorted(tables.items()):
        write_table(os.path.join(out_dir, f"{name}__{tname}.csv"),
                    header, rows)
    summary["parameters"] = params
    _atomic_write(os.path.join(out_dir, f"{name}__summary.json"),
                  json.dumps(summary, sort_keys=True, indent=2,
                             default=str) + "\n")
    print(f"{name}: {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_ASSERTION


def cmd_list(args):
    names = scenarios.scenario_names(args.module)
    for n in names:
        print(f"{n}\t{scenarios.DEFAULTS[n]['module']}")
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="vcplab")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="execute a scenario spec file")
    runp.add_argument("spec")
    runp.add_argument("--seed", type=int, default=None)
    runp.add_argument("--out-dir", default=None)
    runp.add_argument("--ladder", default=None,
                      help="comma-separated index ladder")
    runp.add_argument("--grid", type=int, default=None)
    listp = sub.add_parser("list", help="list builtin scenarios")
    listp.add_argument("--module", default=None)
    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    return cmd_list(args)


if __name__ == "__main__":
    sys.exit(main())
