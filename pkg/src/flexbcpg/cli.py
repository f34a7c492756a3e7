"""Command-line interface.

Exit codes: 0 success, 1 failed validation, 2 configuration error,
3 numerical abort or step-size violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .imaging import (ConfigError, ExperimentConfig, matched_cost_compare, observe,
                      run_experiment, write_comparison, write_json)
from .pgm import write_pgm
from .solver import NumericalAbort, ScheduleNotCertified, StepBoundError

log = logging.getLogger("flexbcpg")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    node = d
    for i, p in enumerate(parts[:-1]):
        if isinstance(node, list):
            p = int(p)
            node = node[p]
            continue
        if p not in node:
            node[p] = [] if parts[i + 1].isdigit() else {}
        node = node[p]
    last = parts[-1]
    if isinstance(node, list):
        idx = int(last)
        while len(node) <= idx:
            node.append({})
        node[idx] = value
    else:
        node[last] = value


def load_raw(args) -> dict:
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config!r}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON in {args.config!r}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be a JSON object")
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            _set_dotted(raw, k.strip(), _parse_value(v))
        except (IndexError, ValueError, TypeError):
            raise ConfigError(f"--set: cannot apply {item!r}") from None
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out_dir"] = args.out
    return raw


def base_config(raw: dict) -> ExperimentConfig:
    return ExperimentConfig.from_dict({k: v for k, v in raw.items() if k != "variants"})


def _prepare_out(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def cmd_run(raw: dict, quiet: bool) -> int:
    cfg = base_config(raw)
    out = _prepare_out(cfg)
    write_json(os.path.join(out, "config.resolved.json"), cfg.to_dict())
    res = run_experiment(cfg)
    res.trace.to_csv(os.path.join(out, "trace.csv"))
    write_pgm(os.path.join(out, "restored.pgm"), res.restored)
    summary = res.summary()
    write_json(os.path.join(out, "summary.json"), summary)
    if not quiet:
        print(f"{summary['variant']}: psi {summary['initial_objective']:.6g} -> "
              f"{summary['final_objective']:.6g} in {summary['cycles']} cycles "
              f"({summary['stop_reason']}), PSNR {summary['psnr_restored']:.2f} dB")
    return EXIT_OK


def cmd_compare(raw: dict, quiet: bool) -> int:
    base = base_config(raw)
    variants = raw.get("variants")
    if not isinstance(variants, list) or not variants:
        raise ConfigError("variants: a non-empty list of override objects is required")
    cfgs = []
    for i, v in enumerate(variants):
        if not isinstance(v, dict):
            raise ConfigError(f"variants.{i}: expected an object")
        try:
            cfgs.append(base.replace(**v))
        except ConfigError as exc:
            raise ConfigError(f"variants.{i}: {exc}") from None
    out = _prepare_out(base)
    write_json(os.path.join(out, "config.resolved.json"),
               {**base.to_dict(), "variants": variants})
    cmp = matched_cost_compare(cfgs)
    write_comparison(cmp, out)
    summaries = {k: r.summary() for k, r in cmp["results"].items()}
    write_json(os.path.join(out, "summary.json"), summaries)
    if not quiet:
        for k, s in summaries.items():
            i = -1 if len(cmp["cost"]) else None
            at = cmp["curves"][k][i] if i is not None else float("nan")
            print(f"{k:<16} final psi {s['final_objective']:.8g}  "
                  f"psi at matched budget {at:.8g}")
    return EXIT_OK


def cmd_degrade(raw: dict, quiet: bool) -> int:
    cfg = base_config(raw)
    out = _prepare_out(cfg)
    write_json(os.path.join(out, "config.resolved.json"), cfg.to_dict())
    u, z, _ = observe(cfg)
    write_pgm(os.path.join(out, "original.pgm"), u)
    write_pgm(os.path.join(out, "observed.pgm"), z)
    np.save(os.path.join(out, "observed.npy"), z)
    if not quiet:
        print(f"wrote {out}/observed.pgm ({cfg.side}x{cfg.side}, sigma={cfg.noise_sigma})")
    return EXIT_OK


def cmd_validate(raw: dict, quiet: bool) -> int:
    from .checks import run_checks

    cfg = base_config(raw)
    out = _prepare_out(cfg)
    write_json(os.path.join(out, "config.resolved.json"), cfg.to_dict())
    results = run_checks(cfg)
    write_json(os.path.join(out, "validate.json"),
               [{"name": r.name, "passed": r.passed, "measured": r.measured, "tol": r.tol,
                 "slack": r.slack, "detail": r.detail} for r in results])
    if not quiet:
        for r in results:
            print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_equivalence(raw: dict, quiet: bool) -> int:
    from .multilevel import TwoLevelModel, equivalence_check
    from .wavelet import HaarFrame

    cfg = base_config(raw)
    out = _prepare_out(cfg)
    write_json(os.path.join(out, "config.resolved.json"), cfg.to_dict())
    _, z, blur = observe(cfg)
    frame = HaarFrame(cfg.side, cfg.levels)
    model = TwoLevelModel(frame, blur, z, cfg.lambda_a, cfg.lambda_d, cfg.eps)
    x0 = model.join(frame.project_v(z), frame.project_w(z))
    rep = equivalence_check(model, cfg.cycles, x0, tau=cfg.tau)
    write_json(os.path.join(out, "equivalence.json"),
               {"steps": cfg.cycles, "max_deviation": rep.max_deviation, "tol": rep.tol,
                "passed": rep.passed, "deviations": rep.deviations})
    if not quiet:
        print(f"{'PASS' if rep.passed else 'FAIL'}  max deviation {rep.max_deviation:.3e} "
              f"over {cfg.cycles} outer iterations (tol {rep.tol:.0e})")
    return EXIT_OK if rep.passed else EXIT_FAIL


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "degrade": cmd_degrade,
            "validate": cmd_validate, "equivalence": cmd_equivalence}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flexbcpg", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (dotted keys reach into variants); repeatable")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int, help="master seed (overrides seed)")
    p.add_argument("--quiet", action="store_true", help="suppress console output")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        raw = load_raw(args)
        return COMMANDS[args.command](raw, args.quiet)
    except (NumericalAbort, StepBoundError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ScheduleNotCertified, ValueError) as exc:
        # remaining ValueErrors come from schedule/operator construction
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
