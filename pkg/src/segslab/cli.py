"""Command-line front end: ``segslab <command> [options]``.

Exit codes: 0 success, 1 invalid configuration/input, 2 runtime or I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .control import write_control_trace
from .diffusion import sample, write_samples_csv
from .distill import default_rig, distill, write_asset_json, write_log_csv
from .errors import InvalidInputError
from .guidance import Guide, build_basis_bank, load_bank, save_bank
from .metrics import fpe_check, VPSDE, view_histogram, write_json
from .sweeps import constructed_reference_set, lambda_sweep, topk_sweep, write_table_csv

log = logging.getLogger("segslab")

OUTPUT_ENV = "SEGSLAB_OUTPUT_ROOT"


def _bool(text: str) -> bool:
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _int_list(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",") if v]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("--preset", default="default", choices=sorted(C.PRESETS))
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted override, e.g. guidance.k=5")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="run directory")
    common.add_argument("--guided", type=_bool, nargs="?", const=True)
    common.add_argument("--lambda", dest="lambda_v", type=float)
    common.add_argument("--guard", type=_bool, nargs="?", const=True)
    common.add_argument("--bank", type=Path, help="reuse a saved basis bank (.npz)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="segslab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("sample", parents=[common], help="reverse-diffusion samples")
    p.add_argument("--n", type=int)
    p.add_argument("--sampler", choices=["ddim", "ddpm"])
    p.add_argument("--cond", help="view label to condition on")
    sub.add_parser("distill", parents=[common], help="one toy distillation run")
    p = sub.add_parser("fpe-check", parents=[common], help="forward/reverse SDE check")
    p.add_argument("--particles", type=int)
    p.add_argument("--steps", type=int)
    p = sub.add_parser("sweep-topk", parents=[common], help="View-CS analog per k")
    p.add_argument("--k", type=_int_list, help="e.g. 1..8 or 1,3,5")
    p.add_argument("--seeds", type=int)
    p = sub.add_parser("sweep-lambda", parents=[common], help="metrics per guidance weight")
    p.add_argument("--lambdas", type=_float_list, help="comma-separated weights")
    p.add_argument("--seeds", type=int)
    return parser


def resolve_config(args) -> dict:
    overrides = [C.parse_override(o) for o in args.overrides]
    flag_map = {
        "seed": "seed", "guided": "guidance.enabled", "lambda_v": "guidance.lambda_v",
        "guard": "guard.enabled", "n": "sample.n", "sampler": "sample.sampler",
        "cond": "sample.cond", "particles": "fpe.particles", "steps": "fpe.steps",
        "k": "sweep.k_values", "lambdas": "sweep.lambdas",
    }
    for attr, key in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides.append((key, val))
    if getattr(args, "seeds", None) is not None:
        overrides.append(("sweep.seeds", args.seeds))
    return C.load_config(args.config, args.preset, overrides)


def run_dir(args, cfg: dict) -> Path:
    if args.out is not None:
        out = args.out
    elif cfg.get("output_dir"):
        out = Path(cfg["output_dir"])
    else:
        root = Path(os.environ.get(OUTPUT_ENV, "runs"))
        out = root / f"{args.command}-{C.config_hash(cfg)}"
    out.mkdir(parents=True, exist_ok=True)
    cfg = dict(cfg, output_dir=str(out))
    (out / "config.json").write_text(json.dumps(cfg, indent=2))
    return out


def _bank(args, cfg, prior, schedule, fx, out: Path, aux=None, scores=None):
    if args.bank is not None:
        return load_bank(args.bank)
    g = cfg["guidance"]
    bank = build_basis_bank(prior, schedule, fx, g["view"], N=g["N"],
                            n_components=g["n_components"], k=g["k"], seed=g["basis_seed"],
                            stride=g["stride"], aux=aux, similarities=scores)
    save_bank(out / "bank.npz", bank)
    return bank


def cmd_sample(args, cfg, out: Path) -> None:
    prior, schedule = C.build_prior(cfg), C.build_schedule(cfg)
    s, g = cfg["sample"], cfg["guidance"]
    eps_model, trace = None, None
    if g["enabled"]:
        fx = C.build_features(cfg, prior.dim)
        trace = []
        eps_model = Guide(prior, schedule, _bank(args, cfg, prior, schedule, fx, out), fx,
                          g["lambda_v"], cond=s["cond"], trace=trace)
    xs = sample(prior, schedule, s["cond"], s["n"], cfg["seed"], mode=s["sampler"],
                eps_model=eps_model)
    write_samples_csv(out / "samples.csv", xs, prior)
    hist = view_histogram(xs, prior)
    payload = {"n": s["n"], "histogram": hist,
               "fractions": {k: v / s["n"] for k, v in hist.items()},
               "guided": bool(g["enabled"]), "lambda_v": g["lambda_v"]}
    if trace is not None:
        payload["energy_trace"] = trace
    write_json(out / "histogram.json", payload)


def cmd_distill(args, cfg, out: Path) -> None:
    prior, schedule = C.build_prior(cfg), C.build_schedule(cfg)
    fx = C.build_features(cfg, prior.dim)
    bank = _bank(args, cfg, prior, schedule, fx, out) if cfg["guidance"]["enabled"] else None
    result = distill(C.build_distill_config(cfg), prior, schedule, default_rig(), fx, bank)
    write_log_csv(out / "log.csv", result.log)
    write_json(out / "metrics.json", result.metrics)
    write_asset_json(out / "asset.json", result.theta)
    write_control_trace(out / "trace.csv", [
        {"iteration": r.iteration, "sigma": r.sigma, "decision": r.decision, "b": r.b,
         "b_ema": r.b_ema, "q": r.q, "lambda": r.lambda_v} for r in result.log])


def cmd_fpe_check(args, cfg, out: Path) -> None:
    prior, schedule = C.build_prior(cfg), C.build_schedule(cfg)
    rep = fpe_check(prior, VPSDE.from_schedule(schedule), cfg["fpe"]["particles"],
                    cfg["fpe"]["steps"], cfg["seed"])
    (out / "fpe_report.json").write_text(rep.to_json())


def _seeds(cfg):
    return list(range(cfg["seed"], cfg["seed"] + cfg["sweep"]["seeds"]))


def cmd_sweep_topk(args, cfg, out: Path) -> None:
    prior, schedule = C.build_prior(cfg), C.build_schedule(cfg)
    fx = C.build_features(cfg, prior.dim)
    g, sw = cfg["guidance"], cfg["sweep"]
    aux = scores = None
    if sw["constructed"]:
        aux, scores = constructed_reference_set(prior, max(max(sw["k_values"]), 4), g["view"])
    rows = topk_sweep(sw["k_values"], C.build_distill_config(cfg), prior, schedule, fx,
                      _seeds(cfg), N=g["N"], n_components=g["n_components"],
                      basis_seed=g["basis_seed"], stride=g["stride"], aux=aux, scores=scores,
                      workers=sw["workers"])
    write_table_csv(out / "topk.csv", rows)


def cmd_sweep_lambda(args, cfg, out: Path) -> None:
    prior, schedule = C.build_prior(cfg), C.build_schedule(cfg)
    fx = C.build_features(cfg, prior.dim)
    bank = _bank(args, cfg, prior, schedule, fx, out)
    sw = cfg["sweep"]
    rows = lambda_sweep(sw["lambdas"], C.build_distill_config(cfg), prior, schedule, fx, bank,
                        _seeds(cfg), collapse_multiple=sw["collapse_multiple"],
                        workers=sw["workers"])
    write_table_csv(out / "lambda.csv", rows)


COMMANDS = {
    "sample": cmd_sample, "distill": cmd_distill, "fpe-check": cmd_fpe_check,
    "sweep-topk": cmd_sweep_topk, "sweep-lambda": cmd_sweep_lambda,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        out = run_dir(args, cfg)
        COMMANDS[args.command](args, cfg, out)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    log.info("wrote %s", out)
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
