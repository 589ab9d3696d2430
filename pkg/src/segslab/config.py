"""Run configuration: nested defaults, YAML files, dotted overrides, validation."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .diffusion import VIEWS, MixturePrior, NoiseSchedule, default_prior_spec, linear_schedule, make_prior
from .distill import DistillConfig
from .errors import InvalidInputError
from .guidance import FeatureExtractor, make_feature_extractor


class ConfigError(InvalidInputError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))


DEFAULTS: dict = {
    "seed": 0,
    "output_dir": None,
    "prior": {
        "weights": [0.8, 0.1, 0.1],
        "separation": 3.0,
        "std": [0.5, 2.5],
        "modes": None,
    },
    "schedule": {"T": 1000, "beta_start": 1e-4, "beta_end": 2e-2},
    "features": {
        "height": 4, "width": 4, "channels": 32, "seed": 0,
        "weight_scale": 0.35, "bias_scale": 0.5, "embed_scale": 0.5, "t_scale": 0.01,
    },
    "guidance": {
        "enabled": False, "view": "back", "N": 20, "n_components": 8, "k": 3,
        "lambda_v": 10.0, "lambda_source": "fixed", "stride": 1, "basis_seed": 0,
    },
    "guard": {"enabled": False, "alpha": 0.5, "warmup": 50},
    "scheduler": {"beta": 0.9, "lambda_min": 0.0, "lambda_max": 15.0},
    "sample": {"n": 1000, "sampler": "ddpm", "cond": None},
    "distill": {
        "iterations": 2000, "lr": 0.03, "t_min_frac": 0.02, "t_max_frac": 0.98,
        "init_std": 0.5, "cond": None, "seeds": 20,
    },
    "fpe": {"particles": 10_000, "steps": 1000},
    "sweep": {
        "k_values": [1, 2, 3, 4, 5, 6, 7, 8],
        "lambdas": [0.0, 5.0, 10.0, 15.0, 30.0, 100.0, 300.0],
        "seeds": 20, "collapse_multiple": 4.0, "workers": 1, "constructed": True,
    },
}

PRESETS: dict[str, dict] = {
    "default": {},
    "reference-scale": {
        "features": {"channels": 128},
        "guidance": {"N": 20, "n_components": 64, "k": 3},
        "guard": {"alpha": 0.5},
        "scheduler": {"beta": 0.9},
    },
}


def deep_merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in (update or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def set_dotted(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError([f"{dotted}: unknown section {key!r}"])
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError([f"{dotted}: unknown field"])
    node[keys[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError([f"override {text!r} is not key=value"])
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_config(path=None, preset: str = "default", overrides=()) -> dict:
    if preset not in PRESETS:
        raise ConfigError([f"preset: unknown preset {preset!r}"])
    cfg = deep_merge(DEFAULTS, PRESETS[preset])
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc
        if not isinstance(data, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
        unknown = _unknown_keys(data, DEFAULTS)
        if unknown:
            raise ConfigError([f"{k}: unknown field" for k in unknown])
        cfg = deep_merge(cfg, data)
    for key, value in overrides:
        set_dotted(cfg, key, value)
    validate(cfg)
    return cfg


def _unknown_keys(data: dict, ref: dict, prefix: str = "") -> list[str]:
    out = []
    for k, v in data.items():
        path = f"{prefix}{k}"
        if k not in ref:
            out.append(path)
        elif isinstance(v, dict) and isinstance(ref[k], dict):
            out.extend(_unknown_keys(v, ref[k], path + "."))
    return out


def validate(cfg: dict) -> None:
    problems = []

    def need(cond, msg):
        if not cond:
            problems.append(msg)

    p, s, f, g = cfg["prior"], cfg["schedule"], cfg["features"], cfg["guidance"]
    labels = list(VIEWS)
    if p["modes"] is None:
        need(len(p["weights"]) == 3, "prior.weights: need three weights (front, side, back)")
        need(all(0 < w < 1 for w in p["weights"]), "prior.weights: each must lie in (0, 1)")
        need(abs(sum(p["weights"]) - 1) < 1e-12, "prior.weights: must sum to 1")
    else:
        labels = [m.get("label") for m in p["modes"]]
        need(abs(sum(m.get("weight", 0) for m in p["modes"]) - 1) < 1e-12,
             "prior.modes: weights must sum to 1")
    need(isinstance(s["T"], int) and s["T"] >= 1, "schedule.T: must be an integer >= 1")
    need(0 < s["beta_start"] <= s["beta_end"] < 1, "schedule: need 0 < beta_start <= beta_end < 1")
    need(f["channels"] >= 1, "features.channels: must be >= 1")
    need(g["view"] in labels, f"guidance.view: {g['view']!r} not a prior label")
    need(1 <= g["k"] <= g["N"], "guidance.k: must lie in [1, guidance.N]")
    need(g["N"] >= 2, "guidance.N: must be >= 2")
    need(1 <= g["n_components"] <= f["channels"],
         "guidance.n_components: must lie in [1, features.channels]")
    need(g["lambda_v"] >= 0, "guidance.lambda_v: must be >= 0")
    need(g["lambda_source"] in ("fixed", "scheduled"),
         "guidance.lambda_source: must be fixed or scheduled")
    need(g["stride"] is None or g["stride"] >= 1, "guidance.stride: must be >= 1")
    need(0 <= cfg["guard"]["alpha"] <= 1, "guard.alpha: must lie in [0, 1]")
    need(cfg["guard"]["warmup"] >= 1, "guard.warmup: must be >= 1")
    sc = cfg["scheduler"]
    need(0 <= sc["beta"] <= 1, "scheduler.beta: must lie in [0, 1]")
    need(0 <= sc["lambda_min"] <= sc["lambda_max"], "scheduler: need 0 <= lambda_min <= lambda_max")
    need(cfg["sample"]["n"] >= 1, "sample.n: must be >= 1")
    need(cfg["sample"]["sampler"] in ("ddim", "ddpm"), "sample.sampler: must be ddim or ddpm")
    need(cfg["sample"]["cond"] in [None, *labels], "sample.cond: not a prior label")
    d = cfg["distill"]
    need(d["iterations"] >= 0, "distill.iterations: must be >= 0")
    need(d["lr"] > 0, "distill.lr: must be > 0")
    need(0 < d["t_min_frac"] <= d["t_max_frac"] <= 1,
         "distill: need 0 < t_min_frac <= t_max_frac <= 1")
    need(d["seeds"] >= 1, "distill.seeds: must be >= 1")
    need(cfg["fpe"]["particles"] >= 1000, "fpe.particles: must be >= 1000")
    need(cfg["fpe"]["steps"] >= 1, "fpe.steps: must be >= 1")
    sw = cfg["sweep"]
    need(all(1 <= k for k in sw["k_values"]), "sweep.k_values: must be >= 1")
    need(all(v >= 0 for v in sw["lambdas"]), "sweep.lambdas: must be >= 0")
    need(sw["workers"] >= 1, "sweep.workers: must be >= 1")
    if problems:
        raise ConfigError(problems)


def config_hash(cfg: dict) -> str:
    blob = json.dumps({k: v for k, v in cfg.items() if k != "output_dir"}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:10]


# -- builders ----------------------------------------------------------------

def build_prior(cfg: dict) -> MixturePrior:
    p = cfg["prior"]
    spec = p["modes"] or default_prior_spec(p["weights"], p["separation"], p["std"])
    return make_prior(spec)


def build_schedule(cfg: dict) -> NoiseSchedule:
    s = cfg["schedule"]
    return linear_schedule(s["T"], s["beta_start"], s["beta_end"])


def build_features(cfg: dict, dim: int) -> FeatureExtractor:
    f = cfg["features"]
    return make_feature_extractor(dim, f["height"], f["width"], f["channels"], f["seed"],
                                  f["weight_scale"], f["bias_scale"], f["embed_scale"],
                                  f["t_scale"])


def build_distill_config(cfg: dict, seed: int | None = None) -> DistillConfig:
    d, g, gd, sc = cfg["distill"], cfg["guidance"], cfg["guard"], cfg["scheduler"]
    return DistillConfig(
        iterations=d["iterations"], lr=d["lr"], t_min_frac=d["t_min_frac"],
        t_max_frac=d["t_max_frac"], guidance=g["enabled"], guided_view=g["view"],
        lambda_source=g["lambda_source"], lambda_v=g["lambda_v"],
        lambda_min=sc["lambda_min"], lambda_max=sc["lambda_max"], ema_beta=sc["beta"],
        guard=gd["enabled"], guard_alpha=gd["alpha"], guard_warmup=gd["warmup"],
        cond=d["cond"], init_std=d["init_std"], seed=cfg["seed"] if seed is None else seed)
