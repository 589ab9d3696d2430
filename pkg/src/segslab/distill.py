"""Toy score-distillation loop with optional structural guidance and guard.

An asset is a shared latent ``theta``; each view bin renders it through an
orthogonal map plus offset. With the default rig the front render shows the
first coordinate, the back render swaps the coordinates, and the side render
mixes them, so an asset carrying front content on both faces renders as
front from behind.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .control import (DISCARD, KEEP, GuardState, SchedulerState, guard_observe,
                      quality_proxy, schedule_lambda, view_similarity)
from .diffusion import VIEWS, MixturePrior, NoiseSchedule, epsilon_pred, forward_noise, x0hat
from .errors import InvalidInputError
from .guidance import BasisBank, FeatureExtractor, guided_epsilon, structural_energy


@dataclass(frozen=True)
class ViewRig:
    rotations: dict[str, np.ndarray]
    offsets: dict[str, np.ndarray]

    def __post_init__(self):
        if set(self.rotations) != set(self.offsets):
            raise InvalidInputError("rig rotations and offsets name different views")
        for v, R in self.rotations.items():
            R = np.asarray(R, dtype=float)
            if R.shape[0] != R.shape[1] or not np.allclose(R.T @ R, np.eye(len(R)), atol=1e-10):
                raise InvalidInputError(f"rig transform for {v!r} is not orthogonal")

    @property
    def views(self) -> tuple[str, ...]:
        return tuple(v for v in VIEWS if v in self.rotations) + tuple(
            sorted(v for v in self.rotations if v not in VIEWS))

    def render(self, theta, view: str) -> np.ndarray:
        if view not in self.rotations:
            raise InvalidInputError(f"rig has no view {view!r}")
        return np.asarray(self.rotations[view]) @ np.asarray(theta, float) + self.offsets[view]

    def jacobian(self, view: str) -> np.ndarray:
        if view not in self.rotations:
            raise InvalidInputError(f"rig has no view {view!r}")
        return np.asarray(self.rotations[view])


def render(theta, rig: ViewRig, view: str) -> np.ndarray:
    return rig.render(theta, view)


def default_rig() -> ViewRig:
    c = 1.0 / np.sqrt(2.0)
    rotations = {
        "front": np.eye(2),
        "side": np.array([[c, c], [-c, c]]),
        "back": np.array([[0.0, 1.0], [1.0, 0.0]]),
    }
    return ViewRig(rotations, {v: np.zeros(2) for v in rotations})


@dataclass
class DistillConfig:
    iterations: int = 2000
    lr: float = 0.03
    t_min_frac: float = 0.02
    t_max_frac: float = 0.98
    guidance: bool = False
    guided_view: str = "back"
    lambda_source: str = "fixed"
    lambda_v: float = 10.0
    lambda_min: float = 0.0
    lambda_max: float = 15.0
    ema_beta: float = 0.9
    guard: bool = False
    guard_alpha: float = 0.5
    guard_warmup: int = 50
    cond: str | None = None
    init_std: float = 0.5
    seed: int = 0

    def validate(self, schedule: NoiseSchedule | None = None) -> None:
        problems = []
        if self.iterations < 0:
            problems.append("iterations must be >= 0")
        if not 0 < self.t_min_frac <= self.t_max_frac <= 1:
            problems.append("need 0 < t_min_frac <= t_max_frac <= 1")
        if self.lambda_source not in ("fixed", "scheduled"):
            problems.append("lambda_source must be 'fixed' or 'scheduled'")
        if self.lambda_v < 0 or self.lambda_min < 0 or self.lambda_max < self.lambda_min:
            problems.append("guidance weights must satisfy 0 <= lambda_min <= lambda_max, lambda_v >= 0")
        if self.lr <= 0:
            problems.append("lr must be positive")
        if problems:
            raise InvalidInputError("; ".join(problems))

    def t_range(self, T: int) -> tuple[int, int]:
        lo = max(1, int(round(self.t_min_frac * T)))
        hi = min(T, max(lo, int(round(self.t_max_frac * T))))
        return lo, hi


@dataclass
class LogRecord:
    iteration: int
    view: str
    t: int
    x0hat: np.ndarray
    classified: str
    sigma: float
    decision: str
    energy: float = float("nan")
    lambda_v: float = 0.0
    b: float = float("nan")
    b_ema: float = float("nan")
    q: float = float("nan")


@dataclass
class DistillResult:
    theta: np.ndarray
    initial_theta: np.ndarray
    log: list[LogRecord]
    metrics: dict


@dataclass
class RunState:
    """Mutable per-run controls: RNG, guard, scheduler."""

    rng: np.random.Generator
    guard: GuardState | None = None
    scheduler: SchedulerState | None = None
    energy_trace: list[float] = field(default_factory=list)


def sds_gradient(eps_hat, eps, jac, weight: float = 1.0) -> np.ndarray:
    """omega(t) * J^T (eps_hat - eps)."""
    return weight * np.asarray(jac).T @ (np.asarray(eps_hat) - np.asarray(eps))


def sds_gradient_x0_form(schedule: NoiseSchedule, x0, x_t, t: int, eps_hat, jac,
                         weight: float = 1.0) -> np.ndarray:
    """Equivalent clean-estimate form: omega(t) / gamma(t) * J^T (x0 - x0hat)."""
    x0_est = x0hat(schedule, x_t, t, eps_hat)
    return weight / schedule.gamma(t) * np.asarray(jac).T @ (np.asarray(x0) - x0_est)


def make_run_state(config: DistillConfig) -> RunState:
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0xD157,)))
    guard = GuardState(config.guard_alpha, config.guard_warmup) if config.guard else None
    scheduler = None
    if config.guidance and config.lambda_source == "scheduled":
        scheduler = SchedulerState(config.ema_beta, config.lambda_min, config.lambda_max)
    return RunState(rng, guard, scheduler)


def sds_step(theta, rig: ViewRig, prior: MixturePrior, schedule: NoiseSchedule,
             fx: FeatureExtractor | None, bank: BasisBank | None, config: DistillConfig,
             state: RunState, iteration: int = 0) -> tuple[np.ndarray, LogRecord]:
    """One SDS draw (view, t, noise); returns the theta-gradient and its log record."""
    views = rig.views
    view = views[state.rng.integers(len(views))]
    lo, hi = config.t_range(schedule.T)
    t = int(state.rng.integers(lo, hi + 1))
    eps = state.rng.standard_normal(prior.dim)
    x0 = rig.render(theta, view)
    x_t = forward_noise(schedule, x0, t, eps)

    lam, b, b_ema, q = 0.0, float("nan"), float("nan"), float("nan")
    if state.scheduler is not None:
        b = float(np.mean([quality_proxy(prior, rig.render(theta, v)) for v in views]))
        lam = schedule_lambda(state.scheduler, b)
        b_ema, q = state.scheduler.ema, state.scheduler.q
    elif config.guidance:
        lam = config.lambda_v

    energy = float("nan")
    if config.guidance and view == config.guided_view:
        if bank is None or fx is None:
            raise InvalidInputError("guidance requires a basis bank and feature extractor")
        basis = bank.get(t)
        energy = float(structural_energy(basis, fx, x_t, t).value)
        state.energy_trace.append(energy)
        eps_hat = guided_epsilon(prior, schedule, basis, fx, x_t, t, config.cond, lam)
    else:
        eps_hat = epsilon_pred(prior, schedule, x_t, t, config.cond)

    x0_est = x0hat(schedule, x_t, t, eps_hat)
    classified = prior.labels[int(prior.classify(x0_est))]
    sigma = float(view_similarity(prior, x0_est, view)) if view in prior.labels else 0.0
    decision = guard_observe(state.guard, sigma) if state.guard is not None else KEEP
    if decision == DISCARD:
        grad = np.zeros_like(theta)
    else:
        grad = sds_gradient(eps_hat, eps, rig.jacobian(view))
    record = LogRecord(iteration, view, t, x0_est, classified, sigma, decision, energy,
                       lam, b, b_ema, q)
    return grad, record


def init_theta(config: DistillConfig, dim: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0x1417,)))
    return config.init_std * rng.standard_normal(dim)


def distill(config: DistillConfig, prior: MixturePrior, schedule: NoiseSchedule,
            rig: ViewRig | None = None, fx: FeatureExtractor | None = None,
            bank: BasisBank | None = None, theta0=None) -> DistillResult:
    """Plain gradient descent on theta with one SDS draw per iteration."""
    from .metrics import run_metrics

    config.validate(schedule)
    rig = rig or default_rig()
    theta = init_theta(config, prior.dim) if theta0 is None else np.array(theta0, float)
    initial = theta.copy()
    state = make_run_state(config)
    log = []
    for it in range(config.iterations):
        grad, rec = sds_step(theta, rig, prior, schedule, fx, bank, config, state, it)
        theta = theta - config.lr * grad
        log.append(rec)
    metrics = run_metrics(theta, rig, prior, log, state.energy_trace)
    return DistillResult(theta, initial, log, metrics)


LOG_FIELDS = ("iteration", "view", "t", "classified", "sigma", "decision", "energy",
              "lambda_v", "b", "b_ema", "q")


def write_log_csv(path, log: list[LogRecord]) -> None:
    dim = len(log[0].x0hat) if log else 0
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(LOG_FIELDS[:3]) + [f"x0hat_{j}" for j in range(dim)]
                        + list(LOG_FIELDS[3:]))
        for r in log:
            writer.writerow([r.iteration, r.view, r.t] + [repr(float(v)) for v in r.x0hat]
                            + [r.classified, repr(r.sigma), r.decision, repr(r.energy),
                               repr(float(r.lambda_v)), repr(r.b), repr(r.b_ema), repr(r.q)])


def config_to_dict(config: DistillConfig) -> dict:
    return asdict(config)


def write_asset_json(path, theta, schema_version: int = 1) -> None:
    Path(path).write_text(json.dumps(
        {"schema_version": schema_version, "theta": [float(v) for v in theta]}, indent=2))
