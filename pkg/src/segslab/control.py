"""Supervision controls: view similarity, the consistency guard, and the
quality-driven guidance-weight scheduler."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import MixturePrior
from .errors import InvalidInputError


def view_similarity(prior: MixturePrior, x, view: str) -> np.ndarray:
    """Posterior probability of ``view`` given a clean state, in [0, 1]."""
    idx = prior.check_label(view)
    return prior.view_posterior(x)[..., idx]


def quality_proxy(prior: MixturePrior, render) -> np.ndarray:
    """Negative log-density of a render, offset so the best mode mean scores ~0.

    Higher is worse. Stands in for a no-reference image-quality score.
    """
    peak = np.max(prior.log_density(prior.means))
    return peak - prior.log_density(render)


KEEP, DISCARD, WARMUP = "keep", "discard", "warmup"


@dataclass
class GuardState:
    """Adaptive-threshold gate over similarity scores.

    The first ``warmup_len`` observations are only logged; the threshold
    ``alpha * min + (1 - alpha) * mean`` is then fixed for the rest of the run.
    """

    alpha: float = 0.5
    warmup_len: int = 50
    log: list[float] = field(default_factory=list)
    threshold: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInputError("guard alpha must lie in [0, 1]")
        if self.warmup_len < 1:
            raise InvalidInputError("guard warmup_len must be >= 1")


def guard_observe(state: GuardState, sigma: float) -> str:
    sigma = float(sigma)
    if not np.isfinite(sigma):
        raise InvalidInputError("similarity must be finite")
    state.log.append(sigma)
    if state.threshold is None:
        if len(state.log) == state.warmup_len:
            window = state.log[:state.warmup_len]
            state.threshold = (state.alpha * min(window)
                               + (1.0 - state.alpha) * float(np.mean(window)))
        return WARMUP
    return KEEP if sigma >= state.threshold else DISCARD


@dataclass
class SchedulerState:
    beta: float = 0.9
    lambda_min: float = 0.0
    lambda_max: float = 10.0
    lo_pct: float = 5.0
    hi_pct: float = 95.0
    ema: float | None = None
    history: list[float] = field(default_factory=list)
    running_lo: float | None = None
    running_hi: float | None = None
    q: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidInputError("EMA beta must lie in [0, 1]")
        if not 0.0 <= self.lambda_min <= self.lambda_max:
            raise InvalidInputError("need 0 <= lambda_min <= lambda_max")


def schedule_lambda(state: SchedulerState, b_t: float) -> float:
    """Fold one quality observation (higher = worse) in and emit the weight."""
    b_t = float(b_t)
    if not np.isfinite(b_t):
        raise InvalidInputError("quality score must be finite")
    if state.ema is None:
        state.ema = b_t
    else:
        state.ema = state.beta * state.ema + (1.0 - state.beta) * b_t
    state.history.append(b_t)
    lo, hi = np.percentile(state.history, [state.lo_pct, state.hi_pct])
    state.running_lo, state.running_hi = float(lo), float(hi)
    if hi == lo:
        q = 1.0
    else:
        q = float(np.clip((state.ema - lo) / (hi - lo), 0.0, 1.0))
    state.q = q
    return state.lambda_min + (state.lambda_max - state.lambda_min) * q


TRACE_FIELDS = ("iteration", "sigma", "decision", "b", "b_ema", "q", "lambda")


def write_control_trace(path, rows: list[dict]) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in TRACE_FIELDS})
