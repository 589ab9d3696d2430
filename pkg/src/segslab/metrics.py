"""Evaluation: Janus-rate and view-score analogs, histograms, and a particle
check that the forward and reverse VP SDEs transport the data mixture and the
standard normal into each other."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import kstest, norm

from .control import view_similarity
from .diffusion import MixturePrior
from .errors import InvalidInputError

SCHEMA_VERSION = 1


def _views(rig, prior):
    return [v for v in rig.views if v in prior.labels]


def back_failures(assets, rig, prior: MixturePrior, target: str = "back") -> np.ndarray:
    """True where the target-view render classifies as some other view."""
    assets = np.atleast_2d(np.asarray(assets, float))
    renders = np.stack([rig.render(a, target) for a in assets])
    return prior.classify(renders) != prior.check_label(target)


def jr_analog(assets, rig, prior: MixturePrior, target: str = "back") -> float:
    """Fraction of assets whose back render is classified as another view."""
    if len(assets) == 0:
        raise InvalidInputError("jr_analog needs at least one asset")
    return float(np.mean(back_failures(assets, rig, prior, target)))


def view_cs_analog(assets, rig, prior: MixturePrior) -> dict[str, float]:
    """Per view bin, the mean posterior of that bin for the matching render."""
    if len(assets) == 0:
        raise InvalidInputError("view_cs_analog needs at least one asset")
    assets = np.atleast_2d(np.asarray(assets, float))
    out = {}
    for v in _views(rig, prior):
        renders = np.stack([rig.render(a, v) for a in assets])
        out[v] = float(np.mean(view_similarity(prior, renders, v)))
    return out


def view_histogram(states, prior: MixturePrior) -> dict[str, int]:
    states = np.atleast_2d(np.asarray(states, float))
    counts = np.bincount(prior.classify(states), minlength=len(prior.labels))
    return {lab: int(c) for lab, c in zip(prior.labels, counts)}


def label_histogram(labels, prior: MixturePrior) -> dict[str, int]:
    out = {lab: 0 for lab in prior.labels}
    for lab in labels:
        out[lab] += 1
    return out


def run_metrics(theta, rig, prior: MixturePrior, log, energy_trace) -> dict:
    """Metric bundle of one distillation run."""
    hist = label_histogram([r.classified for r in log], prior)
    renders = {v: rig.render(theta, v) for v in _views(rig, prior)}
    return {
        "schema_version": SCHEMA_VERSION,
        "jr_analog": jr_analog([theta], rig, prior),
        "view_cs_analog": view_cs_analog([theta], rig, prior),
        "render_views": {v: prior.labels[int(prior.classify(r))] for v, r in renders.items()},
        "histogram": hist,
        "n_logged": len(log),
        "n_discarded": int(sum(r.decision == "discard" for r in log)),
        "energy_trace": [float(e) for e in energy_trace],
        "theta": [float(v) for v in theta],
    }


# -- Fokker-Planck / time-reversal check -------------------------------------

@dataclass(frozen=True)
class VPSDE:
    """dx = -1/2 beta(s) x ds + sqrt(beta(s)) dW on s in [0, 1], linear beta."""

    beta_min: float = 0.1
    beta_max: float = 20.0

    @classmethod
    def from_schedule(cls, schedule) -> "VPSDE":
        T = schedule.T
        return cls(float(schedule.betas[0]) * T, float(schedule.betas[-1]) * T)

    def beta(self, s):
        return self.beta_min + s * (self.beta_max - self.beta_min)

    def alpha_bar(self, s):
        return np.exp(-(self.beta_min * s + 0.5 * (self.beta_max - self.beta_min) * s ** 2))


@dataclass
class FpeCheckReport:
    forward_terminal_ks: float
    reverse_data_ks: float
    forward_ks_per_coord: list[float]
    reverse_ks_per_coord: list[float]
    occupancy: dict[str, float]
    occupancy_deltas: dict[str, float]
    occupancy_stderr: dict[str, float]
    particles: int
    steps: int
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def mixture_marginal_cdf(prior: MixturePrior, coord: int):
    mu = prior.means[:, coord]
    sd = np.sqrt(prior.covs[:, coord, coord])
    w = prior.weights

    def cdf(x):
        x = np.asarray(x, float)
        return np.sum(w * norm.cdf((x[..., None] - mu) / sd), axis=-1)
    return cdf


def fpe_check(prior: MixturePrior, sde: VPSDE | None = None, particles: int = 10_000,
              steps: int = 1000, seed: int = 0, s_end: float = 1.0) -> FpeCheckReport:
    """Euler-Maruyama forward from data to s=1, then reverse from N(0, I) to s=0
    with the exact mixture score; KS distances per coordinate against the
    analytic targets and per-label occupancy of the reverse endpoints."""
    if particles < 1000:
        raise InvalidInputError("fpe_check needs at least 1000 particles")
    if steps < 1:
        raise InvalidInputError("steps must be >= 1")
    sde = sde or VPSDE()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xF9E,)))
    ds = s_end / steps
    D = prior.dim

    x, _ = prior.sample_clean(particles, rng)
    for i in range(steps):
        s = i * ds
        b = sde.beta(s)
        x = x - 0.5 * b * x * ds + np.sqrt(b * ds) * rng.standard_normal(x.shape)
    fwd = [float(kstest(x[:, j], "norm").statistic) for j in range(D)]

    y = rng.standard_normal((particles, D))
    for i in range(steps, 0, -1):
        s = i * ds
        b = sde.beta(s)
        drift = -0.5 * b * y - b * prior.score(y, sde.alpha_bar(s))
        y = y - drift * ds
        if i > 1:
            y = y + np.sqrt(b * ds) * rng.standard_normal(y.shape)
    rev = [float(kstest(y[:, j], mixture_marginal_cdf(prior, j)).statistic) for j in range(D)]

    # expected occupancy under the same argmax classifier, by the same count on data
    ref, _ = prior.sample_clean(particles, rng)
    occ = view_histogram(y, prior)
    ref_occ = view_histogram(ref, prior)
    w = prior.label_weights()
    occupancy = {k: v / particles for k, v in occ.items()}
    deltas = {k: occupancy[k] - ref_occ[k] / particles for k in occ}
    stderr = {k: float(np.sqrt(2 * w[k] * (1 - w[k]) / particles)) for k in occ}
    return FpeCheckReport(max(fwd), max(rev), fwd, rev, occupancy, deltas, stderr,
                          particles, steps)


def write_json(path, payload: dict) -> None:
    payload = dict(payload)
    payload.setdefault("schema_version", SCHEMA_VERSION)
    Path(path).write_text(json.dumps(payload, indent=2, default=float))
