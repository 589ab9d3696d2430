"""Discrete VP diffusion over a labelled Gaussian mixture with an exact score.

Timesteps are 1-based: ``t = 1..T``. ``alpha_bar(0) == 1`` by convention.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError

VIEWS = ("front", "side", "back")

EpsModel = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=float)
        if betas.ndim != 1 or betas.size == 0:
            raise InvalidInputError("betas must be a non-empty vector")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise InvalidInputError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @property
    def T(self) -> int:
        return self.betas.size

    def check_t(self, t: int, allow_zero: bool = False) -> int:
        lo = 0 if allow_zero else 1
        if not lo <= int(t) <= self.T:
            raise InvalidInputError(f"timestep {t} outside [{lo}, {self.T}]")
        return int(t)

    def beta(self, t: int) -> float:
        return float(self.betas[self.check_t(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self.check_t(t) - 1])

    def alpha_bar(self, t: int) -> float:
        t = self.check_t(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def gamma(self, t: int) -> float:
        """Noise-to-signal ratio sqrt((1 - abar) / abar); needs t >= 1."""
        ab = self.alpha_bar(self.check_t(t))
        return float(np.sqrt((1.0 - ab) / ab))


def linear_schedule(T: int = 1000, beta_start: float = 1e-4,
                    beta_end: float = 2e-2) -> NoiseSchedule:
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    if T == 1:
        return NoiseSchedule(np.array([beta_start]))
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


@dataclass(frozen=True)
class Mode:
    label: str
    weight: float
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class MixturePrior:
    """Gaussian mixture whose components carry a view label."""

    modes: tuple[Mode, ...]
    labels: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        modes = []
        for m in self.modes:
            mean = np.asarray(m.mean, dtype=float).reshape(-1)
            cov = np.asarray(m.cov, dtype=float)
            if cov.shape != (mean.size, mean.size):
                raise InvalidInputError(f"mode {m.label!r}: covariance shape {cov.shape}")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise InvalidInputError(f"mode {m.label!r}: covariance not symmetric")
            if np.linalg.eigvalsh(cov).min() <= 0:
                raise InvalidInputError(f"mode {m.label!r}: covariance not positive-definite")
            if not 0 < m.weight < 1 and len(self.modes) > 1:
                raise InvalidInputError(f"mode {m.label!r}: weight must lie in (0, 1)")
            modes.append(Mode(str(m.label), float(m.weight), mean, cov))
        if not modes:
            raise InvalidInputError("prior needs at least one mode")
        dims = {m.mean.size for m in modes}
        if len(dims) != 1:
            raise InvalidInputError("modes disagree on dimension")
        if abs(sum(m.weight for m in modes) - 1.0) > 1e-12:
            raise InvalidInputError("mode weights must sum to 1")
        labels = []
        for m in modes:
            if m.label not in labels:
                labels.append(m.label)
        object.__setattr__(self, "modes", tuple(modes))
        object.__setattr__(self, "labels", tuple(labels))
        object.__setattr__(self, "_means", np.stack([m.mean for m in modes]))
        object.__setattr__(self, "_covs", np.stack([m.cov for m in modes]))
        object.__setattr__(self, "_logw", np.log([m.weight for m in modes]))
        object.__setattr__(self, "_mode_label",
                           np.array([labels.index(m.label) for m in modes]))

    @property
    def dim(self) -> int:
        return self._means.shape[1]

    @property
    def means(self) -> np.ndarray:
        return self._means

    @property
    def covs(self) -> np.ndarray:
        return self._covs

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self._logw)

    def label_weights(self) -> dict[str, float]:
        w = self.weights
        return {lab: float(w[self._mode_label == i].sum())
                for i, lab in enumerate(self.labels)}

    def check_label(self, label: str) -> int:
        if label not in self.labels:
            raise InvalidInputError(f"unknown view {label!r}; prior has {self.labels}")
        return self.labels.index(label)

    def _mode_mask(self, cond: str | None) -> np.ndarray:
        if cond is None:
            return np.ones(len(self.modes), dtype=bool)
        return self._mode_label == self.check_label(cond)

    def _noised(self, alpha_bar: float):
        means = np.sqrt(alpha_bar) * self._means
        covs = alpha_bar * self._covs + (1.0 - alpha_bar) * np.eye(self.dim)
        prec = np.linalg.inv(covs)
        _, logdet = np.linalg.slogdet(covs)
        return means, prec, logdet

    def component_logpdf(self, x, alpha_bar: float = 1.0) -> np.ndarray:
        """log N(x; sqrt(abar) mu_i, abar Sigma_i + (1 - abar) I), shape (..., M)."""
        x = np.asarray(x, dtype=float)
        means, prec, logdet = self._noised(alpha_bar)
        diff = x[..., None, :] - means
        maha = np.einsum("...mi,mij,...mj->...m", diff, prec, diff)
        return -0.5 * (maha + logdet + self.dim * np.log(2 * np.pi))

    def log_density(self, x, alpha_bar: float = 1.0, cond: str | None = None) -> np.ndarray:
        mask = self._mode_mask(cond)
        logw = self._logw[mask] - logsumexp(self._logw[mask])
        return logsumexp(self.component_logpdf(x, alpha_bar)[..., mask] + logw, axis=-1)

    def responsibilities(self, x, alpha_bar: float = 1.0,
                         cond: str | None = None) -> np.ndarray:
        """Posterior over modes, shape (..., M); zero outside the condition."""
        mask = self._mode_mask(cond)
        logits = self.component_logpdf(x, alpha_bar) + self._logw
        logits = np.where(mask, logits, -np.inf)
        return np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))

    def view_posterior(self, x, alpha_bar: float = 1.0) -> np.ndarray:
        """Posterior over labels, shape (..., L), columns ordered as ``labels``."""
        r = self.responsibilities(x, alpha_bar)
        out = np.zeros(r.shape[:-1] + (len(self.labels),))
        for i in range(len(self.labels)):
            out[..., i] = r[..., self._mode_label == i].sum(axis=-1)
        return out

    def classify(self, x) -> np.ndarray:
        """Argmax view index; ties resolve to the earliest label."""
        return np.argmax(self.view_posterior(x), axis=-1)

    def score(self, x, alpha_bar: float = 1.0, cond: str | None = None) -> np.ndarray:
        """grad_x log p(x) of the noised mixture."""
        x = np.asarray(x, dtype=float)
        means, prec, _ = self._noised(alpha_bar)
        r = self.responsibilities(x, alpha_bar, cond)
        diff = x[..., None, :] - means
        comp = -np.einsum("mij,...mj->...mi", prec, diff)
        return np.einsum("...m,...mi->...i", r, comp)

    def sample_clean(self, n: int, rng: np.random.Generator,
                     cond: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Direct draws from the data mixture; returns (x, mode index)."""
        mask = self._mode_mask(cond)
        w = np.where(mask, self.weights, 0.0)
        idx = rng.choice(len(self.modes), size=n, p=w / w.sum())
        chol = np.linalg.cholesky(self._covs)
        z = rng.standard_normal((n, self.dim))
        x = self._means[idx] + np.einsum("nij,nj->ni", chol[idx], z)
        return x, idx


def make_prior(spec: Sequence[dict]) -> MixturePrior:
    """Build a prior from ``[{label, weight, mean, cov | std}]`` dicts."""
    modes = []
    for m in spec:
        mean = np.asarray(m["mean"], dtype=float)
        if "cov" in m:
            cov = np.asarray(m["cov"], dtype=float)
        else:
            std = np.broadcast_to(np.asarray(m.get("std", 1.0), dtype=float), mean.shape)
            cov = np.diag(std ** 2)
        modes.append(Mode(m["label"], float(m["weight"]), mean, cov))
    return MixturePrior(tuple(modes))


def default_prior_spec(weights=(0.8, 0.1, 0.1), separation: float = 3.0,
                       std=(0.5, 2.5)) -> list[dict]:
    """Front/side/back modes placed at the renders of one consistent object.

    The first coordinate is the visible content (face at ``+separation``,
    back of head at ``-separation``); the second is the hidden content and is
    only loosely constrained. Means are the default-rig renders of the object
    ``(separation, -separation)``.
    """
    a = separation
    locs = {"front": [a, -a], "side": [0.0, -np.sqrt(2.0) * a], "back": [-a, a]}
    return [{"label": lab, "weight": float(w), "mean": locs[lab], "std": list(std)}
            for lab, w in zip(VIEWS, weights)]


def default_prior(weights=(0.8, 0.1, 0.1)) -> MixturePrior:
    return make_prior(default_prior_spec(weights))


# -- diffusion operations ----------------------------------------------------

def forward_noise(schedule: NoiseSchedule, x0, t: int, noise) -> np.ndarray:
    ab = schedule.alpha_bar(schedule.check_t(t))
    return np.sqrt(ab) * np.asarray(x0, float) + np.sqrt(1.0 - ab) * np.asarray(noise, float)


def epsilon_pred(prior: MixturePrior, schedule: NoiseSchedule, x_t, t: int,
                 cond: str | None = None) -> np.ndarray:
    """Exact noise prediction -sqrt(1 - abar_t) * score_t(x_t | cond)."""
    ab = schedule.alpha_bar(schedule.check_t(t))
    return -np.sqrt(1.0 - ab) * prior.score(x_t, ab, cond)


def x0hat(schedule: NoiseSchedule, x_t, t: int, eps) -> np.ndarray:
    ab = schedule.alpha_bar(schedule.check_t(t))
    return (np.asarray(x_t, float) - np.sqrt(1.0 - ab) * np.asarray(eps, float)) / np.sqrt(ab)


def reverse_step(schedule: NoiseSchedule, x_t, t: int, eps_hat, mode: str = "ddim",
                 noise=None) -> np.ndarray:
    """One step t -> t-1. DDIM is the eta=0 update; DDPM adds posterior noise."""
    t = schedule.check_t(t)
    x_t = np.asarray(x_t, float)
    eps_hat = np.asarray(eps_hat, float)
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t - 1)
    if mode == "ddim":
        x0 = (x_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
        return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_hat
    if mode == "ddpm":
        beta, alpha = schedule.beta(t), schedule.alpha(t)
        mean = (x_t - beta / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(alpha)
        if t == 1 or noise is None:
            return mean
        var = beta * (1.0 - ab_prev) / (1.0 - ab_t)
        return mean + np.sqrt(var) * np.asarray(noise, float)
    raise InvalidInputError(f"unknown sampler mode {mode!r}")


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Independent stream for one reverse chain, keyed by (seed, chain)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(chain),)))


def sample(prior: MixturePrior, schedule: NoiseSchedule, cond: str | None, n: int,
           seed: int, mode: str = "ddim", eps_model: EpsModel | None = None,
           block: int = 2048, chain_offset: int = 0) -> np.ndarray:
    """Run ``n`` reverse chains from N(0, I) and return their endpoints, shape (n, D).

    Chain ``i`` draws all its noise from ``chain_rng(seed, chain_offset + i)``,
    so outputs do not depend on ``n`` or on the block size. ``eps_model``
    replaces the exact conditional noise prediction (used for guidance).
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if mode not in ("ddim", "ddpm"):
        raise InvalidInputError(f"unknown sampler mode {mode!r}")
    if cond is not None:
        prior.check_label(cond)
    if eps_model is None:
        def eps_model(x, t):
            return epsilon_pred(prior, schedule, x, t, cond)
    T, D = schedule.T, prior.dim
    draws = T + 1 if mode == "ddpm" else 1
    out = np.empty((n, D))
    for start in range(0, n, block):
        stop = min(n, start + block)
        noise = np.stack([chain_rng(seed, chain_offset + i).standard_normal((draws, D))
                          for i in range(start, stop)])
        x = noise[:, 0]
        for t in range(T, 0, -1):
            eps = eps_model(x, t)
            z = noise[:, T - t + 1] if mode == "ddpm" else None
            x = reverse_step(schedule, x, t, eps, mode, z)
        out[start:stop] = x
    return out


def write_samples_csv(path, samples: np.ndarray, prior: MixturePrior) -> None:
    samples = np.asarray(samples, float)
    views = prior.classify(samples)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain"] + [f"x{j}" for j in range(samples.shape[1])] + ["view_argmax"])
        for i, (row, v) in enumerate(zip(samples, views)):
            writer.writerow([i] + [repr(float(a)) for a in row] + [prior.labels[v]])
