"""Structural energy guidance in a PCA subspace of intermediate features.

A fixed random tanh layer plays the role of the denoiser's intermediate
activations. Auxiliary target-view samples define a per-timestep PCA basis and
a set of projected reference maps; the mean squared distance of the current
state's projected features to those references is the structural energy, and
its gradient is added to the noise prediction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .control import view_similarity
from .diffusion import MixturePrior, NoiseSchedule, epsilon_pred, forward_noise, sample
from .errors import InvalidInputError
from .linalg import PcaModel, pca_fit, project

BANK_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FeatureExtractor:
    """F[i, j] = tanh(W[i, j] @ x + b[i, j] + embed(t)) on an H x W grid."""

    weights: np.ndarray          # (H, W, C, D)
    biases: np.ndarray           # (H, W, C)
    embed_scale: float = 0.5
    t_scale: float = 0.01
    seed: int | None = None

    @property
    def grid(self) -> tuple[int, int]:
        return self.weights.shape[0], self.weights.shape[1]

    @property
    def channels(self) -> int:
        return self.weights.shape[2]

    @property
    def dim(self) -> int:
        return self.weights.shape[3]

    def t_embed(self, t: int) -> np.ndarray:
        C = self.channels
        half = (C + 1) // 2
        freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
        args = self.t_scale * float(t) * freqs
        emb = np.concatenate([np.sin(args), np.cos(args)])[:C]
        return self.embed_scale * emb


def make_feature_extractor(dim: int = 2, height: int = 4, width: int = 4,
                           channels: int = 32, seed: int = 0,
                           weight_scale: float = 0.35, bias_scale: float = 0.5,
                           embed_scale: float = 0.5, t_scale: float = 0.01
                           ) -> FeatureExtractor:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xFEA7,)))
    weights = weight_scale * rng.standard_normal((height, width, channels, dim))
    biases = bias_scale * rng.standard_normal((height, width, channels))
    return FeatureExtractor(weights, biases, embed_scale, t_scale, seed)


def _preact(fx: FeatureExtractor, x: np.ndarray, t: int) -> np.ndarray:
    if x.shape[-1] != fx.dim:
        raise InvalidInputError(f"state dim {x.shape[-1]} != extractor dim {fx.dim}")
    H, W, C, D = fx.weights.shape
    flat = x.reshape(-1, D) @ fx.weights.reshape(-1, D).T
    pre = flat.reshape(x.shape[:-1] + (H, W, C))
    return pre + (fx.biases + fx.t_embed(t))


def extract_features(fx: FeatureExtractor, x, t: int) -> np.ndarray:
    """Feature maps of shape (..., H, W, C)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("state must be finite")
    return np.tanh(_preact(fx, x, t))


def feature_jacobian(fx: FeatureExtractor, x, t: int) -> np.ndarray:
    """dF/dx for a single state, shape (H, W, C, D)."""
    f = extract_features(fx, x, t)
    return (1.0 - f ** 2)[..., None] * fx.weights


@dataclass(frozen=True)
class StructuralBasis:
    timestep: int
    pca: PcaModel
    references: np.ndarray       # (k, H, W, N_b)
    similarities: np.ndarray     # (k,) scores of the kept samples
    indices: np.ndarray          # (k,) positions of the kept samples in the auxiliary set

    @property
    def k(self) -> int:
        return self.references.shape[0]


@dataclass
class EnergyReport:
    value: np.ndarray | float
    gradient: np.ndarray


def top_k(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, ties broken by position."""
    scores = np.asarray(scores, dtype=float)
    if not 1 <= k <= scores.size:
        raise InvalidInputError(f"k={k} must lie in [1, {scores.size}]")
    return np.argsort(-scores, kind="stable")[:k]


def basis_from_aux(fx: FeatureExtractor, schedule: NoiseSchedule, aux, renoise, t: int,
                   n_components: int, k: int, similarities) -> StructuralBasis:
    """Basis and references at timestep ``t`` from clean auxiliary samples.

    ``renoise`` holds one noise vector per auxiliary sample.
    """
    aux = np.asarray(aux, dtype=float)
    N = aux.shape[0]
    if N < 2:
        raise InvalidInputError("need at least two auxiliary samples")
    if not 1 <= k <= N:
        raise InvalidInputError(f"k={k} must lie in [1, N={N}]")
    if not 1 <= n_components <= fx.channels:
        raise InvalidInputError(f"N_b={n_components} must lie in [1, C={fx.channels}]")
    x_t = forward_noise(schedule, aux, t, renoise)
    feats = extract_features(fx, x_t, t)
    # rows: sample-major, then row-major over the spatial grid
    pca = pca_fit(feats.reshape(-1, fx.channels), n_components)
    keep = top_k(similarities, k)
    refs = project(pca, feats[keep])
    return StructuralBasis(int(t), pca, refs,
                           np.asarray(similarities, float)[keep], keep)


def _aux_set(prior, schedule, view, N, seed):
    aux = sample(prior, schedule, view, N, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xA0C5,)))
    renoise = rng.standard_normal(aux.shape)
    return aux, renoise


def build_basis(prior: MixturePrior, schedule: NoiseSchedule, fx: FeatureExtractor,
                view: str, t: int, N: int = 20, n_components: int = 8, k: int = 3,
                seed: int = 0) -> StructuralBasis:
    """Draw ``N`` view-conditioned samples, renoise to ``t``, fit the basis,
    keep the ``k`` most view-similar samples as references."""
    if not 1 <= k <= N:
        raise InvalidInputError(f"k={k} must lie in [1, N={N}]")
    if not 1 <= n_components <= fx.channels:
        raise InvalidInputError(f"N_b={n_components} exceeds C={fx.channels}")
    schedule.check_t(t)
    aux, renoise = _aux_set(prior, schedule, view, N, seed)
    sims = view_similarity(prior, aux, view)
    return basis_from_aux(fx, schedule, aux, renoise, t, n_components, k, sims)


@dataclass
class BasisBank:
    """Bases keyed by timestep; lookups fall back to the nearest stored step."""

    view: str
    bases: dict[int, StructuralBasis] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._keys = np.array(sorted(self.bases), dtype=int)

    def get(self, t: int) -> StructuralBasis:
        if not self.bases:
            raise InvalidInputError("empty basis bank")
        if t in self.bases:
            return self.bases[t]
        j = int(np.argmin(np.abs(self._keys - t)))
        return self.bases[int(self._keys[j])]

    @property
    def timesteps(self) -> list[int]:
        return [int(t) for t in self._keys]


def default_stride(T: int) -> int:
    return 1 if T <= 100 else 10


def build_basis_bank(prior: MixturePrior, schedule: NoiseSchedule, fx: FeatureExtractor,
                     view: str = "back", N: int = 20, n_components: int = 8, k: int = 3,
                     seed: int = 0, stride: int | None = None,
                     timesteps: Iterable[int] | None = None, aux=None, renoise=None,
                     similarities=None) -> BasisBank:
    """Bases over a grid of timesteps from one shared auxiliary set.

    Each auxiliary sample keeps a single renoising vector across timesteps, so
    references at neighbouring steps lie on one forward trajectory. Passing
    ``aux`` (and optionally ``renoise`` / ``similarities``) replaces the
    sampled auxiliary set, e.g. for constructed reference scenarios.
    """
    prior.check_label(view)
    if aux is None:
        aux, default_noise = _aux_set(prior, schedule, view, N, seed)
    else:
        aux = np.asarray(aux, dtype=float)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xA0C5,)))
        default_noise = rng.standard_normal(aux.shape)
    renoise = default_noise if renoise is None else np.asarray(renoise, float)
    if similarities is None:
        similarities = view_similarity(prior, aux, view)
    if timesteps is None:
        stride = stride or default_stride(schedule.T)
        timesteps = range(1, schedule.T + 1, stride)
    bases = {int(t): basis_from_aux(fx, schedule, aux, renoise, int(t), n_components, k,
                                    similarities)
             for t in timesteps}
    meta = {"N": int(aux.shape[0]), "n_components": n_components, "k": k,
            "seed": seed, "stride": stride}
    return BasisBank(view, bases, meta)


def structural_energy(basis: StructuralBasis, fx: FeatureExtractor, x_t, t: int
                      ) -> EnergyReport:
    """Average over references of the mean squared projected-feature error,
    with its exact gradient in ``x_t``. Accepts a single state or a batch."""
    x_t = np.asarray(x_t, dtype=float)
    f = extract_features(fx, x_t, t)
    G = project(basis.pca, f)
    refs = basis.references
    n_entries = G.shape[-3] * G.shape[-2] * G.shape[-1]
    axes = (-3, -2, -1)
    value = sum(np.mean((G - S) ** 2, axis=axes) for S in refs) / basis.k
    dG = 2.0 * (G - refs.mean(axis=0)) / n_entries
    dF = dG @ basis.pca.basis.T
    dpre = dF * (1.0 - f ** 2)
    W = fx.weights.reshape(-1, fx.dim)
    grad = (dpre.reshape(-1, W.shape[0]) @ W).reshape(x_t.shape)
    return EnergyReport(value, grad)


def guided_epsilon(prior: MixturePrior, schedule: NoiseSchedule, basis: StructuralBasis,
                   fx: FeatureExtractor, x_t, t: int, cond: str | None,
                   lambda_v: float) -> np.ndarray:
    """Noise prediction plus ``lambda_v`` times the structural-energy gradient."""
    if lambda_v < 0:
        raise InvalidInputError("lambda_v must be non-negative")
    eps = epsilon_pred(prior, schedule, x_t, t, cond)
    if lambda_v == 0:
        return eps
    return eps + lambda_v * structural_energy(basis, fx, x_t, t).gradient


@dataclass
class Guide:
    """Callable noise model for :func:`segslab.diffusion.sample`.

    ``lambda_v`` may be a constant or a function of the timestep. When
    ``trace`` is a list, the mean energy at every step is appended to it.
    """

    prior: MixturePrior
    schedule: NoiseSchedule
    bank: BasisBank
    fx: FeatureExtractor
    lambda_v: float | Callable[[int], float]
    cond: str | None = None
    trace: list | None = None

    def weight(self, t: int) -> float:
        return float(self.lambda_v(t)) if callable(self.lambda_v) else float(self.lambda_v)

    def __call__(self, x, t):
        basis = self.bank.get(t)
        if self.trace is not None:
            self.trace.append(float(np.mean(structural_energy(basis, self.fx, x, t).value)))
        return guided_epsilon(self.prior, self.schedule, basis, self.fx, x, t,
                              self.cond, self.weight(t))


# -- persistence -----------------------------------------------------------

def save_bank(path, bank: BasisBank) -> None:
    arrays = {}
    for t, b in bank.bases.items():
        arrays[f"t{t}_mean"] = b.pca.mean
        arrays[f"t{t}_basis"] = b.pca.basis
        arrays[f"t{t}_eigenvalues"] = b.pca.eigenvalues
        arrays[f"t{t}_references"] = b.references
        arrays[f"t{t}_similarities"] = b.similarities
        arrays[f"t{t}_indices"] = b.indices
    header = {"schema_version": BANK_SCHEMA_VERSION, "view": bank.view,
              "timesteps": bank.timesteps, "meta": bank.meta}
    arrays["header"] = np.array(json.dumps(header))
    np.savez(Path(path), **arrays)


def load_bank(path) -> BasisBank:
    with np.load(Path(path)) as data:
        header = json.loads(str(data["header"]))
        if header.get("schema_version") != BANK_SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported bank schema {header.get('schema_version')}")
        bases = {}
        for t in header["timesteps"]:
            pca = PcaModel(data[f"t{t}_mean"], data[f"t{t}_basis"],
                           data[f"t{t}_eigenvalues"])
            bases[int(t)] = StructuralBasis(int(t), pca, data[f"t{t}_references"],
                                            data[f"t{t}_similarities"],
                                            data[f"t{t}_indices"])
    return BasisBank(header["view"], bases, header["meta"])
