"""Paired-seed sweeps over the reference count k and the guidance weight."""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .control import quality_proxy
from .diffusion import MixturePrior, NoiseSchedule
from .distill import DistillConfig, ViewRig, default_rig, distill
from .errors import InvalidInputError
from .guidance import BasisBank, FeatureExtractor, build_basis_bank
from .metrics import jr_analog, view_cs_analog


def _run_seeds(config: DistillConfig, seeds, prior, schedule, rig, fx, bank, workers=1):
    configs = [replace(config, seed=int(s)) for s in seeds]
    args = [(c, prior, schedule, rig, fx, bank) for c in configs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_distill_star, args))
    else:
        results = [_distill_star(a) for a in args]
    return np.array([r.theta for r in results])


def _distill_star(args):
    return distill(*args)


def mean_quality(thetas, rig: ViewRig, prior: MixturePrior) -> float:
    return float(np.mean([quality_proxy(prior, rig.render(th, v))
                          for th in thetas for v in rig.views]))


def constructed_reference_set(prior: MixturePrior, n: int = 8, view: str = "back",
                              offset: float = 5.0, straddle: str = "side",
                              adversary: str = "front"):
    """Auxiliary set whose selector scores decrease with index.

    The leading three samples straddle the target mode along the direction of
    the ``straddle`` mode (their mean sits on the target, the top-scored one
    lies near the view boundary); every later sample is a copy of the
    ``adversary`` mode mean. Returns ``(aux, scores)``.
    """
    if n < 4:
        raise InvalidInputError("constructed set needs n >= 4")
    labels = [m.label for m in prior.modes]
    for lab in (view, straddle, adversary):
        if lab not in labels:
            raise InvalidInputError(f"prior has no mode labelled {lab!r}")
    target = prior.means[labels.index(view)]
    toward = prior.means[labels.index(straddle)] - target
    toward = toward / np.linalg.norm(toward)
    other = prior.means[labels.index(adversary)]
    head = [target + offset * toward, target - offset * toward, target]
    tail = [other.copy() for _ in range(n - 3)]
    aux = np.array(head + tail)
    scores = np.linspace(1.0, 0.1, n)
    return aux, scores


def topk_sweep(k_values, config: DistillConfig, prior: MixturePrior, schedule: NoiseSchedule,
               fx: FeatureExtractor, seeds, rig: ViewRig | None = None, N: int = 20,
               n_components: int = 8, basis_seed: int = 0, stride: int | None = None,
               aux=None, scores=None, workers: int = 1) -> list[dict]:
    """One guided distillation batch per k on shared seeds and a shared
    auxiliary set; reports View-CS analogs per k."""
    rig = rig or default_rig()
    k_values = [int(k) for k in k_values]
    n_aux = N if aux is None else len(aux)
    if not k_values or any(not 1 <= k <= n_aux for k in k_values):
        raise InvalidInputError(f"k values must lie in [1, {n_aux}]")
    cfg = replace(config, guidance=True)
    rows = []
    for k in k_values:
        bank = build_basis_bank(prior, schedule, fx, cfg.guided_view, N=n_aux,
                                n_components=n_components, k=k, seed=basis_seed,
                                stride=stride, aux=aux, similarities=scores)
        thetas = _run_seeds(cfg, seeds, prior, schedule, rig, fx, bank, workers)
        vcs = view_cs_analog(thetas, rig, prior)
        rows.append({"k": k, "view_cs_back": vcs.get(cfg.guided_view, float("nan")),
                     "view_cs_mean": float(np.mean(list(vcs.values()))),
                     **{f"view_cs_{v}": s for v, s in vcs.items()},
                     "jr_analog": jr_analog(thetas, rig, prior)})
    return rows


def lambda_sweep(lambdas, config: DistillConfig, prior: MixturePrior, schedule: NoiseSchedule,
                 fx: FeatureExtractor, bank: BasisBank, seeds, rig: ViewRig | None = None,
                 collapse_multiple: float = 4.0, workers: int = 1) -> list[dict]:
    """Paired-seed runs per guidance weight. A row is flagged as collapsed when
    the mean quality proxy of its final renders exceeds ``collapse_multiple``
    times that of the unguided runs."""
    rig = rig or default_rig()
    lambdas = [float(v) for v in lambdas]
    if any(v < 0 for v in lambdas):
        raise InvalidInputError("lambda values must be >= 0")
    base_cfg = replace(config, guidance=False, lambda_source="fixed")
    base = _run_seeds(base_cfg, seeds, prior, schedule, rig, fx, bank, workers)
    base_q = mean_quality(base, rig, prior)
    rows = []
    for lam in lambdas:
        cfg = replace(config, guidance=True, lambda_source="fixed", lambda_v=lam)
        thetas = base if lam == 0 else _run_seeds(cfg, seeds, prior, schedule, rig, fx,
                                                  bank, workers)
        q = mean_quality(thetas, rig, prior)
        vcs = view_cs_analog(thetas, rig, prior)
        rows.append({"lambda": lam, "jr_analog": jr_analog(thetas, rig, prior),
                     **{f"view_cs_{v}": s for v, s in vcs.items()},
                     "quality": q, "baseline_quality": base_q,
                     "collapse": bool(q > collapse_multiple * base_q)})
    return rows


def write_table_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise InvalidInputError("empty table")
    with open(Path(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
