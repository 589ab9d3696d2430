"""Structural energy guidance steers unconditional sampling toward the back view.

Run: python3 demos/02_structural_guidance.py   (about a minute)
"""
import numpy as np

from segslab import (Guide, build_basis_bank, default_prior, linear_schedule,
                     make_feature_extractor, sample, structural_energy)

prior = default_prior()
schedule = linear_schedule(1000)
fx = make_feature_extractor()

# One PCA basis per timestep, fitted on renoised back-view samples.
bank = build_basis_bank(prior, schedule, fx, "back", N=20, n_components=8, k=3, stride=1)
b = bank.get(500)
print("basis at t=500:", b.pca.basis.shape, "explained variance",
      np.round(b.pca.eigenvalues[:3], 4))

# The energy is small near the back mode and large near the front mode.
for label, x in zip(prior.labels, prior.means):
    e = structural_energy(bank.get(10), fx, x, 10).value
    print(f"energy at {label} mean (t=10): {e:.4f}")

# Back fraction of unconditional DDPM samples as the guidance weight grows.
for lam in (0.0, 2.0, 5.0, 10.0):
    xs = sample(prior, schedule, None, 500, seed=0, mode="ddpm",
                eps_model=Guide(prior, schedule, bank, fx, lam))
    back = np.mean(prior.classify(xs) == prior.check_label("back"))
    print(f"lambda={lam:5.1f}: back fraction {back:.3f}")
