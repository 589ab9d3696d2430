"""Walk through the toy prior and the two reverse samplers.

Run: python3 demos/01_prior_and_sampling.py
"""
import numpy as np

from segslab import default_prior, linear_schedule, sample

prior = default_prior()
schedule = linear_schedule(1000)

# Three view modes: one object rendered from front, side and back.
for mode in prior.modes:
    print(f"{mode.label:>5}: weight {mode.weight:.2f}, mean {np.round(mode.mean, 2)}")

# The data distribution over-represents the front view, as photo collections do.
print("label weights:", {k: round(v, 3) for k, v in prior.label_weights().items()})

# Reverse chains start from N(0, I) and use the exact mixture score.
for mode in ("ddim", "ddpm"):
    xs = sample(prior, schedule, None, 2000, seed=0, mode=mode)
    frac = np.bincount(prior.classify(xs), minlength=3) / len(xs)
    print(f"{mode}: view fractions", {lab: round(float(f), 3) for lab, f in zip(prior.labels, frac)})

# Conditioning on a label restricts the score to that label's modes.
back = sample(prior, schedule, "back", 500, seed=1, mode="ddpm")
print("back-conditioned mean:", np.round(back.mean(0), 2))
