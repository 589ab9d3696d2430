"""Guidance-weight sweep, top-k sweep, and the forward/reverse SDE check.

Run: python3 demos/04_sweeps_and_fpe.py   (several minutes)
"""
import numpy as np

from segslab import (DistillConfig, build_basis_bank, default_prior, fpe_check,
                     linear_schedule, make_feature_extractor)
from segslab.sweeps import constructed_reference_set, lambda_sweep, topk_sweep

prior, schedule, fx = default_prior(), linear_schedule(1000), make_feature_extractor()
bank = build_basis_bank(prior, schedule, fx, "back", stride=1)
seeds = range(10)

print("lambda sweep (quality proxy: higher is worse)")
for row in lambda_sweep([0, 10, 30, 100, 300], DistillConfig(), prior, schedule, fx, bank, seeds):
    print(f"  lambda={row['lambda']:6.1f}  JR {row['jr_analog']:.2f}  "
          f"quality {row['quality']:.2f}  collapse {row['collapse']}")

print("top-k sweep on a constructed reference set")
aux, scores = constructed_reference_set(prior, 8)
for row in topk_sweep(range(1, 9), DistillConfig(), prior, schedule, fx, seeds,
                      aux=aux, scores=scores, stride=1):
    print(f"  k={row['k']}  back View-CS {row['view_cs_back']:.3f}")

rep = fpe_check(prior, particles=10_000, steps=1000)
print("forward KS vs N(0,1):", np.round(rep.forward_ks_per_coord, 4))
print("reverse KS vs data:  ", np.round(rep.reverse_ks_per_coord, 4))
