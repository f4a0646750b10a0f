"""Evaluate the failure bound on the deployment-scale parameters under each
reading of the margin split, and show how far each lands from 4.26e-15."""

import math

from peercensus.analysis import SPLIT_READINGS, golden_params, theorem_bound

TARGET = 4.26e-15

for reading in SPLIT_READINGS:
    rep = theorem_bound(golden_params(reading))
    print(f"== {reading} ==")
    print(rep.table())
    print(f"off the target by 10^{math.log10(rep.total / TARGET):+.2f}\n")
