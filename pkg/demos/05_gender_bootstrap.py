"""Matched gender downsampling and the bootstrap test on made-up outcomes."""

import numpy as np

from dementia_nlp.corpus import Utterance
from dementia_nlp.stats import bootstrap_diff_test, format_gender_report, gender_partition_downsample

pool = []
for gender, n_ad, n_ctl in (("male", 30, 12), ("female", 80, 40)):
    pool += [Utterance("g", len(pool) + i, ("w",), None, "AD" if i < n_ad else "Control", "Cookie", gender)
             for i in range(n_ad + n_ctl)]
sub = gender_partition_downsample(pool, seed=0)
print("male", sub.male_counts, "female", sub.female_counts)

rng = np.random.default_rng(1)
male_ok = rng.random(len(sub.male)) < 0.86
female_ok = rng.random(len(sub.female_downsampled)) < 0.85
res = bootstrap_diff_test(male_ok, female_ok, n_resamples=10000, seed=2)
print(format_gender_report(res.mean_a, res.mean_b, res, "eval-shared"), end="")
