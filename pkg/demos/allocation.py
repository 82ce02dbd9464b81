"""How the symbol budget moves between blocks as the channel improves."""

import numpy as np

from mtsc.adaptive import allocate_rates, score_importance, snr_weight

gen = np.random.default_rng(0)
# a semantic vector whose energy sits mostly in the first two blocks
sv = gen.standard_normal(32) * np.repeat([4.0, 2.0, 1.0, 0.5, 0.5, 0.3, 0.2, 0.1], 4)
scores = score_importance(sv)
print("block scores ", " ".join(f"{s:.2f}" for s in scores))

for snr in (-9, -6, -3, 0, 3, 6, 9, 12):
    alloc = allocate_rates(scores, snr, 16)
    print(f"{snr:>4d} dB  lambda {snr_weight(snr):.2f}  tiers {list(alloc.s)}")
