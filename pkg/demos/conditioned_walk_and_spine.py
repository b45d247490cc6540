"""The conditioned walk and the spine describe the same particle.

Under the change of measure weighted by the truncated martingale, the
branching random walk grows a distinguished line of descent (the spine)
whose positions follow the associated random walk conditioned to stay
positive.  This script samples both objects independently and compares
the marginal of the terminal position with a permutation KS test, then
prints a few spine trajectories next to conditioned-walk paths so the
agreement is visible by eye.

Run:  python demos/conditioned_walk_and_spine.py
"""

import numpy as np

from brw.conditioned import sample_conditioned
from brw.laws import lattice_binary
from brw.spine import simulate_spine, spine_marginal_vs_conditioned
from brw.streams import substream
from brw.walk import RenewalFunction, derive_step_law

law = lattice_binary()
step = derive_step_law(law)
R = RenewalFunction.from_lattice(step.span)
N = 8

rng = substream(12, "demo-spine", 0)
print("three conditioned-walk paths (Tanaka construction):")
for _ in range(3):
    path = sample_conditioned(step, N, rng)
    print("  ", np.array2string(path.zeta / step.span, precision=0,
                                suppress_small=True))

print("three spine paths (size-biased brood, R-weighted child choice):")
pos, n_sib, _ = simulate_spine(law, N, 3, rng, R)
for row in pos:
    print("  ", np.array2string(row / step.span, precision=0,
                                suppress_small=True))

d, p = spine_marginal_vs_conditioned(law, N, 2_000, rng, R)
print()
print(f"KS distance between the two terminal-position samples: {d:.4f}")
print(f"permutation p-value: {p:.3f}  (large = indistinguishable)")
