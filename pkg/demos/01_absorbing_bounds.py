"""Trajectories enter the absorbing ball and stay there.

Starting far outside the absorbing ball, a handful of runs settle onto the
attractor.  We compare the late-time maxima of each observable with its
explicit absorbing constant, and then show the check is not vacuous by
shrinking one constant until it is violated.

Run with ``python demos/01_absorbing_bounds.py`` (a few seconds).
"""
import math

import mpmath
import numpy as np

from brusselator import (DomainSpec, IntegratorConfig, Parameters, build_basis,
                         embedding_constants, random_initial_state, simulate,
                         verify_absorption)
from brusselator.bounds import bound_set_for_basis, envelope_verdict

prm = Parameters()
basis = build_basis(DomainSpec((math.pi,)), 32)

# The L4/L6 constants enter the higher bounds; estimate them on the subspace.
emb = embedding_constants(basis, sample_budget=1000, seed=0)
bs = bound_set_for_basis(prm, basis, emb)
print(f"embedding witnesses: delta={emb.delta:.4f} eta={emb.eta:.4f}")
for name in ("R0", "R1", "R2", "K1", "K2", "K3"):
    print(f"  {name:3s} = {bs[name].value:10.4f}   {bs[name].formula}")
# Q1 and Q2 do not fit in a float; they are carried by their logarithms.
print(f"  Q1 = exp({mpmath.nstr(bs.log('Q1'), 4)}), Q2 = exp({mpmath.nstr(bs.log('Q2'), 4)})")

cfg = IntegratorConfig(dt=0.01, t_end=30.0, sample_every=5, adaptive=True)
rng = np.random.default_rng(2024)
runs = [simulate(random_initial_state(basis, 10.0, rng), basis, prm, cfg) for _ in range(5)]

print("\nlate-time maximum / bound over the last 40% of each run")
for i, tr in enumerate(runs):
    verdicts = verify_absorption(tr, bs, tail_fraction=0.4)
    ratios = "  ".join(f"{v.name}={v.observed / v.bound:.3g}" for v in verdicts
                       if v.name != "Linf")
    status = "ok" if all(v.passed for v in verdicts) else "VIOLATION"
    print(f"  run {i}: {status}  {ratios}")

# The transient envelope for ||(v,z)||^2 holds at every sample, not only late.
env = envelope_verdict(runs[0], prm, basis.gamma, basis.volume, tol=0.05)
print(f"\nenvelope for ||(v,z)||^2 along run 0: max ratio {env.observed:.3f}, "
      f"passed={env.passed}")

# Negative control: R0 divided by 100 is smaller than what the flow produces.
small = bs.scaled("R0", 0.01)
failed = [v.name for v in verify_absorption(runs[0], small, 0.4) if not v.passed]
print(f"with R0 scaled by 0.01 the failing checks are {failed}")
