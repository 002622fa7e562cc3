"""How many directions does the attractor expand?

The trace of the linearized flow, averaged over a QR frame of ``m`` tangent
vectors, gives ``q_m``.  The first ``m`` with ``q_m < 0`` bounds the number
of directions in which volumes can grow; it is compared with the analytic
bound, which holds for every admissible parameter set but is enormous.

Run with ``python demos/02_dimension.py`` (under a minute).
"""
import math

import mpmath
import numpy as np

from brusselator import (DomainSpec, IntegratorConfig, Parameters, analytic_dimension_bound,
                         build_basis, embedding_constants, evolve_tangents,
                         random_initial_state, simulate)
from brusselator.bounds import bound_set_for_basis
from brusselator.tangent import qm_average

prm = Parameters()
basis = build_basis(DomainSpec((math.pi,)), 16)

# Settle onto the attractor first; q_m is an average along it.
cfg = IntegratorConfig(dt=0.01, t_end=20.0, sample_every=100, adaptive=True)
rng = np.random.default_rng(3)
bases = [simulate(random_initial_state(basis, 5.0, rng), basis, prm, cfg).final
         for _ in range(3)]

rep = evolve_tangents(bases[0], 6, basis, prm, cfg)
print("leading Lyapunov exponents:", np.array2string(rep.exponents, precision=4))
print(f"Kaplan-Yorke dimension: {rep.kaplan_yorke:.3f}")
# At these parameters every exponent is negative: the attractor is a stable
# equilibrium, so already one direction contracts on average and m* = 1.

res = qm_average(bases, basis, prm, cfg, m_max=8)
print("\nq_m (maximum over 3 base points):")
for m, q in enumerate(res.qm, start=1):
    print(f"  m={m}: {q:+.4f}")
print(f"first m with q_m < 0: {res.m_star}; stationarity gap {res.stationarity_gap:.2e}")

# The analytic bound goes through Q1 and the interpolation constant; it is
# carried in log space because B itself overflows any float.
emb = embedding_constants(basis, sample_budget=1000, seed=0)
bs = bound_set_for_basis(prm, basis, emb)
db = analytic_dimension_bound(prm, bs, Qstar=1.0, C_gn=emb.C_gn)
print(f"\nanalytic bound: m = floor(B) + 1 with log10 B = "
      f"{mpmath.nstr(db.log_B / mpmath.log(10), 6)}")
print(f"empirical m* admitted by the analytic bound: {db.admits(res.m_star)}")
