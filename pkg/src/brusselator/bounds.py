"""Closed-form absorbing-set constants and their verification on trajectories.

Several constants are far beyond floating-point range at ordinary parameter
values (``Q1`` carries a factor ``exp(delta^2 K1 C16 / d1)`` and ``Q2`` a
factor ``exp(2 eta^6 Q1^2 / d2)``), so every constant is stored with its
natural logarithm as an mpmath number; ``value`` is the float, or ``inf``
when it overflows.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .model import Parameters
from .integrate import galerkin_rhs
from .spectral import SineBasis

log = logging.getLogger(__name__)

ABSORPTION_CHECKS = (
    # (bound name, observable, description)
    ("R0", "norm_v2z2", "||(v,z)||^2"),
    ("R1", "norm_y2xi2", "||y||^2 + ||xi||^2"),
    ("R2", "norm_p2th2", "||p||^2 + ||theta||^2"),
    ("K1", "norm_g2", "||g||^2"),
    ("K2", "l4_vz", "||(v,z)||_L4^4"),
    ("K3", "l6_vz", "||(v,z)||_L6^6"),
    ("Q1", "h1_uw", "||grad(u,w)||^2"),
    ("Q2", "h1_vzphpsi", "||grad(v,z)||^2 + ||grad(phi,psi)||^2"),
)


# relative growth of the tail sup-norm still counted as bounded
LINF_SLACK = 1e-3


def _mlog(x) -> mpmath.mpf:
    return mpmath.log(mpmath.mpf(x))


def log_add(la, lb) -> mpmath.mpf:
    """``log(exp(la) + exp(lb))`` without forming either exponential."""
    la, lb = mpmath.mpf(la), mpmath.mpf(lb)
    hi, lo = (la, lb) if la >= lb else (lb, la)
    gap = lo - hi
    if gap < -1000:
        return hi
    return hi + mpmath.log1p(mpmath.exp(gap))


@dataclass(frozen=True)
class Constant:
    """A positive constant stored by its natural log.

    ``exact`` keeps the directly evaluated float when one exists, so that
    ordinary constants compare without a log/exp round trip.
    """

    name: str
    log: mpmath.mpf
    formula: str
    exact: float | None = None

    @property
    def value(self) -> float:
        if self.exact is not None:
            return self.exact
        if self.log > 709:
            return math.inf
        return float(mpmath.exp(self.log))

    def scaled(self, factor: float) -> "Constant":
        exact = None if self.exact is None else self.exact * factor
        return Constant(self.name, self.log + _mlog(factor), f"{factor!r} * ({self.formula})",
                        exact)

    def to_dict(self) -> dict:
        return {"log": mpmath.nstr(self.log, 30), "value": self.exact,
                "formula": self.formula}

    @classmethod
    def from_dict(cls, name: str, d: dict) -> "Constant":
        if d.get("value") is not None:
            return finite(name, d["value"], d["formula"])
        return cls(name, mpmath.mpf(d["log"]), d["formula"])


def finite(name: str, value: float, formula: str) -> Constant:
    return Constant(name, _mlog(value), formula, float(value))


@dataclass
class BoundSet:
    """All constants of the dissipativity estimates, with their inputs."""

    constants: dict
    inputs: dict = field(default_factory=dict)

    def __getitem__(self, name) -> Constant:
        return self.constants[name]

    def __getattr__(self, name):
        constants = self.__dict__.get("constants", {})
        if name in constants:
            return constants[name].value
        raise AttributeError(name)

    def log(self, name) -> mpmath.mpf:
        return self.constants[name].log

    def scaled(self, name: str, factor: float) -> "BoundSet":
        """Copy with one constant multiplied by ``factor`` (negative controls)."""
        constants = dict(self.constants)
        constants[name] = constants[name].scaled(factor)
        return BoundSet(constants, dict(self.inputs, scaled={name: factor}))

    def to_dict(self) -> dict:
        return {"inputs": self.inputs,
                "constants": {k: c.to_dict() for k, c in self.constants.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundSet":
        return cls({k: Constant.from_dict(k, v) for k, v in d["constants"].items()},
                   dict(d.get("inputs", {})))


def compute_bound_set(prm: Parameters, gamma: float, volume: float, delta: float,
                      eta: float, n: int = 1) -> BoundSet:
    """Evaluate every constant by direct transcription of its formula.

    ``gamma`` is the Poincare constant, ``volume`` is |Omega|, ``delta`` and
    ``eta`` the L4 and L6 embedding constants.
    """
    p = prm
    g, V = float(gamma), float(volume)
    if min(g, V, delta, eta) <= 0:
        raise ValueError("gamma, volume, delta and eta must be positive")
    d1, d2, d3, d, mu = p.d1, p.d2, p.d3, p.d, p.mu
    a, b, k, N = p.a, p.b, p.k, p.N
    dd2 = abs(d1 - d2) ** 2
    mx = max(1.0, mu)
    kD = abs(k + 2 * (p.D1 - p.D2)) ** 2
    c = {}

    R0 = b**2 * V / (g * d2)
    c["R0"] = finite("R0", R0, "b^2 |Omega| / (gamma d2)")

    R1 = 1 + mx * (4 * b**2 / (g**3 * d * d1 * d2) + 16 * a**2 / (g**2 * d * d1)
                   + k**2 * b**2 / (mu * g**3 * d * d2 * d3)
                   + 2 * dd2 / (g * d1 * d2) * (1 / d + 1 / d2) * b**2) * V
    c["R1"] = finite("R1", R1, "1 + max(1,mu) (4b^2/(gamma^3 d d1 d2) + 16a^2/(gamma^2 d d1) "
                     "+ k^2 b^2/(mu gamma^3 d d2 d3) + 2|d1-d2|^2/(gamma d1 d2) (1/d + 1/d2) b^2) "
                     "|Omega|")

    R2 = 1 + mx * (2 * dd2 / (g * d1 * d2) * (1 / d + 1 / d2)
                   + 1 / (2 * g**2 * d * d2) * (kD / p.D1 + k**2 / (2 * mu * p.D3))) * b**2 * V
    c["R2"] = finite("R2", R2, "1 + max(1,mu) [2|d1-d2|^2/(gamma d1 d2) (1/d + 1/d2) "
                     "+ 1/(2 gamma^2 d d2) (|k + 2(D1-D2)|^2/D1 + k^2/(2 mu D3))] b^2 |Omega|")

    K1 = 7 * R0 + 3 * (R1 + R2)
    c["K1"] = finite("K1", K1, "7 R0 + 3 (R1 + R2)")
    c["K2"] = finite("K2", 1 + b**4 * V / (3 * g**2 * d2**2), "1 + b^4 |Omega| / (3 gamma^2 d2^2)")
    c["K3"] = finite("K3", 1 + 3 * b**6 * V / (20 * g**3 * d2**3),
                     "1 + 3 b^6 |Omega| / (20 gamma^3 d2^3)")

    vz_int = K1 + (1 + 1 / (2 * g * d2)) * b**2 * V
    C14 = (4 * dd2 / (d1**2 * d2) * vz_int
           + (1 / d1) * ((4 * k / mu + 1) * K1 + 8 / g * (K1 + 2 * a**2 * V)))
    c["C14"] = finite("C14", C14, "4|d1-d2|^2/(d1^2 d2) [K1 + (1 + 1/(2 gamma d2)) b^2 |Omega|] "
                      "+ (1/d1) ((4k/mu + 1) K1 + (8/gamma)(K1 + 2a^2 |Omega|))")
    # implementer-derived: mirrors C14 with the p-equation in place of the y-equation
    C15 = (dd2 / (2 * d1**2) * (4 / d2) * vz_int
           + (1 / d1) * (K1 + kD / (2 * p.D1) * K1 + 2 * k / mu * K1))
    c["C15"] = finite("C15", C15, "(|d1-d2|^2/(2 d1^2)) (4/d2) [K1 + (1 + 1/(2 gamma d2)) b^2 "
                      "|Omega|] + (1/d1) [K1 + |k + 2(D1-D2)|^2 K1/(2 D1) + 2k K1/mu] "
                      "(derived by analogy with C14)")
    C16 = C14 + C15 + 4 / d2 * vz_int
    c["C16"] = finite("C16", C16, "C14 + C15 + (4/d2) [K1 + (1 + 1/(2 gamma d2)) b^2 |Omega|]")

    q1_pre = C16 + 2 / d1 * (a**2 * V + N**2 * K1)
    log_Q1 = _mlog(q1_pre) + mpmath.mpf(delta) ** 2 * K1 * C16 / d1
    c["Q1"] = Constant("Q1", log_Q1, "(C16 + (2/d1)(a^2 |Omega| + N^2 K1)) "
                       "exp(delta^2 K1 C16 / d1)")

    c17_pre = 1 / d2 * vz_int + K1 * (d2 + 2 * b**2 / d2)
    # exponent 2 eta^6 Q1^2 / d2, formed from log Q1
    log_C17 = _mlog(c17_pre) + 2 * mpmath.mpf(eta) ** 6 * mpmath.exp(2 * log_Q1) / d2
    c["C17"] = Constant("C17", log_C17, "((1/d2)[K1 + (1 + 1/(2 gamma d2)) b^2 |Omega|] "
                        "+ K1 (d2 + 2b^2/d2)) exp(2 eta^6 Q1^2 / d2)")
    C18 = K1 / (2 * d3) * (1 + k + k**2) * math.exp(2 * (p.lam + N))
    c["C18"] = finite("C18", C18, "K1/(2 d3) (1 + k + k^2) exp(2(lambda + N))")
    c["Q2"] = Constant("Q2", log_add(log_C17, c["C18"].log), "C17 + C18")

    inputs = {"gamma": g, "volume": V, "delta": float(delta), "eta": float(eta), "n": int(n),
              "parameters": prm.as_dict()}
    return BoundSet(c, inputs)


def bound_set_for_basis(prm: Parameters, basis: SineBasis, embedding) -> BoundSet:
    return compute_bound_set(prm, basis.gamma, basis.volume, embedding.delta, embedding.eta,
                             basis.n)


def beta(t: float, prm: Parameters, gamma: float) -> float:
    """``exp(-gamma d t) * int_0^t exp(gamma (d1 - 2 d2) s) ds`` in closed form.

    Evaluated as ``exp(-gamma d t) expm1(gamma c t) / (gamma c)`` with
    ``c = d1 - 2 d2``, which is continuous as ``c -> 0``.  When ``d = d1``
    it equals ``|exp(-2 gamma d2 t) - exp(-gamma d t)| / |gamma c|``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    g, d = gamma, prm.d
    c = prm.d1 - 2 * prm.d2
    if c == 0:
        return t * math.exp(-g * d * t)
    return math.exp(-g * d * t) * math.expm1(g * c * t) / (g * c)


def transient_envelope_vz(vz0: float, prm: Parameters, gamma: float, volume: float,
                          t) -> np.ndarray:
    """Upper envelope of ``||v(t)||^2 + ||z(t)||^2`` given its initial value."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    rate = 2 * gamma * prm.d2
    return np.exp(-rate * t) * vz0 + prm.b**2 * volume / rate


@dataclass
class BoundVerdict:
    name: str
    observable: str
    window: tuple
    observed: float
    bound: float
    margin: float
    passed: bool
    log_bound: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "observable": self.observable, "window": list(self.window),
                "observed": self.observed,
                "bound": None if math.isinf(self.bound) else self.bound,
                "margin": self.margin, "passed": self.passed, "log_bound": self.log_bound}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundVerdict":
        bound = math.inf if d["bound"] is None else d["bound"]
        return cls(d["name"], d["observable"], tuple(d["window"]), d["observed"], bound,
                   d["margin"], d["passed"], d.get("log_bound", ""))


def _tail(traj, tail_fraction):
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    t_end = float(traj.times[-1]) if len(traj) else 0.0
    t_tail = (1 - tail_fraction) * t_end
    mask = traj.times >= t_tail
    if len(traj) < 2 or not np.any(mask):
        raise ValueError("empty tail window; run longer or sample more often")
    return t_tail, t_end, mask


def verify_absorption(traj, bs: BoundSet, tail_fraction: float = 0.4, tol: float = 0.0) -> list:
    """Compare tail maxima of the observables with their absorbing constants.

    The sup-norm has no explicit constant; it passes when its maximum over
    the second half of the tail does not exceed the maximum over the first
    half by more than ``tol + LINF_SLACK`` (relative), i.e. it stays bounded
    rather than growing.  The slack absorbs the slow approach to a steady
    or periodic attractor.
    """
    t_tail, t_end, mask = _tail(traj, tail_fraction)
    verdicts = []
    for name, obs, _ in ABSORPTION_CHECKS:
        observed = float(np.max(traj.observable(obs)[mask]))
        const = bs[name]
        log_obs = _mlog(observed) if observed > 0 else -mpmath.inf
        passed = bool(np.isfinite(observed)) and log_obs <= const.log + _mlog(1 + tol)
        gap = log_obs - const.log
        # exp of a hugely negative mpf is slow and underflows anyway
        margin = float(mpmath.exp(gap)) if observed > 0 and gap > -800 else 0.0
        verdicts.append(BoundVerdict(name, obs, (t_tail, t_end), observed, const.value, margin,
                                     passed, mpmath.nstr(const.log, 17)))
    sup = traj.observable("supnorm")[mask]
    half = max(1, len(sup) // 2)
    early, late = float(np.max(sup[:half])), float(np.max(sup[half:] if len(sup) > 1 else sup))
    ok = bool(np.all(np.isfinite(sup))) and late <= early * (1 + tol + LINF_SLACK) + 1e-12
    verdicts.append(BoundVerdict("Linf", "supnorm", (t_tail, t_end), late, early,
                                 late / early if early > 0 else 0.0, ok))
    return verdicts


def envelope_verdict(traj, prm: Parameters, gamma: float, volume: float,
                     tol: float = 0.05) -> BoundVerdict:
    """``||(v,z)(t)||^2`` against its transient envelope at every sample.

    ``observed`` is the largest ratio of the norm to the envelope.
    """
    vz = traj.observable("norm_v2z2")
    env = transient_envelope_vz(vz[0], prm, gamma, volume, traj.times)
    ratio = float(np.max(vz / env))
    window = (float(traj.times[0]), float(traj.times[-1]))
    return BoundVerdict("envelope_vz", "norm_v2z2", window, ratio, 1.0, ratio,
                        ratio <= 1 + tol)


# ---------------------------------------------------------------------------
# differential inequalities along stored states


@dataclass
class ResidualReport:
    """Per-sample left-hand sides and bounds of the differential inequalities.

    Each entry of ``checks`` maps a name to ``(times, lhs, bound)`` arrays;
    ``max_excess`` is ``max(lhs - bound)`` and a check passes when
    ``lhs <= bound + tol_abs + tol_rel * |bound|`` at every sample.
    """

    checks: dict
    tol_rel: float
    tol_abs: float

    def excess(self, name) -> float:
        _, lhs, bound = self.checks[name]
        return float(np.max(lhs - bound)) if len(lhs) else -math.inf

    def passed(self, name) -> bool:
        _, lhs, bound = self.checks[name]
        return bool(np.all(lhs <= bound + self.tol_abs + self.tol_rel * np.abs(bound)))

    @property
    def all_passed(self) -> bool:
        return all(self.passed(n) for n in self.checks)

    def summary(self) -> dict:
        return {n: {"max_excess": self.excess(n), "passed": self.passed(n)} for n in self.checks}


def state_functionals(q: np.ndarray, basis: SineBasis) -> dict:
    """Integrals entering the energy inequalities, from one modal state."""
    P = basis.fine_points
    g = basis.to_grid(q, P)
    grads = basis.gradient_grid(q, P)
    grad_sq = sum(gr * gr for gr in grads)
    u, v, phi, w, z, psi = g
    out = {}
    out["vz2"] = float(q[1] @ q[1] + q[4] @ q[4])
    out["grad_vz2"] = float((q[1] ** 2 + q[4] ** 2) @ basis.eigenvalues)
    out["grad_phipsi2"] = float((q[2] ** 2 + q[5] ** 2) @ basis.eigenvalues)
    out["l4_vz"] = float(basis.integrate(v**4 + z**4))
    out["l6_vz"] = float(basis.integrate(v**6 + z**6))
    # ||grad v^2||^2 = 4 int v^2 |grad v|^2, ||grad v^3||^2 = 9 int v^4 |grad v|^2
    out["grad_v2sq"] = float(basis.integrate(4 * (v**2 * grad_sq[1] + z**2 * grad_sq[4])))
    out["grad_v3sq"] = float(basis.integrate(9 * (v**4 * grad_sq[1] + z**4 * grad_sq[4])))
    return out


def vz_energy_integral(q: np.ndarray, basis: SineBasis, prm: Parameters) -> float:
    """``int -(uv - b/2)^2 - (wz - b/2)^2 - D2 (v - z)^2 dx + b^2 |Omega| / 2``."""
    g = basis.to_grid(q, basis.fine_points)
    u, v, _, w, z, _ = g
    b = prm.b
    # the constants b^2/4 of both squares cancel against b^2 |Omega| / 2
    integrand = (u * v) ** 2 - b * u * v + (w * z) ** 2 - b * w * z + prm.D2 * (v - z) ** 2
    return float(-basis.integrate(integrand))


def functional_rates(q: np.ndarray, basis: SineBasis, prm: Parameters) -> dict:
    """Exact time derivatives of the functionals along the Galerkin flow at ``q``."""
    qdot = galerkin_rhs(q, basis, prm)
    P = basis.fine_points
    v, z = basis.to_grid(q[[1, 4]], P)
    vd, zd = basis.to_grid(qdot[[1, 4]], P)
    lam = basis.eigenvalues
    return {
        "vz2": float(2 * (q[1] @ qdot[1] + q[4] @ qdot[4])),
        "l4_vz": float(basis.integrate(4 * (v**3 * vd + z**3 * zd))),
        "l6_vz": float(basis.integrate(6 * (v**5 * vd + z**5 * zd))),
        "grad_phipsi2": float(2 * ((q[2] * qdot[2] + q[5] * qdot[5]) @ lam)),
    }


def energy_identity_defect(q: np.ndarray, basis: SineBasis, prm: Parameters) -> float:
    """``|(1/2) d/dt ||(v,z)||^2 + d2 ||grad(v,z)||^2 - vz_energy_integral|``.

    The (v, z) energy balance holds exactly for the Galerkin system, so this
    is zero up to rounding.
    """
    lhs = 0.5 * functional_rates(q, basis, prm)["vz2"] + prm.d2 * float(
        (q[1] ** 2 + q[4] ** 2) @ basis.eigenvalues)
    return abs(lhs - vz_energy_integral(q, basis, prm))


def inequality_residuals(traj, basis: SineBasis, prm: Parameters, bs: BoundSet | None = None,
                         tol_rel: float = 0.05, tol_abs: float = 1e-8,
                         instantaneous: bool = False) -> ResidualReport:
    """Check the energy and L4/L6 ladder inequalities along stored states.

    Time derivatives are second-order finite differences of the stored
    samples, or exact rates of the Galerkin flow with ``instantaneous``.
    Checks:

    * ``vz_energy``: ``(1/2) d/dt ||(v,z)||^2 + d2 ||grad(v,z)||^2 <= b^2 |Omega| / 2``
    * ``ladder_l4``: ``d/dt ||(v,z)||_4^4 + 3 d2 ||grad(v^2,z^2)||^2 <= 2 b^2 ||(v,z)||^2``
    * ``ladder_l6``: ``d/dt ||(v,z)||_6^6 + (10/3) d2 ||grad(v^3,z^3)||^2
      <= 3 b^2 ||(v,z)||_4^4``
    * ``phipsi_gradient`` (needs ``bs``): ``d/dt ||grad(phi,psi)||^2
      + 2 (lambda+N) ||grad(phi,psi)||^2 <= k^2 K1 / (2 d3)``, at samples
      where ``||g||^2 <= K1``.
    """
    if traj.states is None or len(traj.states) < 3:
        raise ValueError("inequality residuals need at least 3 stored states")
    t = np.asarray(traj.state_times)
    rows = [state_functionals(q, basis) for q in traj.states]
    f = {key: np.array([r[key] for r in rows]) for key in rows[0]}
    if instantaneous:
        rates = [functional_rates(q, basis, prm) for q in traj.states]
        ddt = {key: np.array([r[key] for r in rates]) for key in rates[0]}
    else:
        # second-order one-sided differences at the ends, where rough data decays fastest
        ddt = {key: np.gradient(f[key], t, edge_order=2)
               for key in ("vz2", "l4_vz", "l6_vz", "grad_phipsi2")}
    V, b, d2 = basis.volume, prm.b, prm.d2
    checks = {}
    lhs = 0.5 * ddt["vz2"] + d2 * f["grad_vz2"]
    checks["vz_energy"] = (t, lhs, np.full_like(t, 0.5 * b**2 * V))
    checks["ladder_l4"] = (t, ddt["l4_vz"] + 3 * d2 * f["grad_v2sq"], 2 * b**2 * f["vz2"])
    checks["ladder_l6"] = (t, ddt["l6_vz"] + 10 / 3 * d2 * f["grad_v3sq"],
                           3 * b**2 * f["l4_vz"])
    if bs is not None:
        g2 = np.array([float(np.sum(q * q)) for q in traj.states])
        mask = g2 <= bs.K1
        lhs = ddt["grad_phipsi2"] + 2 * (prm.lam + prm.N) * f["grad_phipsi2"]
        bound = np.full_like(t, prm.k**2 * bs.K1 / (2 * prm.d3))
        checks["phipsi_gradient"] = (t[mask], lhs[mask], bound[mask])
    return ResidualReport(checks, tol_rel, tol_abs)
