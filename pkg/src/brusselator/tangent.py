"""Tangent-linear dynamics, Lyapunov exponents and attractor dimension bounds.

Tangent vectors are propagated by the exact linearization of the discrete
integrating-factor step used for the base flow, so finite differences of
the discrete flow and tangent propagation agree up to O(eps).
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import optimize

from .bounds import BoundSet, Constant, finite, log_add
from .integrate import (BlowUpError, GalerkinStepper, IntegratorConfig, Trajectory,
                        apply_blocks, mode_blocks)
from .model import Parameters, linear_reaction_matrix
from .spectral import ModalState, SineBasis

log = logging.getLogger(__name__)


def _coeffs(x) -> np.ndarray:
    return np.asarray(x.coeffs if isinstance(x, ModalState) else x, dtype=float)


def nonlinear_derivative(q, G, basis: SineBasis, prm: Parameters,
                         linear: bool = True) -> np.ndarray:
    """Galerkin projection of ``f'(g) G``; ``G`` has shape ``(..., 6, M_tot)``.

    The cubic parts ``2uv du + u^2 dv`` (and the w, z analogue) are evaluated
    on the dealiased grid.  ``linear=False`` drops the constant matrix part.
    """
    q, G = _coeffs(q), _coeffs(G)
    n = basis.n
    base = basis.to_grid(q[[0, 1, 3, 4]])
    u, v, w, z = base
    dg = basis.to_grid(G[..., [0, 1, 3, 4], :])
    du, dv, dw, dz = np.moveaxis(dg, -1 - n, 0)
    prod = np.stack([2 * u * v * du + u * u * dv, 2 * w * z * dw + w * w * dz], axis=-1 - n)
    c = basis.to_modes(prod)
    out = np.zeros_like(G)
    if linear:
        out += linear_reaction_matrix(prm) @ G
    out[..., 0, :] += c[..., 0, :]
    out[..., 1, :] -= c[..., 0, :]
    out[..., 3, :] += c[..., 1, :]
    out[..., 4, :] -= c[..., 1, :]
    return out


def tangent_rhs(base, G, basis: SineBasis, prm: Parameters):
    """``(A + f'(base)) G`` projected onto the Galerkin space.

    Returns an array, or a ModalState when ``G`` is one.
    """
    q, g = _coeffs(base), _coeffs(G)
    out = apply_blocks(mode_blocks(basis, prm), g) + nonlinear_derivative(q, g, basis, prm,
                                                                          linear=False)
    if isinstance(G, ModalState):
        return ModalState(out, G.t)
    return out


class TangentStepper:
    """Advances a base state together with a block of tangent vectors."""

    def __init__(self, basis: SineBasis, prm: Parameters, cfg: IntegratorConfig):
        self.base = GalerkinStepper(basis, prm, cfg)
        self.basis = basis
        self.prm = prm
        self.cfg = cfg

    def _dN(self, q, G):
        return nonlinear_derivative(q, G, self.basis, self.prm, linear=False)

    def _substep(self, q, G, h):
        N = self.base.nonlinear
        e_half, e_full = self.base.propagators(h)
        if self.cfg.scheme == "if_euler":
            return e_full(q + h * N(q)), e_full(G + h * self._dN(q, G))
        q_half = e_half(q + 0.5 * h * N(q))
        G_half = e_half(G + 0.5 * h * self._dN(q, G))
        q1 = e_full(q) + h * e_half(N(q_half))
        G1 = e_full(G) + h * e_half(self._dN(q_half, G_half))
        return q1, G1

    def advance(self, q, G, t: float):
        n_sub = self.base.substeps(q)
        h = self.cfg.dt / n_sub
        x, X = q, G
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(n_sub):
                x, X = self._substep(x, X, h)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(X))):
            raise BlowUpError(t, float(np.max(np.abs(self.basis.to_grid(q)))), h)
        return x, X


def tangent_step(base, G, basis: SineBasis, prm: Parameters, cfg: IntegratorConfig,
                 n_steps: int = 1):
    """Propagate ``G`` along ``n_steps`` steps of the base flow; returns ``(q, G)``."""
    stepper = TangentStepper(basis, prm, cfg)
    q, g = _coeffs(base).copy(), _coeffs(G).copy()
    for i in range(n_steps):
        q, g = stepper.advance(q, g, i * cfg.dt)
    return q, g


def kaplan_yorke(exponents) -> float:
    """Kaplan-Yorke dimension from exponents (any order).

    0 when the largest exponent is negative; otherwise ``j + S_j/|l_{j+1}|``
    with ``j`` the last index whose partial sum ``S_j`` is nonnegative.  If
    every partial sum is nonnegative the number of exponents is returned
    (a lower estimate; more exponents are needed).
    """
    lam = np.sort(np.asarray(exponents, dtype=float))[::-1]
    if lam.size == 0 or lam[0] < 0:
        return 0.0
    sums = np.cumsum(lam)
    nonneg = np.nonzero(sums >= 0)[0]
    j = int(nonneg[-1]) + 1
    if j == lam.size:
        return float(j)
    return j + sums[j - 1] / abs(lam[j])


@dataclass
class LyapunovReport:
    """Result of a QR tangent run.

    ``exponents`` are averages of ``log R_ii`` over the post-transient
    renormalizations; ``qm`` holds the time-averaged trace of the linearized
    generator over the leading ``1..m`` frame vectors.  ``history`` and
    ``trace_samples`` are per-renormalization records.
    """

    exponents: np.ndarray
    qm: np.ndarray
    kaplan_yorke: float
    times: np.ndarray
    history: np.ndarray
    trace_samples: np.ndarray
    t_transient: float
    renorm_every: int
    dt: float
    final: ModalState
    frame: np.ndarray = field(repr=False)

    def qm_windows(self, parts: int = 2) -> np.ndarray:
        """q_m estimates from ``parts`` disjoint post-transient windows."""
        keep = self.trace_samples[self.times > self.t_transient]
        chunks = np.array_split(np.cumsum(keep, axis=1), parts)
        return np.array([c.mean(axis=0) for c in chunks])

    def to_dict(self) -> dict:
        return {"exponents": self.exponents.tolist(), "qm": self.qm.tolist(),
                "kaplan_yorke": self.kaplan_yorke, "t_transient": self.t_transient,
                "renorm_every": self.renorm_every, "dt": self.dt,
                "t_end": float(self.times[-1]) if len(self.times) else 0.0,
                # rows before the transient cutoff have no estimate yet
                "history": [[None if math.isnan(x) else x for x in row]
                            for row in self.history.tolist()]}


def _orthonormal(G: np.ndarray):
    m = G.shape[0]
    Q, R = np.linalg.qr(G.reshape(m, -1).T)
    sign = np.where(np.diag(R) < 0, -1.0, 1.0)
    return (Q * sign).T.reshape(G.shape), np.abs(np.diag(R))


def rayleigh_quotients(q, zetas, basis: SineBasis, prm: Parameters) -> np.ndarray:
    """``<(A + f'(q)) zeta_j, zeta_j>`` for each frame vector."""
    z = _coeffs(zetas)
    Az = tangent_rhs(q, z, basis, prm)
    return np.einsum("kij,kij->k", z, Az)


def _run_frame(q, G, stepper, cfg, m, renorm_every, n_renorm, t_transient):
    times, hist, traces = [], [], []
    log_sum = np.zeros(m)
    count = 0
    t = 0.0
    for r in range(n_renorm):
        for _ in range(renorm_every):
            q, G = stepper.advance(q, G, t)
            t += cfg.dt
        G, diag = _orthonormal(G)
        if not np.all(np.isfinite(diag)) or np.any(diag <= np.finfo(float).tiny):
            raise FloatingPointError(
                f"degenerate R diagonal at t={t:.6g} (min {np.min(diag):.3g})")
        times.append(t)
        traces.append(rayleigh_quotients(q, G, stepper.basis, stepper.prm))
        if t > t_transient:
            log_sum += np.log(diag)
            count += 1
        span = count * renorm_every * cfg.dt
        hist.append(log_sum / span if count else np.full(m, np.nan))
    return q, G, np.array(times), np.array(hist), np.array(traces)


def evolve_tangents(base, m: int, basis: SineBasis, prm: Parameters, cfg: IntegratorConfig,
                    renorm_every: int = 10, discard: float = 0.2, seed: int = 0,
                    frame=None) -> LyapunovReport:
    """Co-evolve ``m`` tangent vectors with the base flow (QR method).

    ``base`` is the starting ModalState, or a Trajectory whose final state is
    used.  The run lasts ``cfg.t_end``; the first ``discard`` fraction is
    treated as transient.  When the R diagonal underflows the renormalization
    interval is halved and the run repeated.
    """
    if isinstance(base, Trajectory):
        base = base.final
    q0 = _coeffs(base)
    if not 1 <= m <= 6 * basis.size:
        raise ValueError(f"m must lie in [1, {6 * basis.size}], got {m}")
    if not 0 <= discard < 1:
        raise ValueError("discard must lie in [0, 1)")
    if renorm_every < 1:
        raise ValueError("renorm_every must be >= 1")
    if frame is None:
        rng = np.random.default_rng(seed)
        frame = rng.standard_normal((m,) + q0.shape)
    G0, _ = _orthonormal(np.asarray(frame, dtype=float))
    stepper = TangentStepper(basis, prm, cfg)
    t_transient = discard * cfg.t_end
    every = renorm_every
    while True:
        n_renorm = max(1, int(round(cfg.t_end / (cfg.dt * every))))
        try:
            q, G, times, hist, traces = _run_frame(q0.copy(), G0.copy(), stepper, cfg, m, every,
                                                   n_renorm, t_transient)
            break
        except FloatingPointError as exc:
            if every == 1:
                raise
            log.warning("%s; renormalizing every %d steps instead", exc, every // 2)
            every //= 2
    post = times > t_transient
    if not np.any(post):
        raise ValueError("no renormalization after the transient; increase t_end")
    exponents = hist[-1]
    qm = np.cumsum(traces[post], axis=1).mean(axis=0)
    return LyapunovReport(exponents=exponents, qm=qm, kaplan_yorke=kaplan_yorke(exponents),
                          times=times, history=hist, trace_samples=traces,
                          t_transient=t_transient, renorm_every=every, dt=cfg.dt,
                          final=ModalState(q, getattr(base, "t", 0.0) + times[-1]), frame=G)


def trace_qm(base, zetas, basis: SineBasis, prm: Parameters, tol: float = 1e-8) -> float:
    """``Tr[(A + f'(base)) Gamma_m]`` for an orthonormal set ``zetas``.

    Equal to ``sum_j [-sum_i d_i ||grad zeta_j^i||^2 + int zeta_j . f'(base) zeta_j]``.
    """
    if isinstance(zetas, (list, tuple)):
        zetas = np.array([_coeffs(z) for z in zetas])
    z = np.asarray(zetas, dtype=float)
    if z.ndim == 2:
        z = z[None]
    flat = z.reshape(z.shape[0], -1)
    defect = float(np.max(np.abs(flat @ flat.T - np.eye(len(flat)))))
    if defect > tol:
        raise ValueError(f"tangent set is not orthonormal (Gram defect {defect:.3g})")
    return float(np.sum(rayleigh_quotients(base, z, basis, prm)))


@dataclass
class QmResult:
    """Ensemble estimate of ``q_m``, ``m = 1..m_max``.

    ``qm`` is the maximum over the ensemble, a lower witness of the supremum
    over the attractor.  ``m_star`` is the smallest ``m`` with ``q_m < 0``
    (None if there is none up to ``m_max``).
    """

    qm: np.ndarray
    m_star: int | None
    per_run: np.ndarray
    windows: np.ndarray
    stationarity_gap: float
    reports: list = field(repr=False, default_factory=list)
    note: str = "ensemble maximum; a lower witness of the supremum over the attractor"

    def to_dict(self) -> dict:
        return {"qm": self.qm.tolist(), "m_star": self.m_star,
                "per_run": self.per_run.tolist(), "windows": self.windows.tolist(),
                "stationarity_gap": self.stationarity_gap, "note": self.note,
                "lyapunov": [r.to_dict() for r in self.reports]}


def qm_average(bases, basis: SineBasis, prm: Parameters, cfg: IntegratorConfig,
               m_max: int = 24, renorm_every: int = 10, discard: float = 0.2,
               seed: int = 0) -> QmResult:
    """Time-averaged trace sums over the QR frame for each base state.

    ``bases`` is a ModalState, a Trajectory, or a list of them; they should
    already lie near the attractor.  With ``discard == 0`` a warning reports
    how much q_m moves when the first 20% is dropped.
    """
    if isinstance(bases, (ModalState, Trajectory)):
        bases = [bases]
    reports = [evolve_tangents(b, m_max, basis, prm, cfg, renorm_every, discard, seed + i)
               for i, b in enumerate(bases)]
    per_run = np.array([r.qm for r in reports])
    qm = per_run.max(axis=0)
    windows = np.max([r.qm_windows(2) for r in reports], axis=0)
    scale = np.maximum(np.abs(windows).max(axis=0), 1e-300)
    gap = float(np.max(np.abs(windows[0] - windows[1]) / scale))
    if discard == 0:
        late = max(np.cumsum(r.trace_samples[r.times > 0.2 * r.times[-1]], axis=1).mean(axis=0)
                   .max() for r in reports)
        shift = abs(late - qm.max()) / max(abs(qm.max()), 1e-300)
        warnings.warn(f"no transient discarded; dropping the first 20% changes max q_m by "
                      f"{shift:.2%}", RuntimeWarning, stacklevel=2)
    neg = np.nonzero(qm < 0)[0]
    m_star = int(neg[0]) + 1 if neg.size else None
    return QmResult(qm, m_star, per_run, windows, gap, reports)


# ---------------------------------------------------------------------------
# analytic bound


def _log_q3(n: int, log_K, d0: float) -> mpmath.mpf:
    s_exp = mpmath.mpf(4) / (4 - n)
    log_s = s_exp * (mpmath.log(n) + log_K - mpmath.log(2 * d0))
    return mpmath.log(d0) + log_s + mpmath.log(mpmath.mpf(4 - n) / (2 * n))


def q3_constant(n: int, delta: float, C_gn: float, q_sum, d0: float) -> Constant:
    """``max_{s>=0} K s^(n/4) - (d0/2) s`` with ``K = 5 delta (Q1+Q2) C^2``.

    Closed form: ``s* = (n K / (2 d0))^(4/(4-n))`` and
    ``Q3 = d0 s* (4-n) / (2n)``.  ``q_sum`` may be a float or a Constant
    (log-space) when Q1 + Q2 overflows.
    """
    if n not in (1, 2, 3):
        raise ValueError(f"n must be 1, 2 or 3, got {n}")
    if min(delta, C_gn, d0) <= 0:
        raise ValueError("delta, C_gn and d0 must be positive")
    formula = "d0 s* (4-n)/(2n), s* = (n K/(2 d0))^(4/(4-n)), K = 5 delta (Q1+Q2) C^2"
    if isinstance(q_sum, Constant):
        log_sum = q_sum.log
    else:
        if q_sum < 0:
            raise ValueError("Q1 + Q2 must be nonnegative")
        if q_sum == 0:
            return Constant("Q3", -mpmath.inf, formula, 0.0)
        log_sum = mpmath.log(q_sum)
    log_K = mpmath.log(5 * delta) + log_sum + 2 * mpmath.log(C_gn)
    lq = _log_q3(n, log_K, d0)
    if lq < 700:
        K = 5 * delta * float(mpmath.exp(log_sum)) * C_gn**2
        s_star = (n * K / (2 * d0)) ** (4 / (4 - n))
        return finite("Q3", d0 * s_star * (4 - n) / (2 * n), formula)
    return Constant("Q3", lq, formula)


def q3_numeric(n: int, delta: float, C_gn: float, q_sum: float, d0: float) -> float:
    """Numerical maximization of the Q3 objective (cross-check)."""
    K = 5 * delta * q_sum * C_gn**2
    if K == 0:
        return 0.0
    s_star = (n * K / (2 * d0)) ** (4 / (4 - n))

    def neg(x):
        s = s_star * math.exp(x)
        return -(K * s ** (n / 4) - 0.5 * d0 * s) / (d0 * s_star)

    res = optimize.minimize_scalar(neg, bounds=(-5.0, 5.0), method="bounded",
                                   options={"xatol": 1e-12})
    return -res.fun * d0 * s_star


@dataclass
class DimensionBound:
    """Analytic bound ``d_H <= m``, ``d_F <= 2m``.

    ``m`` is None when ``B`` exceeds float range; ``log_B`` (natural log) is
    always available.
    """

    m: int | None
    d_H: int | None
    d_F: int | None
    B: float
    log_B: mpmath.mpf
    Qstar: float
    Q3: Constant
    note: str = ("conditional on the supplied Q* and the estimated embedding and "
                 "Gagliardo-Nirenberg constants")

    def admits(self, m_star: int) -> bool:
        """Whether an empirical ``m_star`` is consistent with ``m_star <= m``."""
        if self.m is not None:
            return m_star <= self.m
        return mpmath.log(m_star) <= self.log_B

    def to_dict(self) -> dict:
        return {"m": self.m, "d_H": self.d_H, "d_F": self.d_F,
                "B": None if math.isinf(self.B) else self.B,
                "log10_B": mpmath.nstr(self.log_B / mpmath.log(10), 15),
                "Qstar": self.Qstar, "Q3": self.Q3.to_dict(), "note": self.note}


def dimension_from_B(B: float) -> int:
    """The integer ``m`` with ``m - 1 <= B < m``."""
    return int(math.floor(B)) + 1


def analytic_dimension_bound(prm: Parameters, bs: BoundSet, Qstar: float = 1.0,
                             Q3: Constant | float | None = None,
                             C_gn: float | None = None) -> DimensionBound:
    """``B = (2 (Q3 + b + k) / (d0 Q*))^(n/2) |Omega|`` and ``m = floor(B) + 1``.

    ``Q3`` defaults to :func:`q3_constant` built from ``bs`` and ``C_gn``.
    """
    if not Qstar > 0:
        raise ValueError("Qstar must be positive")
    n, V = int(bs.inputs["n"]), float(bs.inputs["volume"])
    if Q3 is None:
        if C_gn is None:
            raise ValueError("either Q3 or C_gn is required")
        q_sum = Constant("Q1+Q2", log_add(bs.log("Q1"), bs.log("Q2")), "Q1 + Q2")
        if q_sum.log < 700:
            q_sum = bs.Q1 + bs.Q2
        Q3 = q3_constant(n, bs.inputs["delta"], C_gn, q_sum, prm.d0)
    elif not isinstance(Q3, Constant):
        Q3 = finite("Q3", float(Q3), "supplied")
    bk = prm.b + prm.k
    if Q3.exact is not None and math.isfinite(Q3.exact):
        B = (2 * (Q3.exact + bk) / (prm.d0 * Qstar)) ** (n / 2) * V
        if math.isfinite(B):
            m = dimension_from_B(B)
            return DimensionBound(m, m, 2 * m, B, mpmath.log(B) if B > 0 else -mpmath.inf,
                                  Qstar, Q3)
    log_inner = log_add(Q3.log, mpmath.log(bk)) + mpmath.log(2) - mpmath.log(prm.d0 * Qstar)
    log_B = mpmath.mpf(n) / 2 * log_inner + mpmath.log(V)
    return DimensionBound(None, None, None, math.inf, log_B, Qstar, Q3)
