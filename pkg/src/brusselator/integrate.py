"""Integrating-factor time stepping of the Galerkin system.

The linear part of the Galerkin system is block diagonal in the sine basis:
mode ``j`` carries the 6x6 matrix ``L_j = -diag(d) lambda_j + J0`` with ``J0``
the reaction Jacobian at the origin.  It is integrated exactly through
``E(t) = exp(t L_j)``; the constant feed and the cubic terms, collected in
``N``, are explicit.  One step of size ``h`` is

    if_euler:  q1 = E(h) (q + h N(q))
    if_rk2:    q_half = E(h/2) (q + h/2 N(q))
               q1 = E(h) q + h E(h/2) N(q_half)

``fd_reference_simulate`` is an independent finite-difference
method-of-lines solver used as a cross-check.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import fft, linalg

from .model import Parameters, linear_reaction_matrix, reaction_pointwise
from .spectral import DomainSpec, ModalState, NormReport, SineBasis, nonlinear_galerkin, norms

log = logging.getLogger(__name__)

SCHEMES = ("if_euler", "if_rk2")
OBSERVABLES = ("norm_v2z2", "norm_y2xi2", "norm_p2th2", "norm_g2", "l4_vz", "l6_vz",
               "h1_uw", "h1_vzphpsi", "supnorm")


class BlowUpError(RuntimeError):
    """The discrete solution became non-finite; the time step is too large."""

    def __init__(self, t: float, max_norm: float, dt: float):
        super().__init__(f"non-finite state at t={t:.6g} (last finite max-norm "
                         f"{max_norm:.6g}, dt={dt:.3g}); reduce the time step")
        self.t = t
        self.max_norm = max_norm
        self.dt = dt


@dataclass
class IntegratorConfig:
    """Time stepping options.

    With ``adaptive`` each step of size ``dt`` is split into ``2**k`` equal
    substeps, the smallest ``k`` with ``substep * ||f'(g)||_inf <= tol``
    (Jacobian norm estimated from the grid values of the current state), and
    ``k`` is raised further when a step produces non-finite values.
    """

    dt: float = 0.01
    scheme: str = "if_rk2"
    t_end: float = 1.0
    sample_every: int = 1
    adaptive: bool = False
    tol: float = 0.1
    max_halvings: int = 12

    def __post_init__(self):
        errors = []
        if not self.dt > 0:
            errors.append(f"dt must be positive, got {self.dt}")
        if not self.t_end > 0:
            errors.append(f"t_end must be positive, got {self.t_end}")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            errors.append(f"sample_every must be an integer >= 1, got {self.sample_every}")
        if self.scheme not in SCHEMES:
            errors.append(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.tol > 0:
            errors.append(f"tol must be positive, got {self.tol}")
        if errors:
            raise ValueError("; ".join(errors))
        self.sample_every = int(self.sample_every)

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


@dataclass
class Trajectory:
    """Sampled observables of one run, with optional stored states."""

    times: np.ndarray
    reports: list
    g0: object
    states: np.ndarray | None = None
    state_times: np.ndarray | None = None
    final: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) and self.times[0] != 0.0:
            raise ValueError("trajectory must start at t = 0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def observable(self, name: str) -> np.ndarray:
        return np.array([r.observables()[name] for r in self.reports])

    def table(self) -> np.ndarray:
        """Rows of ``t`` followed by the observables in CSV column order."""
        if not len(self):
            return np.zeros((0, 1 + len(OBSERVABLES)))
        cols = [self.times] + [self.observable(name) for name in OBSERVABLES]
        return np.column_stack(cols)


def _if_step(q, h, nonlinear, e_half, e_full, scheme):
    if scheme == "if_euler":
        return e_full(q + h * nonlinear(q))
    half = e_half(q + 0.5 * h * nonlinear(q))
    return e_full(q) + h * e_half(nonlinear(half))


def mode_blocks(basis: SineBasis, prm: Parameters) -> np.ndarray:
    """Per-mode linear generators ``L_j``, shape ``(M_tot, 6, 6)``."""
    blocks = np.broadcast_to(linear_reaction_matrix(prm), (basis.size, 6, 6)).copy()
    idx = np.arange(6)
    blocks[:, idx, idx] -= basis.eigenvalues[:, None] * prm.diffusivities[None, :]
    return blocks


def apply_blocks(blocks: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Apply per-mode 6x6 blocks to modal arrays of shape ``(..., 6, M_tot)``."""
    return np.einsum("jab,...bj->...aj", blocks, q)


def reaction_jacobian_bound(grid_uvwz: np.ndarray, prm: Parameters) -> float:
    """Max over grid points of the row-sum norm of the reaction Jacobian."""
    u, v, w, z = grid_uvwz
    p = prm
    rows = []
    for a, c in ((u, v), (w, z)):
        uv2 = 2 * a * c
        a2 = a * a
        rows.append(np.abs(uv2 - p.b - p.k - p.D1) + a2 + p.N + p.D1)
        rows.append(np.abs(p.b - uv2) + a2 + 2 * p.D2)
    const = p.k + p.lam + p.N + 2 * p.D3
    return float(max(const, max(np.max(r) for r in rows)))


class GalerkinStepper:
    """Advances modal arrays of shape ``(..., 6, M_tot)`` by one step."""

    def __init__(self, basis: SineBasis, prm: Parameters, cfg: IntegratorConfig):
        self.basis = basis
        self.prm = prm
        self.cfg = cfg
        self.blocks = mode_blocks(basis, prm)
        self._props = {}

    def propagators(self, h: float):
        """``(E(h/2), E(h))`` as callables on modal arrays."""
        if h not in self._props:
            half = linalg.expm(0.5 * h * self.blocks)
            full = linalg.expm(h * self.blocks)
            self._props[h] = (lambda q: apply_blocks(half, q), lambda q: apply_blocks(full, q))
        return self._props[h]

    def nonlinear(self, q):
        return nonlinear_galerkin(q, self.basis, self.prm, linear=False)

    def substeps(self, q) -> int:
        if not self.cfg.adaptive:
            return 1
        jb = reaction_jacobian_bound(self.basis.to_grid(q[[0, 1, 3, 4]]), self.prm)
        k = max(0, int(np.ceil(np.log2(self.cfg.dt * jb / self.cfg.tol))))
        return 2**k

    def advance(self, q, t: float):
        """One macro step of size ``dt``; returns ``(q_new, n_substeps)``."""
        cfg = self.cfg
        n_sub = self.substeps(q)
        for _ in range(cfg.max_halvings + 1):
            h = cfg.dt / n_sub
            half, full = self.propagators(h)
            x = q
            with np.errstate(over="ignore", invalid="ignore"):
                for _ in range(n_sub):
                    x = _if_step(x, h, self.nonlinear, half, full, cfg.scheme)
            if np.all(np.isfinite(x)):
                return x, n_sub
            if not cfg.adaptive:
                break
            n_sub *= 2
        max_norm = float(np.max(np.abs(self.basis.to_grid(q))))
        raise BlowUpError(t, max_norm, cfg.dt / n_sub)


def galerkin_rhs(ms, basis: SineBasis, prm: Parameters) -> np.ndarray:
    """``dq/dt = -d_i lambda_j q + P_m f(g_m)`` for modal arrays."""
    q = np.asarray(ms.coeffs if isinstance(ms, ModalState) else ms, dtype=float)
    return apply_blocks(mode_blocks(basis, prm), q) + nonlinear_galerkin(q, basis, prm,
                                                                          linear=False)


def step(ms, basis: SineBasis, prm: Parameters, cfg: IntegratorConfig):
    """Advance by one step of ``cfg.dt``; returns the same kind as the input."""
    stepper = GalerkinStepper(basis, prm, cfg)
    if isinstance(ms, ModalState):
        q, _ = stepper.advance(ms.coeffs, ms.t)
        return ModalState(q, ms.t + cfg.dt)
    q, _ = stepper.advance(np.asarray(ms, dtype=float), 0.0)
    return q


def simulate(g0: ModalState, basis: SineBasis, prm: Parameters, cfg: IntegratorConfig,
             store_every: int | None = None) -> Trajectory:
    """Integrate from ``g0`` to ``g0.t + cfg.t_end``.

    Norms are sampled every ``cfg.sample_every`` steps and full states every
    ``store_every`` steps (never, if None).  Sample times are measured from
    the start of this run.
    """
    if g0.coeffs.shape != (6, basis.size):
        raise ValueError(f"initial state shape {g0.coeffs.shape} does not match basis "
                         f"size {basis.size}")
    stepper = GalerkinStepper(basis, prm, cfg)
    q = g0.coeffs.copy()
    times, reports = [0.0], [norms(q, basis)]
    states, state_times = ([q.copy()], [0.0]) if store_every else (None, None)
    substeps = 0
    for i in range(1, cfg.n_steps + 1):
        q, n_sub = stepper.advance(q, g0.t + (i - 1) * cfg.dt)
        substeps += n_sub
        t = i * cfg.dt
        if i % cfg.sample_every == 0:
            times.append(t)
            reports.append(norms(q, basis))
        if store_every and i % store_every == 0:
            states.append(q.copy())
            state_times.append(t)
    return Trajectory(
        times=np.array(times), reports=reports, g0=g0,
        states=None if states is None else np.array(states),
        state_times=None if state_times is None else np.array(state_times),
        final=ModalState(q, g0.t + cfg.n_steps * cfg.dt),
        meta={"substeps": substeps, "steps": cfg.n_steps, "t0": g0.t})


def random_initial_state(basis: SineBasis, rho: float, rng: np.random.Generator,
                         exact_norm: bool = False) -> ModalState:
    """Random smooth data in the ball ``||g0|| <= rho``.

    Coefficients are i.i.d. normal damped by ``|j|^-2`` and rescaled; the
    radius is drawn uniformly in volume unless ``exact_norm``.
    """
    k2 = np.sum(basis.wavenumbers**2, axis=1).astype(float)
    c = rng.standard_normal((6, basis.size)) / k2
    radius = rho if exact_norm else rho * rng.uniform() ** (1.0 / c.size)
    return ModalState(c * (radius / np.linalg.norm(c)))


# ---------------------------------------------------------------------------
# finite-difference reference solver


def fd_grid(dom: DomainSpec, nodes: int):
    """Interior nodes of a uniform grid with ``nodes`` points per axis
    (boundary nodes included in the count)."""
    return [np.arange(1, nodes - 1) * L / (nodes - 1) for L in dom.lengths]


def _fd_norms(x: np.ndarray, spacing) -> NormReport:
    n = len(spacing)
    cell = float(np.prod(spacing))
    axes = tuple(range(1, 1 + n))

    def integral(f):
        return cell * f.sum(axis=axes)

    sq = x * x
    h1 = np.zeros(6)
    for i, h in enumerate(spacing):
        pad = [(0, 0)] + [(1, 1) if j == i else (0, 0) for j in range(n)]
        xp = np.pad(x, pad)
        diff = np.diff(xp, axis=1 + i) / h
        # forward differences over all P + 1 cells, boundary cells included
        h1 += cell * (diff * diff).sum(axis=axes)
    g = x
    y = g[0] + g[1] + g[3] + g[4]
    xi = g[2] + g[5]
    p = g[0] + g[1] - g[3] - g[4]
    th = g[2] - g[5]
    return NormReport(l2=integral(sq), h1=h1, l4=integral(sq * sq), l6=integral(sq**3),
                      y2=float(cell * np.sum(y * y)), xi2=float(cell * np.sum(xi * xi)),
                      p2=float(cell * np.sum(p * p)), theta2=float(cell * np.sum(th * th)),
                      supnorm=float(np.max(np.abs(x))))


def fd_reference_simulate(g0_field, dom: DomainSpec, prm: Parameters, cfg: IntegratorConfig,
                          store_every: int | None = None) -> Trajectory:
    """Method of lines with the second-order centred Laplacian.

    ``g0_field`` holds the six components at the interior nodes of a uniform
    grid (shape ``(6, P, ..., P)``; the boundary values are zero).  The
    discrete Laplacian is diagonalized by an orthonormal DST-I and the same
    integrating-factor scheme is applied in that eigenbasis.
    """
    x = np.array(g0_field, dtype=float)
    n = dom.n
    if x.ndim != 1 + n or x.shape[0] != 6:
        raise ValueError(f"expected a (6, P{', P' * (n - 1)}) field, got {x.shape}")
    P = x.shape[1:]
    spacing = [L / (p + 1) for L, p in zip(dom.lengths, P)]
    mu = np.zeros(P)
    for i, (p, h) in enumerate(zip(P, spacing)):
        k = np.arange(1, p + 1)
        shape = [1] * n
        shape[i] = p
        mu = mu + (4.0 / h**2 * np.sin(k * np.pi / (2 * (p + 1))) ** 2).reshape(shape)
    rates = prm.diffusivities.reshape((6,) + (1,) * n) * mu
    axes = tuple(range(1, 1 + n))
    cache = {}

    def propagate(f, h, which):
        if h not in cache:
            cache[h] = (np.exp(-0.5 * h * rates), np.exp(-h * rates))
        return fft.idstn(cache[h][which] * fft.dstn(f, type=1, axes=axes, norm="ortho"),
                         type=1, axes=axes, norm="ortho")

    def nonlinear(f):
        return reaction_pointwise(f, prm)

    dt = cfg.dt
    times, reports = [0.0], [_fd_norms(x, spacing)]
    states, state_times = ([x.copy()], [0.0]) if store_every else (None, None)
    for i in range(1, cfg.n_steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            if cfg.scheme == "if_euler":
                x_new = propagate(x + dt * nonlinear(x), dt, 1)
            else:
                half = propagate(x + 0.5 * dt * nonlinear(x), dt, 0)
                x_new = propagate(x, dt, 1) + dt * propagate(nonlinear(half), dt, 0)
        if not np.all(np.isfinite(x_new)):
            raise BlowUpError((i - 1) * dt, float(np.max(np.abs(x))), dt)
        x = x_new
        if i % cfg.sample_every == 0:
            times.append(i * dt)
            reports.append(_fd_norms(x, spacing))
        if store_every and i % store_every == 0:
            states.append(x.copy())
            state_times.append(i * dt)
    return Trajectory(times=np.array(times), reports=reports, g0=np.array(g0_field),
                      states=None if states is None else np.array(states),
                      state_times=None if state_times is None else np.array(state_times),
                      final=x, meta={"method": "finite-difference", "nodes": [p + 2 for p in P]})
