"""Dirichlet sine-basis Galerkin discretization on boxes.

Coefficient arrays have shape ``(..., 6, M_tot)``: the six components on the
second-to-last axis and the modes on the last one, flattened in C order of
the per-axis index tuple ``(j_1, ..., j_n)``.  Physical fields live on the
interior nodes ``x_k = k L / (P + 1)``, ``k = 1..P`` of each axis.

Products of an even number of sine modes are cosine polynomials, and the
trapezoid rule on ``P + 1`` intervals integrates ``cos(q pi x / L)`` exactly
for ``q < 2 (P + 1)``.  Cubic terms projected on a mode have degree ``4M``,
so ``P = 2M + 1`` makes the projection exact; sixth powers need ``P >= 3M``.
Terms of odd degree (the constant feed) are integrated in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .model import Parameters, linear_reaction_matrix

DEFAULT_MEMORY_BUDGET = 2 * 1024**3


class ResourceError(MemoryError):
    """Requested discretization does not fit the memory budget."""


@dataclass(frozen=True)
class DomainSpec:
    lengths: tuple

    def __post_init__(self):
        lengths = tuple(float(x) for x in np.atleast_1d(self.lengths))
        if not 1 <= len(lengths) <= 3:
            raise ValueError(f"spatial dimension must be 1, 2 or 3, got {len(lengths)}")
        if any(not (np.isfinite(x) and x > 0) for x in lengths):
            raise ValueError(f"box lengths must be positive, got {lengths}")
        object.__setattr__(self, "lengths", lengths)

    @property
    def n(self) -> int:
        return len(self.lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))


@dataclass
class ModalState:
    """Six blocks of sine coefficients at time ``t``."""

    coeffs: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != 6:
            raise ValueError(f"modal state must have shape (6, M_tot), got {self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("modal state has non-finite coefficients")

    def copy(self) -> "ModalState":
        return ModalState(self.coeffs.copy(), self.t)


def _apply_axes(x: np.ndarray, mats, n: int) -> np.ndarray:
    """Apply ``mats[i]`` along the i-th of the last ``n`` axes of ``x``."""
    if n == 1:
        return x @ mats[0].T
    for i, mat in enumerate(mats):
        ax = x.ndim - n + i
        x = np.moveaxis(np.moveaxis(x, ax, -1) @ mat.T, -1, ax)
    return x


class SineBasis:
    """Tensor-product Dirichlet eigenfunctions with ``M`` modes per axis.

    ``e_j(x) = prod_i sqrt(2/L_i) sin(j_i pi x_i / L_i)`` with eigenvalue
    ``pi^2 sum_i (j_i / L_i)^2``.  ``order`` enumerates modes by increasing
    eigenvalue, ties broken lexicographically by index tuple.
    """

    def __init__(self, domain: DomainSpec, M: int, memory_budget: int = DEFAULT_MEMORY_BUDGET):
        if int(M) != M or M < 1:
            raise ValueError(f"mode count must be a positive integer, got {M!r}")
        self.domain = domain
        self.M = int(M)
        self.n = domain.n
        self.shape = (self.M,) * self.n
        self.size = self.M**self.n
        self.dealias_points = 2 * self.M + 1
        self.fine_points = 3 * self.M + 1

        # grids, transform matrices and a handful of work arrays
        need = 8 * (40 * 6 * self.fine_points**self.n
                    + 4 * self.n * self.fine_points * self.M)
        if need > memory_budget:
            raise ResourceError(
                f"M={self.M} in {self.n}D needs ~{need / 2**20:.0f} MiB, "
                f"budget is {memory_budget / 2**20:.0f} MiB")

        idx = np.indices(self.shape).reshape(self.n, -1).T + 1
        self.wavenumbers = idx
        lengths = np.array(domain.lengths)
        self.eigenvalues = np.pi**2 * np.sum((idx / lengths) ** 2, axis=1)
        self.order = np.argsort(self.eigenvalues, kind="stable")
        self.gamma = float(np.pi**2 * np.sum(1.0 / lengths**2))

        per_axis = [np.sqrt(2.0 / L) * L * (1 - (-1.0) ** j) / (j * np.pi)
                    for L, j in zip(lengths, idx.T)]
        self.integrals = np.prod(per_axis, axis=0)

        self._mats = {}
        for P in (self.dealias_points, self.fine_points):
            defect = max(np.max(np.abs(a @ s - np.eye(self.M)))
                         for a, s in zip(self.analysis(P), self.synthesis(P)))
            if defect > 1e-12:
                raise RuntimeError(f"discrete transform not orthonormal (defect {defect:.2e})")

    def __repr__(self):
        return f"SineBasis(lengths={self.domain.lengths}, M={self.M})"

    @property
    def volume(self) -> float:
        return self.domain.volume

    def descriptor(self) -> dict:
        return {"n": self.n, "M": self.M, "lengths": list(self.domain.lengths)}

    def _matrices(self, P: int):
        if P not in self._mats:
            j = np.arange(1, self.M + 1)
            k = np.arange(1, P + 1)
            arg = np.pi * np.outer(k, j) / (P + 1)
            syn, ana, der = [], [], []
            for L in self.domain.lengths:
                c = np.sqrt(2.0 / L)
                s = c * np.sin(arg)
                syn.append(s)
                ana.append((L / (P + 1)) * s.T)
                der.append(c * (j * np.pi / L) * np.cos(arg))
            self._mats[P] = (syn, ana, der)
        return self._mats[P]

    def synthesis(self, P: int):
        return self._matrices(P)[0]

    def analysis(self, P: int):
        return self._matrices(P)[1]

    def grid(self, P: int | None = None):
        """Interior node coordinates per axis."""
        P = self.dealias_points if P is None else P
        return [np.arange(1, P + 1) * L / (P + 1) for L in self.domain.lengths]

    def cell_volume(self, P: int) -> float:
        return float(np.prod([L / (P + 1) for L in self.domain.lengths]))

    def to_grid(self, coeffs, P: int | None = None) -> np.ndarray:
        """Evaluate a modal array on the ``P``-point interior grid."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] != self.size:
            raise ValueError(f"last axis must have {self.size} modes, got {coeffs.shape}")
        P = self.dealias_points if P is None else P
        x = coeffs.reshape(coeffs.shape[:-1] + self.shape)
        return _apply_axes(x, self.synthesis(P), self.n)

    def to_modes(self, field) -> np.ndarray:
        """L2 projection of a grid field onto the basis (exact on the span)."""
        field = np.asarray(field, dtype=float)
        P = field.shape[-1]
        if field.shape[field.ndim - self.n:] != (P,) * self.n:
            raise ValueError(f"field shape {field.shape} is not a {self.n}D cubic grid")
        if P < self.M:
            raise ValueError(f"a {P}-point grid cannot resolve {self.M} modes per axis")
        x = _apply_axes(field, self.analysis(P), self.n)
        return x.reshape(x.shape[:-self.n] + (self.size,))

    def gradient_grid(self, coeffs, P: int | None = None) -> list:
        """Partial derivatives of a modal array on the interior grid."""
        coeffs = np.asarray(coeffs, dtype=float)
        P = self.dealias_points if P is None else P
        syn, _, der = self._matrices(P)
        x = coeffs.reshape(coeffs.shape[:-1] + self.shape)
        return [_apply_axes(x, [der[i] if i == a else syn[i] for i in range(self.n)], self.n)
                for a in range(self.n)]

    def integrate(self, values, P: int | None = None) -> np.ndarray:
        """Trapezoid rule over the last ``n`` axes (boundary values are zero)."""
        values = np.asarray(values)
        P = values.shape[-1] if P is None else P
        axes = tuple(range(values.ndim - self.n, values.ndim))
        return self.cell_volume(P) * values.sum(axis=axes)


def build_basis(dom: DomainSpec, M: int, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> SineBasis:
    return SineBasis(dom, M, memory_budget)


def to_grid(ms, basis: SineBasis, P: int | None = None) -> np.ndarray:
    coeffs = ms.coeffs if isinstance(ms, ModalState) else ms
    return basis.to_grid(coeffs, P)


def to_modes(field, basis: SineBasis, t: float = 0.0) -> ModalState:
    coeffs = basis.to_modes(field)
    if coeffs.ndim != 2 or coeffs.shape[0] != 6:
        raise ValueError(f"expected a six-component field, got modal shape {coeffs.shape}")
    return ModalState(coeffs, t)


def cubic_projection(q: np.ndarray, basis: SineBasis) -> np.ndarray:
    """Modal coefficients of ``(u^2 v, w^2 z)``, shape ``(..., 2, M_tot)``."""
    g = basis.to_grid(q[..., [0, 1, 3, 4], :])
    u, v, w, z = np.moveaxis(g, -1 - basis.n, 0)
    prod = np.stack([u * u * v, w * w * z], axis=-1 - basis.n)
    return basis.to_modes(prod)


def nonlinear_galerkin(q, basis: SineBasis, prm: Parameters, linear: bool = True) -> np.ndarray:
    """Coefficients of ``P_m f(g_m)`` for modal arrays of shape ``(..., 6, M_tot)``.

    With ``linear=False`` the part linear in ``g`` is left out, leaving the
    constant feed and the cubic terms.
    """
    q = np.asarray(q.coeffs if isinstance(q, ModalState) else q, dtype=float)
    out = linear_reaction_matrix(prm) @ q if linear else np.zeros_like(q)
    out[..., 0, :] += prm.a * basis.integrals
    out[..., 3, :] += prm.a * basis.integrals
    c = cubic_projection(q, basis)
    out[..., 0, :] += c[..., 0, :]
    out[..., 1, :] -= c[..., 0, :]
    out[..., 3, :] += c[..., 1, :]
    out[..., 4, :] -= c[..., 1, :]
    return out


@dataclass
class NormReport:
    """Norms of one modal state.

    Per-component arrays are in ``(u, v, phi, w, z, psi)`` order; ``l4``
    and ``l6`` hold the integrals of the fourth and sixth powers.
    """

    l2: np.ndarray
    h1: np.ndarray
    l4: np.ndarray
    l6: np.ndarray
    y2: float
    xi2: float
    p2: float
    theta2: float
    supnorm: float

    @property
    def vz2(self) -> float:
        return float(self.l2[1] + self.l2[4])

    @property
    def grad_uw2(self) -> float:
        return float(self.h1[0] + self.h1[3])

    @property
    def grad_vz2(self) -> float:
        return float(self.h1[1] + self.h1[4])

    @property
    def grad_phipsi2(self) -> float:
        return float(self.h1[2] + self.h1[5])

    @property
    def g2(self) -> float:
        return float(self.l2.sum())

    def observables(self) -> dict:
        """The fixed set of trajectory observables (CSV column order)."""
        return {
            "norm_v2z2": self.vz2,
            "norm_y2xi2": self.y2 + self.xi2,
            "norm_p2th2": self.p2 + self.theta2,
            "norm_g2": self.g2,
            "l4_vz": float(self.l4[1] + self.l4[4]),
            "l6_vz": float(self.l6[1] + self.l6[4]),
            "h1_uw": self.grad_uw2,
            "h1_vzphpsi": self.grad_vz2 + self.grad_phipsi2,
            "supnorm": self.supnorm,
        }


def norms(ms, basis: SineBasis) -> NormReport:
    q = np.asarray(ms.coeffs if isinstance(ms, ModalState) else ms, dtype=float)
    l2 = np.sum(q * q, axis=-1)
    h1 = q * q @ basis.eigenvalues
    g = basis.to_grid(q, basis.fine_points)
    sq = g * g
    with np.errstate(over="ignore"):
        # large but finite states report infinite high moments
        l4 = basis.integrate(sq * sq)
        l6 = basis.integrate(sq * sq * sq)
    y = q[0] + q[1] + q[3] + q[4]
    xi = q[2] + q[5]
    p = q[0] + q[1] - q[3] - q[4]
    th = q[2] - q[5]
    return NormReport(l2=l2, h1=h1, l4=l4, l6=l6, y2=float(y @ y), xi2=float(xi @ xi),
                      p2=float(p @ p), theta2=float(th @ th),
                      supnorm=float(np.max(np.abs(g))) if g.size else 0.0)


@dataclass
class EmbeddingConstants:
    """Subspace estimates of the L4, L6 embedding and interpolation constants.

    These are lower witnesses of the continuum constants: each is the best
    ratio found over the Galerkin subspace, attained by the recorded field.
    """

    delta: float
    eta: float
    C_gn: float
    maximizers: dict = field(repr=False)
    sample_budget: int = 0
    seed: int = 0


def _ratio_functions(basis: SineBasis):
    lam = basis.eigenvalues
    n = basis.n
    Pd, Pf = basis.dealias_points, basis.fine_points

    def moments(c, P, power):
        g = basis.to_grid(c, P)
        val = basis.integrate(g**power)
        grad = power * basis.to_modes(g ** (power - 1))
        return val, grad

    def log_delta(c):
        i4, d4 = moments(c, Pd, 4)
        G = c @ (lam * c)
        return 0.5 * np.log(i4) - np.log(G), 0.5 * d4 / i4 - 2 * lam * c / G

    def log_eta(c):
        i6, d6 = moments(c, Pf, 6)
        G = c @ (lam * c)
        return np.log(i6) / 3 - np.log(G), d6 / (3 * i6) - 2 * lam * c / G

    def log_gn(c):
        i4, d4 = moments(c, Pd, 4)
        G = c @ (lam * c)
        L2 = c @ c
        val = 0.25 * np.log(i4) - n / 8 * np.log(G) - (4 - n) / 8 * np.log(L2)
        return val, 0.25 * d4 / i4 - n / 4 * lam * c / G - (4 - n) / 4 * c / L2

    def batch(C):
        g4 = basis.to_grid(C, Pd)
        g6 = basis.to_grid(C, Pf)
        i4 = basis.integrate(g4**4)
        i6 = basis.integrate(g6**6)
        G = (C * C) @ lam
        L2 = np.sum(C * C, axis=-1)
        return {
            "delta": 0.5 * np.log(i4) - np.log(G),
            "eta": np.log(i6) / 3 - np.log(G),
            "C_gn": 0.25 * np.log(i4) - n / 8 * np.log(G) - (4 - n) / 8 * np.log(L2),
        }

    return {"delta": log_delta, "eta": log_eta, "C_gn": log_gn}, batch


def embedding_constants(basis: SineBasis, sample_budget: int = 1000, seed: int = 0,
                        n_refine: int = 4) -> EmbeddingConstants:
    """Estimate the best constants in

    ``||f||_{L4}^2 <= delta ||grad f||^2``, ``||f||_{L6}^2 <= eta ||grad f||^2`` and
    ``||f||_{L4} <= C ||grad f||^{n/4} ||f||^{1-n/4}``

    over the span of the basis: random fields with random spectral decay,
    every single mode, then gradient ascent from the best candidates.
    """
    if basis.size < 1:
        raise ValueError("degenerate basis")
    if sample_budget < 1000:
        raise ValueError(f"sample_budget must be at least 1000, got {sample_budget}")
    rng = np.random.default_rng(seed)
    funcs, batch = _ratio_functions(basis)

    k2 = np.sum(basis.wavenumbers**2, axis=1)
    decay = rng.uniform(0.0, 3.0, size=(sample_budget, 1))
    C = rng.standard_normal((sample_budget, basis.size)) * (1.0 + k2) ** (-decay / 2)
    C = np.vstack([C, np.eye(basis.size)])
    scores = batch(C)

    results, maximizers = {}, {}
    for name, fun in funcs.items():
        starts = np.argsort(scores[name])[::-1][:n_refine]
        best_val, best_c = -np.inf, None
        for s in starts:
            res = optimize.minimize(lambda c: tuple(-x for x in fun(c)), C[s], jac=True,
                                    method="L-BFGS-B", options={"maxiter": 500, "gtol": 1e-12, "ftol": 1e-15})
            c = res.x if -res.fun >= scores[name][s] else C[s]
            val = fun(c)[0]
            if val > best_val:
                best_val, best_c = val, c / np.linalg.norm(c)
        results[name] = float(np.exp(best_val))
        maximizers[name] = best_c
    return EmbeddingConstants(delta=results["delta"], eta=results["eta"], C_gn=results["C_gn"],
                              maximizers=maximizers, sample_budget=sample_budget, seed=seed)
