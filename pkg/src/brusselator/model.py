"""Parameters, pointwise reaction law and the grouped change of variables.

Component order everywhere is ``(u, v, phi, w, z, psi)``: two compartments
``(u, v, phi)`` and ``(w, z, psi)`` coupled linearly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

COMPONENTS = ("u", "v", "phi", "w", "z", "psi")
# (u, v, phi) <-> (w, z, psi)
SWAP = np.array([3, 4, 5, 0, 1, 2])

PRIMARY_FIELDS = ("d1", "d2", "d3", "D1", "D2", "D3", "a", "b", "k", "lam", "N")


@dataclass(frozen=True)
class Parameters:
    """The eleven positive coefficients of the extended Brusselator system.

    ``lam`` is the removal rate of the product (``lambda`` is reserved).
    The derived scalars ``mu = k/N``, ``d = min(d1, d3)`` and
    ``d0 = min(d1, d2, d3)`` are computed once at construction.

    ``allow_zero_feed`` admits ``a = 0``, the limit in which the origin is
    an equilibrium; every other coefficient must stay strictly positive.
    """

    d1: float = 1.0
    d2: float = 1.0
    d3: float = 1.0
    D1: float = 0.1
    D2: float = 0.1
    D3: float = 0.1
    a: float = 1.0
    b: float = 2.0
    k: float = 1.0
    lam: float = 1.0
    N: float = 1.0
    allow_zero_feed: bool = field(default=False, repr=False, compare=False)
    mu: float = field(init=False, repr=False, compare=False)
    d: float = field(init=False, repr=False, compare=False)
    d0: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        def ok(name):
            x = getattr(self, name)
            if name == "a" and self.allow_zero_feed:
                return np.isfinite(x) and x >= 0
            return np.isfinite(x) and x > 0

        bad = [name for name in PRIMARY_FIELDS if not ok(name)]
        if bad:
            raise ValueError(
                "parameters must be finite and strictly positive: "
                + ", ".join(f"{n}={getattr(self, n)!r}" for n in bad))
        for name in PRIMARY_FIELDS:
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "mu", self.k / self.N)
        object.__setattr__(self, "d", min(self.d1, self.d3))
        object.__setattr__(self, "d0", min(self.d1, self.d2, self.d3))

    @property
    def diffusivities(self) -> np.ndarray:
        """Diffusion coefficient of each of the six components."""
        return np.array([self.d1, self.d2, self.d3, self.d1, self.d2, self.d3])

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in PRIMARY_FIELDS}

    def replace(self, **changes) -> "Parameters":
        values = self.as_dict()
        values["allow_zero_feed"] = self.allow_zero_feed
        values.update(changes)
        return Parameters(**values)


class PointState(NamedTuple):
    u: float
    v: float
    phi: float
    w: float
    z: float
    psi: float


@dataclass(frozen=True)
class GroupedView:
    """Sums and differences across compartments, plus their rescalings.

    ``Xi = xi / mu`` and ``Theta = theta / mu``.
    """

    y: np.ndarray
    xi: np.ndarray
    p: np.ndarray
    theta: np.ndarray
    mu: float

    @property
    def Xi(self):
        return self.xi / self.mu

    @property
    def Theta(self):
        return self.theta / self.mu


def _as_components(s) -> np.ndarray:
    arr = np.asarray(s, dtype=float)
    if arr.shape[:1] != (6,):
        raise ValueError(f"expected 6 components along the first axis, got shape {arr.shape}")
    for i, name in enumerate(COMPONENTS):
        if not np.all(np.isfinite(arr[i])):
            raise ValueError(f"non-finite value in component {name!r}")
    return arr


def reaction_pointwise(s: Sequence, prm: Parameters) -> np.ndarray:
    """Evaluate the reaction terms f(g) at one point or over a field.

    ``s`` is anything array-like with the six components on the first axis;
    the remaining axes (if any) are treated pointwise.
    """
    u, v, phi, w, z, psi = _as_components(s)
    p = prm
    u2v = u * u * v
    w2z = w * w * z
    return np.array([
        p.a - (p.b + p.k) * u + u2v + p.D1 * (w - u) + p.N * phi,
        p.b * u - u2v + p.D2 * (z - v),
        p.k * u - (p.lam + p.N) * phi + p.D3 * (psi - phi),
        p.a - (p.b + p.k) * w + w2z + p.D1 * (u - w) + p.N * psi,
        p.b * w - w2z + p.D2 * (v - z),
        p.k * w - (p.lam + p.N) * psi + p.D3 * (phi - psi),
    ])


def linear_reaction_matrix(prm: Parameters) -> np.ndarray:
    """Constant 6x6 part of the reaction Jacobian (its value at the origin)."""
    p = prm
    m = np.zeros((6, 6))
    for off, other in ((0, 3), (3, 0)):
        m[off, off] = -(p.b + p.k) - p.D1
        m[off, off + 2] = p.N
        m[off, other] = p.D1
        m[off + 1, off] = p.b
        m[off + 1, off + 1] = -p.D2
        m[off + 1, other + 1] = p.D2
        m[off + 2, off] = p.k
        m[off + 2, off + 2] = -(p.lam + p.N) - p.D3
        m[off + 2, other + 2] = p.D3
    return m


def reaction_jacobian_pointwise(s: Sequence, prm: Parameters) -> np.ndarray:
    """Jacobian of :func:`reaction_pointwise`, shape ``(6, 6) + s.shape[1:]``."""
    u, v, _, w, z, _ = _as_components(s)
    base = linear_reaction_matrix(prm)
    jac = np.broadcast_to(base.reshape((6, 6) + (1,) * u.ndim),
                          (6, 6) + u.shape).copy()
    jac[0, 0] += 2 * u * v
    jac[0, 1] += u * u
    jac[1, 0] -= 2 * u * v
    jac[1, 1] -= u * u
    jac[3, 3] += 2 * w * z
    jac[3, 4] += w * w
    jac[4, 3] -= 2 * w * z
    jac[4, 4] -= w * w
    return jac


def swap(s):
    """Exchange the two compartments, (u, v, phi) <-> (w, z, psi)."""
    return np.asarray(s)[SWAP]


def group_forward(s, prm: Parameters) -> GroupedView:
    u, v, phi, w, z, psi = _as_components(s)
    return GroupedView(y=u + v + w + z, xi=phi + psi, p=u + v - w - z,
                       theta=phi - psi, mu=prm.mu)


def group_inverse(gv: GroupedView, v, z):
    """Recover ``(u, w, phi, psi)`` from the grouped view and ``(v, z)``."""
    plus = gv.y - v - z      # u + w
    minus = gv.p - v + z     # u - w
    return (0.5 * (plus + minus), 0.5 * (plus - minus),
            0.5 * (gv.xi + gv.theta), 0.5 * (gv.xi - gv.theta))


def default_parameters() -> Parameters:
    return Parameters()


__all__ = [
    "COMPONENTS", "Parameters", "PointState", "GroupedView", "reaction_pointwise",
    "reaction_jacobian_pointwise", "linear_reaction_matrix", "swap",
    "group_forward", "group_inverse", "default_parameters",
]
