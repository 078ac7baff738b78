"""Energy densities on flattened derivative vectors.

A material pairs a *selector*, the list of ``(component, multi-index)``
derivatives it consumes, with an energy density of that vector.  All
evaluations are batched: ``grad`` has shape ``(N, n_s)`` and the methods
return ``(N,)``, ``(N, n_s)`` and ``(N, n_s, n_s)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvertedElement


def gradient_selector(n_comp, dim):
    """``(c, e_k)`` pairs ordered ``u_x, u_y, ..., v_x, ...`` (component-major, axis x first)."""
    out = []
    for c in range(n_comp):
        for k in range(dim):
            ix = [0] * dim
            ix[k] = 1
            out.append((c, tuple(ix)))
    return tuple(out)


@dataclass(frozen=True)
class QuadraticMaterial:
    """Energy ``1/2 g^T D g`` with a constant symmetric ``D``."""

    selector: tuple
    D: np.ndarray
    n_comp: int = 1

    def __post_init__(self):
        D = np.asarray(self.D, dtype=float)
        if D.shape != (len(self.selector),) * 2:
            raise ValueError("D must be square with one row per selected derivative")
        if not np.allclose(D, D.T, rtol=0, atol=1e-14 * max(1.0, np.abs(D).max())):
            raise ValueError("D must be symmetric")
        object.__setattr__(self, "D", D)

    linear = True

    @property
    def stiffness_scale(self) -> float:
        return float(np.abs(np.diag(self.D)).max())

    def energy(self, g):
        return 0.5 * np.einsum("na,ab,nb->n", g, self.D, g)

    def first_derivative(self, g):
        return g @ self.D

    def second_derivative(self, g):
        return np.broadcast_to(self.D, (np.shape(g)[0],) + self.D.shape)


def poisson(dim, conductivity=1.0) -> QuadraticMaterial:
    """``1/2 k |grad u|^2`` on a scalar field."""
    return QuadraticMaterial(gradient_selector(1, dim), conductivity * np.eye(dim))


def plane_stress_D(E, nu) -> QuadraticMaterial:
    """Plane stress on ``(u_x, u_y, v_x, v_y)``."""
    if E <= 0 or not -1 < nu < 0.5:
        raise ValueError("need E > 0 and -1 < nu < 0.5")
    g = (1 - nu) / 2
    D = E / (1 - nu**2) * np.array([[1, 0, 0, nu], [0, g, g, 0], [0, g, g, 0], [nu, 0, 0, 1]])
    return QuadraticMaterial(gradient_selector(2, 2), D, n_comp=2)


def plane_strain_D(E, nu) -> QuadraticMaterial:
    """Plane strain on ``(u_x, u_y, v_x, v_y)``."""
    if E <= 0 or not -1 < nu < 0.5:
        raise ValueError("need E > 0 and -1 < nu < 0.5")
    g = 0.5 - nu
    D = E / ((1 - 2 * nu) * (1 + nu)) * np.array(
        [[1 - nu, 0, 0, nu], [0, g, g, 0], [0, g, g, 0], [nu, 0, 0, 1 - nu]])
    return QuadraticMaterial(gradient_selector(2, 2), D, n_comp=2)


def elastic3d_D(lam, mu) -> QuadraticMaterial:
    """Isotropic small-strain elasticity on ``(u_x, u_y, u_z, v_x, ..., w_z)``."""
    if mu <= 0 or 3 * lam + 2 * mu <= 0:
        raise ValueError("moduli outside the stable range")
    D = np.zeros((9, 9))
    for a in (0, 4, 8):
        for b in (0, 4, 8):
            D[a, b] = lam
        D[a, a] = lam + 2 * mu
    for a, b in ((1, 3), (2, 6), (5, 7)):
        D[a, a] = D[b, b] = D[a, b] = D[b, a] = mu
    return QuadraticMaterial(gradient_selector(3, 3), D, n_comp=3)


PLATE_SELECTOR = ((0, (0, 2)), (0, (2, 0)), (0, (1, 1)))


def plate_D(E, nu, t) -> QuadraticMaterial:
    """Kirchhoff plate bending on ``(w_yy, w_xx, w_xy)``."""
    if E <= 0 or t <= 0 or not -1 < nu < 1:
        raise ValueError("need E > 0, t > 0 and -1 < nu < 1")
    d0 = E * t**3 / (12 * (1 - nu**2))
    D = d0 * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, 2 - 2 * nu]])
    return QuadraticMaterial(PLATE_SELECTOR, D)


def cofactor(F):
    """Cofactor of flattened row-major 3x3 matrices, i.e. ``dJ/dF``."""
    F = np.asarray(F)
    f1, f2, f3, f4, f5, f6, f7, f8, f9 = np.moveaxis(F, -1, 0)
    return np.stack([
        f5 * f9 - f6 * f8, f6 * f7 - f4 * f9, f4 * f8 - f5 * f7,
        f3 * f8 - f2 * f9, f1 * f9 - f3 * f7, f2 * f7 - f1 * f8,
        f2 * f6 - f3 * f5, f3 * f4 - f1 * f6, f1 * f5 - f2 * f4,
    ], axis=-1)


def det_hessian(F):
    """``d^2 J / dF dF`` for flattened ``F``, shape ``(..., 9, 9)``."""
    F = np.asarray(F)
    f = [F[..., k] for k in range(9)]
    z = np.zeros_like(f[0])
    f1, f2, f3, f4, f5, f6, f7, f8, f9 = f
    rows = [
        [z, z, z, z, f9, -f8, z, -f6, f5],
        [z, z, z, -f9, z, f7, f6, z, -f4],
        [z, z, z, f8, -f7, z, -f5, f4, z],
        [z, -f9, f8, z, z, z, z, f3, -f2],
        [f9, z, -f7, z, z, z, -f3, z, f1],
        [-f8, f7, z, z, z, z, f2, -f1, z],
        [z, f6, -f5, z, -f3, f2, z, z, z],
        [-f6, z, f4, f3, z, -f1, z, z, z],
        [f5, -f4, z, -f2, f1, z, z, z, z],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


_IDENTITY9 = np.eye(3).ravel()


@dataclass(frozen=True)
class NeoHooke:
    """Nearly incompressible Neo-Hooke, ``kappa/2 (J-1)^2 + mu/2 (F:F - 3)``.

    Consumes the displacement gradient ``(u_x, u_y, u_z, v_x, ..., w_z)``;
    ``F`` is that vector plus the flattened identity.
    """

    kappa: float
    mu: float
    selector: tuple = gradient_selector(3, 3)
    n_comp: int = 3
    linear = False

    def __post_init__(self):
        if self.kappa <= 0 or self.mu <= 0:
            raise ValueError("kappa and mu must be positive")

    @property
    def stiffness_scale(self) -> float:
        # geometric mean of bulk and shear moduli: mu alone lets hourglass
        # modes invert points, kappa alone over-stiffens the block
        return float(np.sqrt(self.kappa * self.mu))

    def _F(self, g):
        F = np.asarray(g, dtype=float) + _IDENTITY9
        J = np.linalg.det(F.reshape(F.shape[:-1] + (3, 3)))
        bad = np.flatnonzero(np.atleast_1d(J) <= 0)
        if bad.size:
            raise InvertedElement(f"det F <= 0 at {bad.size} point(s), first {bad[:10].tolist()}",
                                  points=bad.tolist())
        return F, J

    def energy(self, g):
        F, J = self._F(g)
        return 0.5 * self.kappa * (J - 1) ** 2 + 0.5 * self.mu * (np.sum(F * F, axis=-1) - 3)

    def first_derivative(self, g):
        F, J = self._F(g)
        return self.mu * F + ((J - 1) * self.kappa)[..., None] * cofactor(F)

    def second_derivative(self, g):
        F, J = self._F(g)
        jf = cofactor(F)
        return (self.mu * np.eye(9)
                + ((J - 1) * self.kappa)[..., None, None] * det_hessian(F)
                + self.kappa * jf[..., :, None] * jf[..., None, :])


VON_KARMAN_SELECTOR = (
    (0, (0, 1)), (0, (1, 0)), (1, (0, 1)), (1, (1, 0)),
    (2, (0, 1)), (2, (0, 2)), (2, (1, 0)), (2, (1, 1)), (2, (2, 0)),
)


@dataclass(frozen=True)
class VonKarman:
    """Von Karman plate energy per unit area on fields ``(u1, u2, w)``.

    Selector order ``(u1_y, u1_x, u2_y, u2_x, w_y, w_yy, w_x, w_xy, w_xx)``.
    The density is ``D0/2 [(lap w)^2 - 2(1-nu)(w_xx w_yy - w_xy^2)] +
    h/2 eps:sigma`` with the plane-stress ``sigma`` and the membrane strain
    ``eps_ab = (u_a,b + u_b,a)/2 + w_,a w_,b / 2``.  The transverse load
    is applied by the assembler.
    """

    E: float
    nu: float
    thickness: float
    selector: tuple = VON_KARMAN_SELECTOR
    n_comp: int = 3
    linear = False

    def __post_init__(self):
        if self.E <= 0 or self.thickness <= 0 or not -1 < self.nu < 0.5:
            raise ValueError("need E > 0, thickness > 0 and -1 < nu < 0.5")

    @property
    def bending_stiffness(self):
        return self.E * self.thickness**3 / (12 * (1 - self.nu**2))

    @property
    def stiffness_scale(self) -> float:
        return float(self.bending_stiffness)

    @property
    def _membrane_D(self):
        # on (e11, e22, 2 e12)
        nu = self.nu
        return self.E * self.thickness / (1 - nu**2) * np.array(
            [[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])

    @property
    def _bending_D(self):
        # on (w_yy, w_xx, w_xy), same as plate_D
        nu = self.nu
        return self.bending_stiffness * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, 2 - 2 * nu]])

    @staticmethod
    def _strain(g):
        u1y, u1x, u2y, u2x, wy, _, wx, _, _ = np.moveaxis(np.asarray(g, dtype=float), -1, 0)
        return np.stack([u1x + 0.5 * wx * wx, u2y + 0.5 * wy * wy, u1y + u2x + wx * wy], axis=-1)

    @staticmethod
    def _strain_jacobian(g):
        g = np.asarray(g, dtype=float)
        wy, wx = g[..., 4], g[..., 6]
        J = np.zeros(g.shape[:-1] + (3, 9))
        J[..., 0, 1] = 1.0
        J[..., 0, 6] = wx
        J[..., 1, 2] = 1.0
        J[..., 1, 4] = wy
        J[..., 2, 0] = 1.0
        J[..., 2, 3] = 1.0
        J[..., 2, 4] = wx
        J[..., 2, 6] = wy
        return J

    def energy(self, g):
        g = np.asarray(g, dtype=float)
        e = self._strain(g)
        kap = g[..., [5, 8, 7]]
        return (0.5 * np.einsum("...a,ab,...b->...", kap, self._bending_D, kap)
                + 0.5 * np.einsum("...a,ab,...b->...", e, self._membrane_D, e))

    def first_derivative(self, g):
        g = np.asarray(g, dtype=float)
        e = self._strain(g)
        n = e @ self._membrane_D
        out = np.einsum("...a,...ai->...i", n, self._strain_jacobian(g))
        out[..., [5, 8, 7]] += g[..., [5, 8, 7]] @ self._bending_D
        return out

    def second_derivative(self, g):
        g = np.asarray(g, dtype=float)
        J = self._strain_jacobian(g)
        n = self._strain(g) @ self._membrane_D
        H = np.einsum("...ai,ab,...bj->...ij", J, self._membrane_D, J)
        # curvature of the strain map: e11 ~ wx^2/2, e22 ~ wy^2/2, 2e12 ~ wx wy
        H[..., 6, 6] += n[..., 0]
        H[..., 4, 4] += n[..., 1]
        H[..., 4, 6] += n[..., 2]
        H[..., 6, 4] += n[..., 2]
        kb = np.ix_([5, 8, 7], [5, 8, 7])
        H[(...,) + kb] += self._bending_D
        return H
