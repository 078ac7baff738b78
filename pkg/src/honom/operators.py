"""Nonlocal derivative operators on particle supports.

For a point ``i`` with neighbors ``j_1..j_k`` the operator matrix ``B`` maps
the stacked nodal values ``(u_i, u_j1, ..., u_jk)`` to every partial
derivative of total order ``1..n`` at ``x_i``.  It is the weighted
least-squares fit of the scaled Taylor expansion
``u_j - u_i = sum_a p_a(r_j / h_i) * H_a * d_a u_i`` over the support.

All routines take batched arrays: a leading axis of length ``N`` runs over
particles, and every support has the same size ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import SingularSupport
from .multi_index import MultiIndexSet, enumerate_indexes, monomial_vector, scaling_matrix
from .point_cloud import PointCloud, SupportTable

RCOND_MIN = 1e-12


def moment_matrix(idxs: MultiIndexSet, r, weights, volumes, h) -> np.ndarray:
    """``sum_j w_j p_j p_j^T dV_j`` for one support (``r`` of shape ``(k, d)``) or a batch."""
    p = monomial_vector(idxs, r, np.asarray(h)[..., None])
    wdv = np.asarray(weights) * np.asarray(volumes)
    return np.einsum("...ka,...k,...kb->...ab", p, wdv, p)


def _weighted_fit(idxs, r, weights, volumes, h):
    """Complete QR of the weighted Vandermonde matrix ``sqrt(w dV) p_j^T``.

    Returns ``(p, sqrt_wdv, Q, R, rcond)`` with ``Q`` of shape ``(..., k, k)``
    (the first ``n_p`` columns span the fit, the rest its complement) and
    ``R`` the leading ``n_p x n_p`` triangle.  ``rcond`` is the reciprocal
    2-norm condition number of the moment matrix ``R^T R``.
    """
    h = np.asarray(h, dtype=float)
    p = monomial_vector(idxs, r, h[..., None])
    k, n_p = p.shape[-2:]
    if k < n_p:
        raise SingularSupport(f"support has {k} neighbors but order-{idxs.max_order} "
                              f"operator in {idxs.dim}D needs at least {n_p}")
    s = np.sqrt(np.asarray(weights, dtype=float) * np.asarray(volumes, dtype=float))
    q, rr = np.linalg.qr(s[..., None] * p, mode="complete")
    rr = rr[..., :n_p, :]
    sv = np.linalg.svd(rr, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        rcond = np.where(sv[..., 0] > 0, (sv[..., -1] / sv[..., 0]) ** 2, 0.0)
    return p, s, q, rr, rcond


def _check_rcond(rcond, ids=None):
    bad = np.flatnonzero(np.atleast_1d(rcond) < RCOND_MIN)
    if bad.size:
        pts = bad if ids is None else np.asarray(ids)[bad]
        raise SingularSupport(
            f"moment matrix numerically singular (rcond < {RCOND_MIN:g}) at "
            f"{bad.size} point(s), first ids {pts[:10].tolist()}",
            points=pts.tolist(),
        )


def operator_matrix(idxs: MultiIndexSet, r, weights, volumes, h) -> np.ndarray:
    """Operator matrix ``B`` of shape ``(..., n_p, k + 1)``; column 0 is the center."""
    p, s, q, rr, rcond = _weighted_fit(idxs, r, weights, volumes, h)
    _check_rcond(rcond)
    return _assemble_b(idxs, h, s, q, rr)


def _assemble_b(idxs, h, s, q, rr):
    # K_i p_wi = H^-1 R^-1 Q^T diag(s)
    n_p = rr.shape[-1]
    rhs = np.swapaxes(q[..., :n_p], -1, -2) * s[..., None, :]
    kp = np.linalg.solve(rr, rhs) / scaling_matrix(idxs, h)[..., :, None]
    return np.concatenate([-kp.sum(axis=-1, keepdims=True), kp], axis=-1)


def stabilization_matrix(idxs: MultiIndexSet, r, weights, volumes, h, p_hg=1.0):
    """``(M, m_norm, K_hg)`` for one support or a batch.

    ``M = W - p_w^T A^-1 p_w`` is the quadratic form of the least-squares
    residual of the local Taylor fit, ``m_norm = sum_j w_j |r_j|^2 dV_j``,
    and ``K_hg`` the hourglass stiffness on ``(u_i, u_j1, ...)``.
    """
    p, s, q, rr, rcond = _weighted_fit(idxs, r, weights, volumes, h)
    _check_rcond(rcond)
    m = _residual_projector(s, q, rr.shape[-1])
    m_norm = np.einsum("...k,...kd,...kd->...", np.asarray(weights) * np.asarray(volumes), r, r)
    return m, m_norm, hourglass_stiffness(m, m_norm, p_hg)


def _residual_projector(s, q, n_p):
    # S (I - Q Q^T) S written as the Gram matrix of S Q_perp: PSD by construction
    g = s[..., :, None] * q[..., n_p:]
    return g @ np.swapaxes(g, -1, -2)


def hourglass_stiffness(m, m_norm, p_hg=1.0) -> np.ndarray:
    """``(p_hg / m_norm) [[sum v, -v^T], [-v, M]]`` with ``v`` the row sums of ``M``."""
    m = np.asarray(m)
    v = m.sum(axis=-1)
    k = m.shape[-1]
    out = np.empty(m.shape[:-2] + (k + 1, k + 1))
    out[..., 0, 0] = v.sum(axis=-1)
    out[..., 0, 1:] = -v
    out[..., 1:, 0] = -v
    out[..., 1:, 1:] = m
    return out * (p_hg / np.asarray(m_norm, dtype=float))[..., None, None]


@dataclass
class OperatorBundle:
    """Per-particle operators of one cloud.

    Attributes
    ----------
    index_set : MultiIndexSet
    nodes : ndarray (N, k + 1)
        Global ids ``(i, j_1, ..., j_k)`` addressed by the columns of ``B``.
    B : ndarray (N, n_p, k + 1)
    M : ndarray (N, k, k) or None
    m_norm : ndarray (N,)
    rcond : ndarray (N,)
        Reciprocal condition number of each moment matrix.
    monomials : ndarray (N, k, n_p)
        Scaled monomials ``p_j`` of every neighbor.
    scale : ndarray (N, n_p)
        Diagonal of ``H`` per point.
    wdv : ndarray (N, k)
        ``w_j dV_j`` per neighbor.
    """

    index_set: MultiIndexSet
    nodes: np.ndarray
    B: np.ndarray
    M: np.ndarray | None
    m_norm: np.ndarray
    rcond: np.ndarray
    monomials: np.ndarray
    scale: np.ndarray
    wdv: np.ndarray
    supports: SupportTable

    @property
    def n_points(self):
        return self.B.shape[0]

    def rows(self, indexes) -> np.ndarray:
        """Rows of ``B`` for the given multi-indexes, shape ``(N, len(indexes), k + 1)``."""
        pos = [self.index_set.position(ix) for ix in indexes]
        return self.B[:, pos, :]

    def hourglass(self, p_hg=1.0) -> np.ndarray:
        if self.M is None:
            raise ValueError("bundle built without stabilization matrices")
        return hourglass_stiffness(self.M, self.m_norm, p_hg)

    def derivatives(self, values) -> np.ndarray:
        """Nonlocal derivatives of nodal ``values`` (shape ``(N,)`` or ``(N, c)``).

        Returns ``(N, n_p)`` or ``(N, c, n_p)``.
        """
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n_points:
            raise ValueError(f"expected {self.n_points} nodal values, got {values.shape[0]}")
        local = values[self.nodes]
        if values.ndim == 1:
            return np.einsum("nak,nk->na", self.B, local)
        return np.einsum("nak,nkc->nca", self.B, local)

    def fit_residuals(self, values) -> np.ndarray:
        """``p_j^T d^h u_i - (u_j - u_i)`` per support pair, shape ``(N, k)`` (scalar field)."""
        values = np.asarray(values, dtype=float)
        scaled = self.derivatives(values) * self.scale
        du = values[self.nodes[:, 1:]] - values[:, None]
        return np.einsum("nka,na->nk", self.monomials, scaled) - du

    def global_matrix(self, index) -> sp.csr_matrix:
        """Sparse ``N x N`` matrix evaluating derivative ``index`` at every point."""
        row = self.B[:, self.index_set.position(index), :]
        n, m = self.nodes.shape
        return sp.csr_matrix((row.ravel(), (np.repeat(np.arange(n), m), self.nodes.ravel())),
                             shape=(n, n))


def build_operators(cloud: PointCloud, supports: SupportTable, order: int,
                    stabilization: bool = True) -> OperatorBundle:
    """Operator bundle for every particle of ``cloud``.

    Raises :class:`SingularSupport` naming every point whose moment matrix
    has a reciprocal condition number below ``RCOND_MIN``.
    """
    idxs = enumerate_indexes(cloud.dim, order)
    nbr = supports.neighbors
    if nbr.shape[1] < len(idxs):
        raise SingularSupport(
            f"{nbr.shape[1]} neighbors per support but the order-{order} operator in "
            f"{cloud.dim}D needs at least {len(idxs)} (n_i >= n_p)"
        )
    r = cloud.positions[nbr] - cloud.positions[:, None, :]
    dv = cloud.volumes[nbr]
    p, s, q, rr, rcond = _weighted_fit(idxs, r, supports.weights, dv, supports.h)
    _check_rcond(rcond)
    b = _assemble_b(idxs, supports.h, s, q, rr)
    wdv = supports.weights * dv
    m = _residual_projector(s, q, len(idxs)) if stabilization else None
    m_norm = np.einsum("nk,nkd,nkd->n", wdv, r, r)
    nodes = np.concatenate([np.arange(len(cloud))[:, None], nbr], axis=1)
    return OperatorBundle(idxs, nodes, b, m, m_norm, rcond, p,
                          scaling_matrix(idxs, supports.h), wdv, supports)


def first_order_gradient(r, weights, volumes, du) -> np.ndarray:
    """Low-order nonlocal gradient ``sum w du r^T dV (sum w r r^T dV)^-1`` of a scalar field."""
    wdv = np.asarray(weights) * np.asarray(volumes)
    shape = np.einsum("...k,...kd,...ke->...de", wdv, r, r)
    rhs = np.einsum("...k,...k,...kd->...d", wdv, du, r)
    return np.linalg.solve(shape, rhs[..., None])[..., 0]


def strong_form_divergence(cloud: PointCloud, bundle: OperatorBundle, sigma, rows,
                           p_hg=0.0, values=None) -> np.ndarray:
    """Nonlocal divergence ``-d^T sigma`` per unit volume, with hourglass correction.

    ``sigma`` has shape ``(N, len(rows))`` and pairs with the derivative
    subset ``rows``.  Point ``i`` collects the support term from its own
    neighbors and the dual-support term from every ``j`` whose support holds
    ``i``, with ``p_i`` and the weight evaluated in ``j``'s support.  For
    ``p_hg > 0`` the nodal ``values`` that produced ``sigma`` are needed for
    the hourglass forces.  Multiplying the result by the volumes gives the
    gradient of ``sum_i dV_i (sigma_i . d u_i) + hourglass energy`` under a
    fixed ``sigma``.
    """
    sigma = np.asarray(sigma, dtype=float)
    sub = bundle.rows(rows)
    n = bundle.n_points
    if sigma.shape != (n, len(rows)):
        raise ValueError(f"sigma must have shape {(n, len(rows))}, got {sigma.shape}")
    dual = bundle.supports.dual_neighbors
    if dual is None or len(dual) != n:
        raise ValueError("support table lacks dual-support data")
    dv = cloud.volumes
    # pair[i, j] = sigma_i^T K_i' w_j p_j dV_j
    pair = np.einsum("na,nak->nk", sigma, sub[:, :, 1:])
    own = -pair.sum(axis=1)
    t = np.zeros_like(pair)
    if p_hg:
        if values is None:
            raise ValueError("hourglass correction needs the nodal values")
        # T_ij dV_j
        t = (p_hg / bundle.m_norm)[:, None] * bundle.wdv * bundle.fit_residuals(values)
        own = own + t.sum(axis=1)

    # dual-support sums: for each i, the j with i in S_j and the slot of i there
    nbr = bundle.nodes[:, 1:]
    owner = np.concatenate(dual)
    counts = np.array([len(d) for d in dual])
    member = np.repeat(np.arange(n), counts)
    slot = np.argmax(nbr[owner] == member[:, None], axis=1)
    if not np.all(nbr[owner, slot] == member):
        raise ValueError("dual-support table inconsistent with supports")
    contrib = dv[owner] * (pair[owner, slot] - t[owner, slot])
    dual_sum = np.zeros(n)
    np.add.at(dual_sum, member, contrib)
    return own + dual_sum / dv
