"""Global assembly, boundary conditions and solvers.

Degrees of freedom are numbered ``point * n_comp + component``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import InvertedElement, NoConvergence, SingularSupport, SolveFailed
from .operators import OperatorBundle
from .point_cloud import PointCloud

logger = logging.getLogger(__name__)


@dataclass
class AssembledSystem:
    """Sparse matrix, right-hand side and constraint bookkeeping."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_comp: int = 1
    bc_rows: dict = field(default_factory=dict)

    @property
    def n_dof(self):
        return self.matrix.shape[0]

    def dof(self, point, comp=0):
        return point * self.n_comp + comp


def local_dofs(bundle: OperatorBundle, n_comp: int) -> np.ndarray:
    """Global dofs of every support, ``(N, (k + 1) * n_comp)``, node-major."""
    return (bundle.nodes[:, :, None] * n_comp + np.arange(n_comp)).reshape(bundle.n_points, -1)


def selector_operator(bundle: OperatorBundle, selector, n_comp: int) -> np.ndarray:
    """Stack rows of ``B`` per ``(component, index)`` into ``(N, n_s, (k + 1) n_comp)``."""
    n, _, m = bundle.B.shape
    out = np.zeros((n, len(selector), m, n_comp))
    for a, (comp, ix) in enumerate(selector):
        if comp >= n_comp:
            raise ValueError(f"selector component {comp} but only {n_comp} fields")
        out[:, a, :, comp] = bundle.B[:, bundle.index_set.position(ix), :]
    return out.reshape(n, len(selector), m * n_comp)


def _scatter(blocks, dofs, n_dof) -> sp.csr_matrix:
    n, m, _ = blocks.shape
    rows = np.repeat(dofs, m, axis=1).ravel()
    cols = np.tile(dofs, (1, m)).ravel()
    mat = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n_dof, n_dof)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_strong(cloud: PointCloud, bundle: OperatorBundle, pde_rows, rhs_fn,
                    dirichlet=None) -> AssembledSystem:
    """Collocation system ``sum_a c_a d_a u (x_i) = f(x_i)``.

    ``pde_rows`` is a list of ``(multi-index, coefficient)`` pairs; a
    coefficient may be a scalar or an array of per-point values.  Rows of
    points listed in ``dirichlet`` (``{point: value}``) are replaced by
    identity rows.
    """
    n = len(cloud)
    row = np.zeros(bundle.nodes.shape)
    for ix, coef in pde_rows:
        try:
            pos = bundle.index_set.position(ix)
        except KeyError as exc:
            raise ValueError(f"derivative {ix} exceeds the operator order "
                             f"{bundle.index_set.max_order}") from exc
        row += np.broadcast_to(np.asarray(coef, dtype=float), (n,))[:, None] * bundle.B[:, pos, :]
    rhs = np.array([rhs_fn(x) for x in cloud.positions], dtype=float) if callable(rhs_fn) \
        else np.broadcast_to(np.asarray(rhs_fn, dtype=float), (n,)).copy()
    dirichlet = dict(dirichlet or {})
    fixed = np.array(sorted(dirichlet), dtype=int)
    keep = np.ones(n, dtype=bool)
    keep[fixed] = False
    r = np.repeat(np.arange(n), bundle.nodes.shape[1])
    mask = np.repeat(keep, bundle.nodes.shape[1])
    rows = np.concatenate([r[mask], fixed])
    cols = np.concatenate([bundle.nodes.ravel()[mask], fixed])
    vals = np.concatenate([row.ravel()[mask], np.ones(fixed.size)])
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    for i in fixed:
        rhs[i] = dirichlet[i]
    return AssembledSystem(mat, rhs, 1, {int(i): float(dirichlet[i]) for i in fixed})


def default_penalty(matrix) -> float:
    """``1e6`` times the mean absolute diagonal of ``matrix``."""
    d = np.abs(matrix.diagonal())
    return 1e6 * float(d.mean()) if d.size and d.mean() > 0 else 1e6


def apply_dirichlet_penalty(system: AssembledSystem, bc, penalty=None) -> AssembledSystem:
    """Add ``penalty/2 (u_dof - g)^2`` per constrained dof.

    ``bc`` maps global dofs to target values.
    """
    if not bc:
        return system
    if penalty is None:
        penalty = default_penalty(system.matrix)
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    dofs = np.fromiter(bc.keys(), dtype=int)
    if dofs.min() < 0 or dofs.max() >= system.n_dof:
        raise KeyError("boundary condition references an unknown dof")
    g = np.fromiter(bc.values(), dtype=float)
    mat = system.matrix + sp.csr_matrix((np.full(dofs.size, penalty), (dofs, dofs)),
                                        shape=system.matrix.shape)
    rhs = system.rhs.copy()
    np.add.at(rhs, dofs, penalty * g)
    rows = dict(system.bc_rows)
    rows.update({int(k): float(v) for k, v in bc.items()})
    return AssembledSystem(mat.tocsr(), rhs, system.n_comp, rows)


def solve_linear(system: AssembledSystem) -> np.ndarray:
    """Sparse direct solve with a backward-error check."""
    A = sp.csc_matrix(system.matrix)
    b = np.asarray(system.rhs, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.size:
        raise SolveFailed(f"inconsistent system: matrix {A.shape}, rhs {b.shape}")
    structural = np.diff(A.indptr) == 0
    if structural.any():
        raise SolveFailed(f"structurally singular: {structural.sum()} empty column(s), "
                          f"first {np.flatnonzero(structural)[:10].tolist()}")
    try:
        u = spla.splu(A).solve(b)
    except RuntimeError as exc:
        raise SolveFailed(f"factorization failed: {exc}") from exc
    if not np.all(np.isfinite(u)):
        raise SolveFailed("numerical breakdown: non-finite solution")
    res = np.linalg.norm(A @ u - b)
    scale = spla.norm(A) * np.linalg.norm(u) + np.linalg.norm(b)
    if res > 1e-9 * scale:
        raise SolveFailed(f"numerical breakdown: residual {res:.3e} exceeds {1e-9 * scale:.3e}")
    return u


def smallest_eigenpair(A, B=None, dense_limit=3000, maxiter=5000):
    """Eigenpair of smallest real part of ``A v = lam B v``.

    Dense QZ for ``n <= dense_limit``, shift-invert Arnoldi about zero
    otherwise.  The eigenvector is normalized to unit 2-norm with its
    largest entry positive.
    """
    n = A.shape[0]
    if n <= dense_limit:
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        Bd = None if B is None else (B.toarray() if sp.issparse(B) else np.asarray(B, dtype=float))
        vals, vecs = la.eig(Ad, Bd)
        finite = np.isfinite(vals)
        k = np.flatnonzero(finite)[np.argmin(vals[finite].real)]
        lam, v = vals[k], vecs[:, k]
    else:
        try:
            vals, vecs = spla.eigs(sp.csc_matrix(A), k=6, M=None if B is None else sp.csc_matrix(B),
                                   sigma=0.0, which="LM", maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise NoConvergence(f"shift-invert Arnoldi did not converge: {exc}") from exc
        k = np.argmin(vals.real)
        lam, v = vals[k], vecs[:, k]
    if abs(lam.imag) <= 1e-10 * max(1.0, abs(lam.real)):
        lam = lam.real
        v = v.real
    v = v / np.linalg.norm(v)
    if v[np.argmax(np.abs(v))].real < 0:
        v = -v
    return lam, v


class WeakForm:
    """Total energy ``sum_i dV_i W(B_i u) + hourglass - f_ext . u`` and its derivatives.

    Parameters
    ----------
    cloud, bundle
        Discretization; ``bundle`` must carry stabilization matrices when
        ``p_hg > 0``.
    material
        Object with ``selector``, ``n_comp``, ``energy``,
        ``first_derivative``, ``second_derivative``.
    body_load : array (n_dof,), optional
        Nodal external forces (work-conjugate to the dofs).
    p_hg : float
        Hourglass penalty.  The hourglass energy of point ``i`` is
        ``dV_i * c_i * p_hg / (2 m_i) * du^T M_i du`` per field component,
        with ``c_i = hourglass_scale`` or, by default, the material
        stiffness scale divided by ``h_i^(2q-2)`` for a material with
        highest derivative order ``q``.
    """

    def __init__(self, cloud: PointCloud, bundle: OperatorBundle, material, body_load=None,
                 p_hg=0.0, hourglass_scale=None):
        self.cloud = cloud
        self.bundle = bundle
        self.material = material
        self.n_comp = getattr(material, "n_comp", 1)
        self.n_dof = len(cloud) * self.n_comp
        for _, ix in material.selector:
            if sum(ix) > bundle.index_set.max_order:
                raise ValueError(f"material needs derivative {ix} beyond operator order "
                                 f"{bundle.index_set.max_order}")
        self.Bsel = selector_operator(bundle, material.selector, self.n_comp)
        self.dofs = local_dofs(bundle, self.n_comp)
        self.volumes = cloud.volumes
        self.f_ext = np.zeros(self.n_dof) if body_load is None else np.asarray(body_load, float)
        if self.f_ext.shape != (self.n_dof,):
            raise ValueError(f"body load must have shape ({self.n_dof},)")
        self.p_hg = float(p_hg)
        self._K_hg = None
        if self.p_hg > 0:
            if hourglass_scale is None:
                q = max(sum(ix) for _, ix in material.selector)
                hourglass_scale = material.stiffness_scale / bundle.supports.h ** (2 * q - 2)
            c = np.broadcast_to(np.asarray(hourglass_scale, dtype=float), (len(cloud),))
            k_hg = bundle.hourglass(self.p_hg) * (self.volumes * c)[:, None, None]
            self._hg_blocks = k_hg
            self._K_hg = self._expand_scalar_blocks(k_hg)
        self._K_lin = None

    def _expand_scalar_blocks(self, blocks):
        # same scalar block for every component
        c = self.n_comp
        if c == 1:
            return _scatter(blocks, self.dofs, self.n_dof)
        n, m, _ = blocks.shape
        full = np.zeros((n, m, c, m, c))
        for a in range(c):
            full[:, :, a, :, a] = blocks
        return _scatter(full.reshape(n, m * c, m * c), self.dofs, self.n_dof)

    def derivatives(self, u) -> np.ndarray:
        """Selected derivative vector at every point, ``(N, n_s)``."""
        return np.einsum("nsm,nm->ns", self.Bsel, np.asarray(u, float)[self.dofs])

    def energy(self, u) -> float:
        u = np.asarray(u, dtype=float)
        e = float(np.dot(self.volumes, self.material.energy(self.derivatives(u))))
        if self._K_hg is not None:
            e += 0.5 * float(u @ (self._K_hg @ u))
        return e - float(self.f_ext @ u)

    def internal_force(self, u) -> np.ndarray:
        g = self.material.first_derivative(self.derivatives(u))
        loc = np.einsum("nsm,ns->nm", self.Bsel, g * self.volumes[:, None])
        out = np.zeros(self.n_dof)
        np.add.at(out, self.dofs.ravel(), loc.ravel())
        if self._K_hg is not None:
            out += self._K_hg @ u
        return out

    def residual(self, u) -> np.ndarray:
        """Gradient of :meth:`energy`."""
        return self.internal_force(u) - self.f_ext

    def stiffness(self, u=None) -> sp.csr_matrix:
        """Hessian of :meth:`energy`."""
        if getattr(self.material, "linear", False):
            if self._K_lin is None:
                self._K_lin = self._assemble_stiffness(np.zeros(self.n_dof))
            return self._K_lin
        return self._assemble_stiffness(np.asarray(u, dtype=float))

    def _assemble_stiffness(self, u):
        H = self.material.second_derivative(self.derivatives(u))
        blocks = np.einsum("nsm,nst,ntl->nml", self.Bsel, H * self.volumes[:, None, None], self.Bsel)
        K = _scatter(blocks, self.dofs, self.n_dof)
        if self._K_hg is not None:
            K = K + self._K_hg
        return K.tocsr()

    def linear_system(self) -> AssembledSystem:
        """``K u = f_ext`` for quadratic materials."""
        if not getattr(self.material, "linear", False):
            raise ValueError("linear_system requires a quadratic material")
        return AssembledSystem(self.stiffness(), self.f_ext.copy(), self.n_comp)


def assemble_weak(cloud, bundle, material, body_load=None, p_hg=0.0, hourglass_scale=None):
    """``(residual, stiffness)`` callables of the weak form; see :class:`WeakForm`."""
    wf = WeakForm(cloud, bundle, material, body_load, p_hg, hourglass_scale)
    return wf.residual, wf.stiffness


@dataclass
class NewtonState:
    """Converged state at the end of one load step."""

    u: np.ndarray
    step: int
    load: float
    iter: int
    rel_increment: float
    residual_norm: float


def _newton_increment(residual_fn, stiffness_fn, u, load, tol, max_iter, step, log):
    """Plain Newton iterations at a fixed load factor; returns ``(u, iters, rel, rnorm)``."""
    total = np.zeros_like(u)
    rel = np.inf
    for it in range(1, max_iter + 2):
        try:
            R = residual_fn(u, load)
            K = stiffness_fn(u, load)
        except InvertedElement as exc:
            exc.step, exc.iteration = step, it
            raise
        try:
            du = solve_linear(AssembledSystem(sp.csr_matrix(K), -R))
        except SolveFailed as exc:
            raise SolveFailed(f"step {step} iteration {it}: {exc}") from exc
        u = u + du
        total += du
        denom = np.linalg.norm(total)
        rel = np.linalg.norm(du) / denom if denom > 0 else 0.0
        rnorm = float(np.linalg.norm(R))
        line = f"{step} {it} {rel:.6e} {rnorm:.6e}"
        logger.debug(line)
        if log is not None:
            log(line)
        if rel <= tol:
            return u, max(it - 1, 1), rel, rnorm
    raise NoConvergence(f"load step {step}: no convergence in {max_iter} iterations "
                        f"(last relative increment {rel:.3e})", step=step, iteration=max_iter)


def newton_solve(residual_fn, stiffness_fn, u0, load_steps=1, tol=1e-8, max_iter=25,
                 log=None, max_cutbacks=0):
    """Load-stepped Newton-Raphson.

    ``residual_fn(u, load)`` and ``stiffness_fn(u, load)`` receive the load
    factor, which reaches ``s / load_steps`` at the end of step ``s``.
    Within an increment the iteration stops when
    ``|du^(k+1)| / |sum_{i<=k+1} du^i| <= tol``.  The reported ``iter``
    counts the updates applied before the test was met, so a linear problem
    reports one iteration (its second solve only confirms convergence).
    ``log`` receives ``"step iter rel_increment residual_norm"`` lines.

    With ``max_cutbacks > 0`` an increment that inverts an element or fails
    to converge is retried from the last converged state with half the load
    increment, at most ``max_cutbacks`` halvings per step.

    Returns the list of :class:`NewtonState`, one per load step.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    u = np.array(u0, dtype=float)
    states = []
    load = 0.0
    for step in range(1, load_steps + 1):
        target = step / load_steps
        iters = 0
        halvings = 0
        inc = target - load
        while load < target - 1e-14:
            trial = min(load + inc, target)
            try:
                u_new, it, rel, rnorm = _newton_increment(
                    residual_fn, stiffness_fn, u, trial, tol, max_iter, step, log)
            except (InvertedElement, NoConvergence):
                if halvings >= max_cutbacks:
                    raise
                halvings += 1
                inc /= 2
                logger.info("step %d: cutting load increment to %.3g", step, inc)
                continue
            u, load = u_new, trial
            iters += it
        states.append(NewtonState(u.copy(), step, target, iters, rel, rnorm))
    return states


__all__ = [
    "AssembledSystem", "NewtonState", "WeakForm", "SingularSupport",
    "apply_dirichlet_penalty", "assemble_strong", "assemble_weak", "default_penalty",
    "local_dofs", "newton_solve", "selector_operator", "smallest_eigenpair", "solve_linear",
]
