"""Benchmark problems, error measures and the convergence harness.

Every benchmark bundles a domain, a discretization recipe, a solver and
(where one exists) a reference solution.  :func:`evaluate` solves one
ladder entry and returns an :class:`ErrorReport`; :func:`run_convergence`
walks a whole ladder and fits ``log L2`` against ``log dx``.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import (WeakForm, apply_dirichlet_penalty, assemble_strong, default_penalty,
                       newton_solve, smallest_eigenpair, solve_linear)
from .exceptions import ConfigError, NomError, ZeroReference
from .materials import NeoHooke, VonKarman, plate_D, poisson
from .multi_index import count_indexes
from .operators import build_operators
from .point_cloud import WEIGHTS, PointCloud, build_grid, build_supports, default_neighbor_count

logger = logging.getLogger(__name__)

CSV_HEADER = "nnode,dx,l2,umax_ratio_err,p,phg,runtime_s"


# ---------------------------------------------------------------- error norms

def l2_norm(u, exact, volumes) -> float:
    """Volume-weighted relative L2 error.

    ``sqrt(sum_j |u_j - e_j|^2 dV_j / sum_j |e_j|^2 dV_j)``; ``u`` and
    ``exact`` may be ``(N,)`` or ``(N, c)``.

    Raises
    ------
    ZeroReference
        If the reference field has zero norm.
    """
    u = np.asarray(u, dtype=float)
    e = np.asarray(exact, dtype=float)
    v = np.asarray(volumes, dtype=float).reshape(-1)
    if u.shape != e.shape or u.shape[0] != v.size:
        raise ValueError(f"shape mismatch: u {u.shape}, exact {e.shape}, volumes {v.shape}")
    u2 = u.reshape(v.size, -1)
    e2 = e.reshape(v.size, -1)
    den = float(np.sum(np.sum(e2 * e2, axis=1) * v))
    if den == 0.0:
        raise ZeroReference("reference field is identically zero")
    num = float(np.sum(np.sum((u2 - e2) ** 2, axis=1) * v))
    return math.sqrt(num / den)


def peak(values) -> float:
    """Signed entry of largest magnitude."""
    values = np.asarray(values, dtype=float).ravel()
    return float(values[np.argmax(np.abs(values))])


def max_ratio_error(u, exact) -> float:
    """``u_max / u_max^exact - 1`` using the signed peak of each field."""
    ref = peak(exact)
    if ref == 0.0:
        raise ZeroReference("reference peak is zero")
    return peak(u) / ref - 1.0


# ---------------------------------------------------------------- data types

@dataclass(frozen=True)
class LadderEntry:
    """One discretization: nodes per axis, operator order and hourglass penalty.

    ``ref_l2`` / ``ref_ratio`` hold published reference values when the
    entry reproduces a tabulated run.
    """

    nodes: int
    order: int
    phg: float = 0.0
    ref_l2: float | None = None
    ref_ratio: float | None = None


@dataclass
class SolveOptions:
    """Discretization and solver knobs; ``None`` selects the benchmark default."""

    weight: str | None = None
    gauss_shape: float | None = None
    neighbors: int | None = None
    volume_rule: str | None = None
    penalty: float | None = None
    seed: int | None = 0
    perturb: float = 0.0
    tol: float = 1e-8
    max_iter: int = 25
    load_steps: int | None = None
    hourglass_scale: float | None = None
    cloud: PointCloud | None = None
    log: Callable | None = None


@dataclass
class Solution:
    """Solver output on a cloud.

    ``values`` is ``(N, c)``; ``primary`` the scalar field measured by the
    error report; ``exact`` its reference at the nodes (if known).
    """

    cloud: PointCloud
    values: np.ndarray
    primary: np.ndarray
    exact: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


@dataclass
class ErrorReport:
    """Accuracy and cost of one ladder entry."""

    n_nodes: int
    dx: float
    l2: float
    max_ratio_error: float
    p: int
    p_hg: float
    runtime: float
    extras: dict = field(default_factory=dict)

    def csv_row(self, runtime=True) -> str:
        rt = f"{self.runtime:.3f}" if runtime else "nan"
        return (f"{self.n_nodes},{self.dx:.6g},{self.l2:.6g},{self.max_ratio_error:.6g},"
                f"{self.p},{self.p_hg:g},{rt}")


@dataclass
class Benchmark:
    """Fully specified test problem.

    Parameters
    ----------
    name : str
    dim : int
    lower, upper : tuple of float
        Bounding box of the generated lattice.
    solver : callable
        ``solver(benchmark, entry, options, cloud) -> Solution``.
    ladder : list of LadderEntry
        Default refinement ladder.
    exact_solution : callable, optional
        ``exact_solution(X) -> (N,)`` for ``X`` of shape ``(N, dim)``.
    derivative_order : int
        Highest derivative the formulation needs (operator order must reach it).
    required_tags : tuple of str
        Boundary labels the solver relies on.
    defaults : dict
        Benchmark-specific :class:`SolveOptions` values.
    reference : dict
        Published scalar references, keyed by nodes per axis.
    neighbor_rule : {"default", "n_p", "5p+3"}
        Support size: ``5p + n_p``, exactly ``n_p``, or ``5p + 3``.
    """

    name: str
    dim: int
    lower: tuple
    upper: tuple
    solver: Callable
    ladder: list
    exact_solution: Callable | None = None
    derivative_order: int = 2
    required_tags: tuple = ()
    defaults: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    description: str = ""
    custom_cloud: bool = True
    neighbor_rule: str = "default"

    def options(self, opts: SolveOptions | None = None) -> SolveOptions:
        """Fill unset fields of ``opts`` from the benchmark defaults."""
        opts = SolveOptions() if opts is None else opts
        kw = {k: v for k, v in self.defaults.items() if getattr(opts, k) is None}
        return replace(opts, **kw)

    def neighbor_count(self, order, opts: SolveOptions) -> int:
        if opts.neighbors is not None:
            return int(opts.neighbors)
        if self.neighbor_rule == "n_p":
            return count_indexes(self.dim, order)
        if self.neighbor_rule == "5p+3":
            return 5 * order + 3
        return default_neighbor_count(self.dim, order)

    def make_cloud(self, entry: LadderEntry, opts: SolveOptions) -> PointCloud:
        if opts.cloud is not None:
            if not self.custom_cloud:
                raise ConfigError(f"{self.name} builds its own lattice; custom clouds unsupported")
            return opts.cloud
        return build_grid(self.lower, self.upper, entry.nodes, perturbation=opts.perturb,
                          seed=opts.seed, volume_rule=opts.volume_rule or "tributary")

    def check(self, entry: LadderEntry, opts: SolveOptions | None = None) -> list:
        """Configuration problems as a list of ``(level, message)``; ``level`` is ``"error"`` or ``"warning"``."""
        opts = self.options(opts)
        out = []
        if entry.order < self.derivative_order:
            out.append(("error", f"order {entry.order} below the derivative order "
                                 f"{self.derivative_order} of {self.name}"))
        if entry.order < 1:
            return out + [("error", "order must be at least 1")]
        k = self.neighbor_count(entry.order, opts)
        n_p = count_indexes(self.dim, entry.order)
        if k < n_p:
            out.append(("warning", f"k={k} neighbors < n_p={n_p} derivative terms: every "
                                   f"support needs at least n_p neighbors"))
        if opts.cloud is None:
            if entry.nodes < 3:
                out.append(("error", f"{entry.nodes} nodes per axis leaves no interior point"))
            elif entry.nodes ** self.dim <= k:
                out.append(("error", f"{entry.nodes ** self.dim} points cannot host supports "
                                     f"of {k} neighbors"))
        else:
            if opts.cloud.dim != self.dim:
                out.append(("error", f"cloud dimension {opts.cloud.dim} != {self.dim}"))
            if len(opts.cloud) <= k:
                out.append(("error", f"{len(opts.cloud)} points cannot host supports of {k} neighbors"))
            missing = set(self.required_tags) - opts.cloud.tag_names
            if missing:
                out.append(("error", f"boundary tag(s) {sorted(missing)} missing from the cloud"))
        if opts.weight is not None and opts.weight not in WEIGHTS:
            out.append(("error", f"unknown weight {opts.weight!r}"))
        if entry.phg < 0:
            out.append(("error", "p_hg must be non-negative"))
        if opts.tol <= 0:
            out.append(("error", "tol must be positive"))
        if opts.load_steps is not None and opts.load_steps < 1:
            out.append(("error", "load_steps must be at least 1"))
        if opts.penalty is not None and opts.penalty <= 0:
            out.append(("error", "penalty must be positive"))
        return out


def _discretize(bench: Benchmark, entry: LadderEntry, opts: SolveOptions, stabilization=True):
    cloud = bench.make_cloud(entry, opts)
    k = bench.neighbor_count(entry.order, opts)
    supports = build_supports(cloud, k, opts.weight or "const", opts.gauss_shape or 2.0)
    bundle = build_operators(cloud, supports, entry.order, stabilization=stabilization)
    return cloud, bundle


def _boundary(cloud: PointCloud, tags) -> np.ndarray:
    return cloud.tagged(*tags) if tags else cloud.tagged()


# ---------------------------------------------------------------- 1D ODE

def _ode_exact(X):
    x = X[:, 0]
    return x**5 - 3 * x - np.cos(np.pi * x) + 1


def _ode_rhs(X):
    x = X[:, 0]
    return 20 * x**3 + np.pi**2 * np.cos(np.pi * x)


def _solve_strong_scalar(bench, entry, opts, rhs, exact, rows):
    cloud, bundle = _discretize(bench, entry, opts, stabilization=False)
    bnd = _boundary(cloud, bench.required_tags)
    ue = exact(cloud.positions)
    system = assemble_strong(cloud, bundle, rows, rhs(cloud.positions),
                             {int(i): float(ue[i]) for i in bnd})
    u = solve_linear(system)
    return Solution(cloud, u[:, None], u, ue)


def ode_1d() -> Benchmark:
    """``u'' = 20 x^3 + pi^2 cos(pi x)`` on ``[0, 1]``, ``u(0) = u(1) = 0``, strong form."""
    ladder = [LadderEntry(n, p) for p in (2, 3, 4, 5, 6) for n in (21, 41, 81, 161)]
    return Benchmark(
        "ode_1d", 1, (0.0,), (1.0,),
        lambda b, e, o: _solve_strong_scalar(b, e, o, _ode_rhs, _ode_exact, [((2,), 1.0)]),
        ladder, _ode_exact, 2, ("xmin", "xmax"), {},
        description="second-order ODE, collocation with k = n_p neighbors", neighbor_rule="n_p")


# ---------------------------------------------------------------- harmonic oscillator

def _oscillator_ground(X):
    x = X[:, 0]
    return np.pi ** -0.25 * np.exp(-0.5 * x * x)


def _solve_schrodinger(bench, entry, opts):
    cloud, bundle = _discretize(bench, entry, opts, stabilization=False)
    x = cloud.positions[:, 0]
    A = (-0.5 * bundle.global_matrix((2,)) + sp.diags(0.5 * x * x)).tocsr()
    # phi = 0 at the truncated ends: drop those rows and columns
    inner = np.setdiff1d(np.arange(len(cloud)), _boundary(cloud, bench.required_tags))
    lam, v = smallest_eigenpair(A[inner][:, inner])
    phi = np.zeros(len(cloud))
    phi[inner] = np.real(v)
    norm = math.sqrt(float(np.sum(phi * phi * cloud.volumes)))
    phi /= norm
    if phi[np.argmax(np.abs(phi))] < 0:
        phi = -phi
    exact = _oscillator_ground(cloud.positions)
    return Solution(cloud, phi[:, None], phi, exact,
                    {"eigenvalue": float(np.real(lam)), "eigenvalue_error": abs(float(np.real(lam)) - 0.5)})


def schrodinger_1d() -> Benchmark:
    """Lowest state of ``-phi''/2 + x^2 phi / 2 = lam phi`` on ``[-10, 10]``; exact ``lam_0 = 1/2``."""
    ladder = [LadderEntry(n, p) for p in (2, 4) for n in (101, 201, 401, 801)]
    return Benchmark(
        "schrodinger_1d", 1, (-10.0,), (10.0,), _solve_schrodinger, ladder,
        _oscillator_ground, 2, ("xmin", "xmax"), {},
        reference={"eigenvalue": 0.5}, neighbor_rule="n_p",
        description="harmonic oscillator ground state, eigenvector normalized in L2")


# ---------------------------------------------------------------- 2D Poisson, strong form

def _p2_exact(X):
    x, y = X[:, 0], X[:, 1]
    return x * (1 - x) * y * (1 - y) * np.exp(x - y)


def _p2_rhs(X):
    x, y = X[:, 0], X[:, 1]
    return 2 * x * (y - 1) * (y - 2 * x + x * y + 2) * np.exp(x - y)


def poisson_2d_strong() -> Benchmark:
    """``lap u = 2x(y-1)(y-2x+xy+2) e^(x-y)`` on the unit square, collocation."""
    ladder = [LadderEntry(n, p) for p in (2, 3, 4) for n in (11, 21, 41, 81)]
    return Benchmark(
        "poisson_2d_strong", 2, (0.0, 0.0), (1.0, 1.0),
        lambda b, e, o: _solve_strong_scalar(b, e, o, _p2_rhs, _p2_exact,
                                             [((2, 0), 1.0), ((0, 2), 1.0)]),
        ladder, _p2_exact, 2, ("xmin", "xmax", "ymin", "ymax"),
        description="2D Poisson by collocation, regular or seeded-irregular nodes")


# ---------------------------------------------------------------- nD Poisson, weak form

@lru_cache(maxsize=None)
def poisson_nd_fields(dim):
    """Exact ``u = exp(sum (-1)^(i-1) x_i) prod x_i (1 - x_i)`` and ``f = lap u`` as numpy callables.

    ``f`` is the symbolic Laplacian of ``u``.  Both take ``X`` of shape ``(N, dim)``.
    """
    import sympy

    xs = sympy.symbols(f"x1:{dim + 1}")
    u = sympy.exp(sum((-1) ** i * x for i, x in enumerate(xs))) * sympy.prod([x * (1 - x) for x in xs])
    f = sum(sympy.diff(u, x, 2) for x in xs)
    uf = sympy.lambdify([xs], u, "numpy")
    ff = sympy.lambdify([xs], f, "numpy")
    return (lambda X: np.asarray(uf(np.asarray(X, float).T), float),
            lambda X: np.asarray(ff(np.asarray(X, float).T), float))


def _solve_poisson_weak(bench, entry, opts):
    cloud, bundle = _discretize(bench, entry, opts, stabilization=entry.phg > 0)
    exact, rhs = poisson_nd_fields(bench.dim)
    # lap u = f is the stationarity condition of 1/2 |grad u|^2 + f u
    load = -rhs(cloud.positions) * cloud.volumes
    wf = WeakForm(cloud, bundle, poisson(bench.dim), body_load=load, p_hg=entry.phg,
                  hourglass_scale=opts.hourglass_scale)
    bnd = _boundary(cloud, bench.required_tags)
    ue = exact(cloud.positions)
    system = apply_dirichlet_penalty(wf.linear_system(), {int(i): float(ue[i]) for i in bnd},
                                     opts.penalty)
    u = solve_linear(system)
    return Solution(cloud, u[:, None], u, ue)


_POISSON_TABLES = {
    2: [(41, 1, 1, 0.0485, -0.0281), (41, 2, 1, 0.0262, 0.01), (41, 3, 1, 0.0139, -0.00256),
        (41, 4, 1, 0.0175, -0.00308), (81, 1, 0, 0.0379, 0.033), (81, 1, 1, 0.0179, 0.0714),
        (81, 2, 1, 0.011, 0.00505), (161, 1, 1, 0.0202, 0.0221), (161, 2, 1, 0.00501, 0.00266),
        (161, 3, 1, 0.00191, -0.000417), (201, 1, 1, 0.00777, -0.00263),
        (401, 1, 1, 0.00291, 0.0007)],
    3: [(22, 1, 1, 0.0907, -0.0406), (31, 1, 1, 0.0604, -0.0248), (41, 1, 1, 0.0485, -0.02)],
    # rows up to 16 nodes per axis in 4D and 6 in 5D fit a desktop budget
    4: [(11, 1, 1, 0.169, -0.0514), (16, 1, 1, 0.118, -0.0171)],
    5: [(6, 1, 1, 0.229, -0.114)],
}


def poisson_nd_weak(dim=2) -> Benchmark:
    """Weak-form Poisson on ``[0, 1]^dim`` with the exponential-bubble solution."""
    if dim not in _POISSON_TABLES:
        raise ConfigError(f"poisson_nd_weak supports dim in {sorted(_POISSON_TABLES)}")
    ladder = [LadderEntry(n, p, phg, l2, r) for n, p, phg, l2, r in _POISSON_TABLES[dim]]
    names = [f"{a}min" for a in ("xyz" if dim <= 3 else [f"x{k + 1}" for k in range(dim)])[:dim]]
    return Benchmark(
        f"poisson_{dim}d_weak", dim, (0.0,) * dim, (1.0,) * dim, _solve_poisson_weak, ladder,
        lambda X: poisson_nd_fields(dim)[0](X), 1, (),
        {"weight": "gauss", "gauss_shape": 3.0, "volume_rule": "cell"},
        description=f"{dim}D Poisson, nodal-integration energy with hourglass penalty")


# ---------------------------------------------------------------- Kirchhoff plate

PLATE = {"E": 30e9, "nu": 0.3, "t": 0.01, "q0": -100.0, "a": 1.0}


def plate_series(X, E=PLATE["E"], nu=PLATE["nu"], t=PLATE["t"], q0=PLATE["q0"], a=PLATE["a"],
                 m_max=39):
    """Series deflection of the uniformly loaded simply supported square plate.

    Plate ``(0, a) x (-a/2, a/2)``; odd terms ``m <= m_max``.  Returns
    ``(w, bound)`` with ``bound`` an upper bound on the omitted tail.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x, y = X[:, 0], X[:, 1]
    d0 = E * t**3 / (12 * (1 - nu**2))
    s = np.zeros(x.shape)
    for m in range(1, m_max + 1, 2):
        al = m * np.pi / 2
        ch = np.cosh(al)
        eta = 2 * al * y / a
        s += ((1 - (al * np.tanh(al) + 2) / (2 * ch) * np.cosh(eta)
               + al / (2 * ch) * (2 * y / a) * np.sinh(eta)) * np.sin(m * np.pi * x / a) / m**5)
    c = 4 * q0 * a**4 / (np.pi**5 * d0)
    # each bracket is bounded by 2 + alpha_m; sum over odd m >= M of m^-s <= (M-2)^(1-s) / (2(s-1))
    M = m_max + 2
    tail = 2 * (M - 2) ** -4 / 8 + (np.pi / 2) * (M - 2) ** -3 / 6
    return c * s, abs(c) * tail


def _center_nodes(cloud, center, count=4):
    return np.argsort(np.linalg.norm(cloud.positions - np.asarray(center), axis=1), kind="stable")[:count]


def _solve_plate(bench, entry, opts):
    cloud, bundle = _discretize(bench, entry, opts, stabilization=entry.phg > 0)
    P = PLATE
    wf = WeakForm(cloud, bundle, plate_D(P["E"], P["nu"], P["t"]), body_load=P["q0"] * cloud.volumes,
                  p_hg=entry.phg, hourglass_scale=opts.hourglass_scale)
    bnd = _boundary(cloud, bench.required_tags)
    system = apply_dirichlet_penalty(wf.linear_system(), {int(i): 0.0 for i in bnd}, opts.penalty)
    w = solve_linear(system)
    we, bound = plate_series(cloud.positions)
    ctr = _center_nodes(cloud, (0.5 * P["a"], 0.0))
    interior = np.setdiff1d(np.arange(len(cloud)), bnd)
    err = np.abs(w - we)
    return Solution(cloud, w[:, None], w, we, {
        "center": float(w[ctr].mean()), "center_exact": float(we[ctr].mean()),
        "center_error": float(w[ctr].mean() / we[ctr].mean() - 1),
        "series_tail_bound": float(bound),
        "max_error_point": cloud.positions[interior[np.argmax(err[interior])]].tolist(),
        "max_error_on_boundary": bool(err[bnd].max() > err[interior].max()),
    })


def plate_simply_supported() -> Benchmark:
    """Kirchhoff plate ``D0 lap^2 w = q0`` with ``w = 0`` on the edges, weak form."""
    return Benchmark(
        "plate_simply_supported", 2, (0.0, -0.5), (1.0, 0.5), _solve_plate,
        [LadderEntry(40, 2, 1.0), LadderEntry(40, 3, 1.0)],
        lambda X: plate_series(X)[0], 2, (),
        {"volume_rule": "tributary"}, neighbor_rule="5p+3",
        description="simply supported square plate under uniform load vs series solution")


# ---------------------------------------------------------------- Von Karman plate

VON_KARMAN = {"E": 30e6, "nu": 0.3, "t": 0.01, "q": 1000.0, "a": 1.0}


def _solve_von_karman(bench, entry, opts):
    cloud, bundle = _discretize(bench, entry, opts, stabilization=entry.phg > 0)
    P = VON_KARMAN
    mat = VonKarman(P["E"], P["nu"], P["t"])
    n = len(cloud)
    f = np.zeros(3 * n)
    f[2::3] = P["q"] * cloud.volumes
    wf = WeakForm(cloud, bundle, mat, p_hg=entry.phg, hourglass_scale=opts.hourglass_scale)
    bnd = _boundary(cloud, bench.required_tags)
    # immovable simple support: u1 = u2 = w = 0 on the edges
    dofs = np.sort(np.concatenate([3 * bnd + c for c in range(3)]))
    pen = opts.penalty or default_penalty(wf.stiffness(np.zeros(3 * n)))
    Pm = sp.csr_matrix((np.full(dofs.size, pen), (dofs, dofs)), shape=(3 * n, 3 * n))
    states = newton_solve(lambda u, s: wf.internal_force(u) + Pm @ u - s * f,
                          lambda u, s: wf.stiffness(u) + Pm,
                          np.zeros(3 * n), opts.load_steps, opts.tol, opts.max_iter, opts.log)
    ctr = _center_nodes(cloud, (0.5 * P["a"], 0.0))
    D0 = mat.bending_stiffness
    series, _ = plate_series(cloud.positions[ctr], E=P["E"], nu=P["nu"], t=P["t"], q0=P["q"], a=P["a"])
    lin = float(series.mean())
    u = states[-1].u.reshape(n, 3)
    return Solution(cloud, u, u[:, 2], None, {
        "loads": [s.load for s in states],
        "center_deflection": [float(s.u[3 * ctr + 2].mean()) for s in states],
        "linear_center_unit_load": lin,
        "iterations": [s.iter for s in states],
        "bending_stiffness": D0,
    })


def von_karman_plate() -> Benchmark:
    """``1 x 1 x 0.01`` Von Karman plate under ``q = 1000 Pa`` in ten load levels."""
    return Benchmark(
        "von_karman_plate", 2, (0.0, -0.5), (1.0, 0.5), _solve_von_karman,
        [LadderEntry(50, 2, 1.0)], None, 2, (),
        {"volume_rule": "tributary", "load_steps": 10}, neighbor_rule="5p+3",
        description="large-deflection plate, load levels 0.1 ... 1")


# ---------------------------------------------------------------- Neo-Hooke block

BLOCK = {"h": 50.0, "pressure": 3.0, "kappa": 499.92568, "mu": 1.61148}


def _interval_overlap(x, dx, lo, hi):
    return np.clip(np.minimum(x + dx / 2, hi) - np.maximum(x - dx / 2, lo), 0.0, None)


def _solve_block(bench, entry, opts):
    cloud, bundle = _discretize(bench, entry, opts, stabilization=entry.phg > 0)
    B = BLOCK
    h = B["h"]
    X = cloud.positions
    n = len(cloud)
    dx = h / (entry.nodes - 1)
    # dead pressure on the quarter patch [0, h/2]^2 of the top face
    top = np.isin(np.arange(n), cloud.tagged("zmax"))
    area = _interval_overlap(X[:, 0], dx, 0, h / 2) * _interval_overlap(X[:, 1], dx, 0, h / 2) * top
    f = np.zeros(3 * n)
    f[2::3] = -B["pressure"] * area
    wf = WeakForm(cloud, bundle, NeoHooke(B["kappa"], B["mu"]), p_hg=entry.phg,
                  hourglass_scale=opts.hourglass_scale)
    dofs = np.sort(np.concatenate([3 * cloud.tagged("xmin"), 3 * cloud.tagged("ymin") + 1,
                                   3 * cloud.tagged("zmin") + 2]))
    pen = opts.penalty or default_penalty(wf.stiffness(np.zeros(3 * n)))
    Pm = sp.csr_matrix((np.full(dofs.size, pen), (dofs, dofs)), shape=(3 * n, 3 * n))
    states = newton_solve(lambda u, s: wf.internal_force(u) + Pm @ u - s * f,
                          lambda u, s: wf.stiffness(u) + Pm,
                          np.zeros(3 * n), opts.load_steps, opts.tol, opts.max_iter, opts.log,
                          max_cutbacks=4)
    u = states[-1].u.reshape(n, 3)
    return Solution(cloud, u, -u[:, 2], None, {
        "w_max": float(-u[:, 2].min()),
        "w_max_history": [float(-s.u[2::3].min()) for s in states],
        "iterations": [s.iter for s in states],
    })


def neo_hooke_block() -> Benchmark:
    """Quarter of a nearly incompressible block pressed on its top centre."""
    return Benchmark(
        "neo_hooke_block", 3, (0.0,) * 3, (BLOCK["h"],) * 3, _solve_block,
        [LadderEntry(11, 1, 1.0), LadderEntry(21, 1, 1.0)], None, 1,
        ("xmin", "ymin", "zmin", "zmax"),
        {"volume_rule": "tributary", "load_steps": 10},
        reference={11: 19.14, 21: 20.43}, custom_cloud=False,
        description="Neo-Hooke block under 3 MPa, w_max in mm")


# ---------------------------------------------------------------- registry

CATALOG = {
    "ode_1d": ode_1d,
    "schrodinger_1d": schrodinger_1d,
    "poisson_2d_strong": poisson_2d_strong,
    "poisson_nd_weak": poisson_nd_weak,
    "plate_simply_supported": plate_simply_supported,
    "von_karman_plate": von_karman_plate,
    "neo_hooke_block": neo_hooke_block,
}

ALIASES = {
    "ode1d": ("ode_1d", {}),
    "schrodinger1d": ("schrodinger_1d", {}),
    "poisson2d_strong": ("poisson_2d_strong", {}),
    "poisson2d": ("poisson_nd_weak", {"dim": 2}),
    "poisson3d": ("poisson_nd_weak", {"dim": 3}),
    "poisson4d": ("poisson_nd_weak", {"dim": 4}),
    "poisson5d": ("poisson_nd_weak", {"dim": 5}),
    "plate": ("plate_simply_supported", {}),
    "von_karman": ("von_karman_plate", {}),
    "block": ("neo_hooke_block", {}),
}


def get_benchmark(name: str) -> Benchmark:
    """Look up a benchmark by catalog name or CLI alias."""
    if name in ALIASES:
        key, kw = ALIASES[name]
        return CATALOG[key](**kw)
    if name in CATALOG:
        return CATALOG[name]()
    raise ConfigError(f"unknown benchmark {name!r}; choose from "
                      f"{sorted(set(ALIASES) | set(CATALOG))}")


# ---------------------------------------------------------------- harness

def grid_spacing(bench: Benchmark, entry: LadderEntry) -> float:
    """Lattice spacing along the first axis."""
    return float((bench.upper[0] - bench.lower[0]) / (entry.nodes - 1))


def evaluate(bench: Benchmark, entry: LadderEntry, opts: SolveOptions | None = None):
    """Solve one ladder entry; returns ``(ErrorReport, Solution)``.

    Raises
    ------
    ConfigError
        If :meth:`Benchmark.check` reports an error.
    """
    opts = bench.options(opts)
    problems = [m for lvl, m in bench.check(entry, opts) if lvl == "error"]
    if problems:
        raise ConfigError("; ".join(problems))
    t0 = time.perf_counter()
    sol = bench.solver(bench, entry, opts)
    runtime = time.perf_counter() - t0
    if sol.exact is not None:
        l2 = l2_norm(sol.primary, sol.exact, sol.cloud.volumes)
        ratio = max_ratio_error(sol.primary, sol.exact)
    else:
        l2 = float("nan")
        ref = bench.reference.get(entry.nodes)
        ratio = peak(sol.primary) / ref - 1 if ref else float("nan")
    report = ErrorReport(len(sol.cloud), grid_spacing(bench, entry), l2, ratio, entry.order,
                         entry.phg, runtime, dict(sol.extras))
    return report, sol


def fit_rate(dx, errors):
    """Least-squares slope of ``log(error)`` against ``log(dx)``; ``None`` with fewer than two points."""
    dx = np.asarray(dx, dtype=float)
    e = np.asarray(errors, dtype=float)
    ok = np.isfinite(e) & (e > 0) & np.isfinite(dx) & (dx > 0)
    if np.unique(dx[ok]).size < 2:
        return None
    return float(np.polyfit(np.log(dx[ok]), np.log(e[ok]), 1)[0])


@dataclass
class ConvergenceResult:
    """Reports in ladder order, per-(p, p_hg) fitted rates and failed entries."""

    reports: list
    rates: dict
    failures: list

    @property
    def rate(self):
        """The fitted rate when the ladder holds a single ``(p, p_hg)`` series."""
        vals = list(self.rates.values())
        return vals[0] if len(vals) == 1 else None


def run_convergence(bench: Benchmark, ladder=None, opts: SolveOptions | None = None,
                    workers: int = 1, callback=None) -> ConvergenceResult:
    """Solve every ladder entry and fit convergence rates.

    A failing entry is logged and recorded in ``failures``; the remaining
    entries still run.  With ``workers > 1`` entries are solved in a thread
    pool.  Results, Newton log lines (``opts.log``) and
    ``callback(entry, report, solution)`` calls are delivered in ladder
    order regardless of completion order.
    """
    ladder = list(bench.ladder if ladder is None else ladder)
    if not ladder:
        raise ValueError("ladder is empty")
    opts = SolveOptions() if opts is None else opts

    def one(entry):
        lines = []
        local = replace(opts, log=lines.append if opts.log is not None else None)
        try:
            rep, sol = evaluate(bench, entry, local)
            return rep, sol if callback is not None else None, None, lines
        except (NomError, ValueError, np.linalg.LinAlgError) as exc:
            logger.warning("%s nodes=%d p=%d: %s", bench.name, entry.nodes, entry.order, exc)
            return None, None, exc, lines

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, ladder))
    else:
        results = [one(e) for e in ladder]
    reports, failures = [], []
    for entry, (rep, sol, exc, lines) in zip(ladder, results):
        if opts.log is not None:
            opts.log(f"# nodes={entry.nodes} p={entry.order} phg={entry.phg:g}")
            for line in lines:
                opts.log(line)
        if rep is None:
            failures.append((entry, exc))
            continue
        reports.append(rep)
        if callback is not None:
            callback(entry, rep, sol)
    rates = {}
    for key in dict.fromkeys((r.p, r.p_hg) for r in reports):
        grp = [r for r in reports if (r.p, r.p_hg) == key]
        rates[key] = fit_rate([r.dx for r in grp], [r.l2 for r in grp])
    return ConvergenceResult(reports, rates, failures)


def write_csv(path, reports, runtime=True):
    """Write reports under :data:`CSV_HEADER`."""
    text = "\n".join([CSV_HEADER] + [r.csv_row(runtime) for r in reports]) + "\n"
    with open(path, "w", newline="") as fh:
        fh.write(text)
