import numpy as np
import pytest
import scipy.sparse as sp
from conftest import fd_gradient, fd_jacobian, rel_err

from honom.assembly import (AssembledSystem, WeakForm, apply_dirichlet_penalty,
                            assemble_strong, default_penalty, local_dofs, newton_solve,
                            smallest_eigenpair, solve_linear)
from honom.exceptions import InvertedElement, NoConvergence, SolveFailed
from honom.materials import NeoHooke, QuadraticMaterial, plane_stress_D, poisson
from honom.operators import build_operators
from honom.point_cloud import build_grid, build_supports, default_neighbor_count


def thomas(a, b, c, d):
    """Tridiagonal solve; ``a`` sub, ``b`` main, ``c`` super diagonal."""
    n = len(b)
    cp, dp = np.zeros(n), np.zeros(n)
    cp[0], dp[0] = c[0] / b[0], d[0] / b[0]
    for i in range(1, n):
        m = b[i] - a[i - 1] * cp[i - 1]
        cp[i] = c[i] / m if i < n - 1 else 0.0
        dp[i] = (d[i] - a[i - 1] * dp[i - 1]) / m
    x = np.zeros(n)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def setup(dims=(6, 6), order=2, weight="const", seed=0, perturb=0.3):
    c = build_grid([0] * len(dims), [1] * len(dims), list(dims), perturbation=perturb, seed=seed)
    s = build_supports(c, default_neighbor_count(c.dim, order) + 3, weight)
    return c, build_operators(c, s, order)


def test_solve_linear_matches_thomas():
    rng = np.random.default_rng(0)
    n = 50
    a, c = rng.uniform(-1, 1, n - 1), rng.uniform(-1, 1, n - 1)
    b = 4 + rng.random(n)
    d = rng.normal(size=n)
    A = sp.diags([a, b, c], [-1, 0, 1], format="csr")
    assert rel_err(solve_linear(AssembledSystem(A, d)), thomas(a, b, c, d)) < 1e-12


def test_solve_linear_failures():
    A = sp.csr_matrix(np.array([[1.0, 0], [0, 0]]))
    with pytest.raises(SolveFailed, match="structurally"):
        solve_linear(AssembledSystem(A, np.ones(2)))
    A = sp.csr_matrix(np.array([[1.0, 1], [1, 1]]))
    with pytest.raises(SolveFailed):
        solve_linear(AssembledSystem(A, np.array([1.0, 2.0])))
    with pytest.raises(SolveFailed, match="inconsistent"):
        solve_linear(AssembledSystem(sp.eye(3, format="csr"), np.ones(2)))


def test_strong_poisson_1d_is_exact_for_quadratics():
    c = build_grid([0], [1], [11])
    b = build_operators(c, build_supports(c, 2), 2)
    ends = {0: 0.0, 10: 0.0}
    sysm = assemble_strong(c, b, [((2,), 1.0)], -2.0, ends)
    x = c.positions[:, 0]
    assert np.allclose(solve_linear(sysm), x * (1 - x), atol=1e-12)
    # Dirichlet rows are identity rows
    row = sysm.matrix.getrow(0).toarray().ravel()
    assert row[0] == 1 and np.count_nonzero(row) == 1
    with pytest.raises(ValueError, match="order"):
        assemble_strong(c, b, [((3,), 1.0)], 0.0)


def test_penalty_approaches_exact_constraint():
    # 1D Laplace stiffness, left end clamped to 1 by penalty
    n = 20
    K = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tolil()
    K[0, 0] = K[-1, -1] = 1.0
    f = np.zeros(n)
    f[-1] = 1.0
    K = K.tocsr()
    errs = []
    for pen in (1e2, 1e4, 1e6, 1e8):
        u = solve_linear(apply_dirichlet_penalty(AssembledSystem(K, f), {0: 1.0}, pen))
        exact = 1.0 + np.arange(n)  # slope fixed by the end load
        errs.append(np.abs(u - exact).max())
    assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
    # the clamped value drifts by load / penalty
    assert errs[-1] == pytest.approx(1e-8, rel=1e-3)
    assert default_penalty(K) == pytest.approx(1e6 * (2 + 2 * (n - 2)) / n)


def test_penalty_validation():
    s = AssembledSystem(sp.eye(2, format="csr"), np.zeros(2))
    assert apply_dirichlet_penalty(s, {}) is s
    with pytest.raises(ValueError):
        apply_dirichlet_penalty(s, {0: 1.0}, -1.0)
    with pytest.raises(KeyError):
        apply_dirichlet_penalty(s, {5: 1.0})


def test_eigen_dense_and_sparse_agree():
    n = 200
    h = 1 / (n + 1)
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsc() / h**2
    l1, v1 = smallest_eigenpair(A)
    l2, v2 = smallest_eigenpair(A, dense_limit=10)
    exact = 4 / h**2 * np.sin(np.pi * h / 2) ** 2
    assert l1 == pytest.approx(exact, rel=1e-10) and l2 == pytest.approx(exact, rel=1e-8)
    assert np.allclose(v1, v2, atol=1e-8)
    assert v1[np.argmax(np.abs(v1))] > 0


def test_generalized_eigenproblem():
    A = np.diag([2.0, 6.0])
    B = np.diag([1.0, 2.0])
    lam, v = smallest_eigenpair(A, B)
    assert lam == pytest.approx(2.0) and np.allclose(np.abs(v), [1, 0])


@pytest.mark.parametrize("p_hg", [0.0, 0.5])
def test_weak_form_derivatives_poisson(p_hg):
    c, b = setup()
    rng = np.random.default_rng(1)
    f = rng.normal(size=len(c))
    wf = WeakForm(c, b, poisson(2), body_load=f, p_hg=p_hg)
    u = rng.normal(size=len(c))
    assert rel_err(wf.residual(u), fd_gradient(wf.energy, u)) < 1e-6
    assert rel_err(wf.stiffness(u).toarray(), fd_jacobian(wf.residual, u)) < 1e-6
    K = wf.stiffness().toarray()
    assert np.allclose(K, K.T, atol=1e-10 * np.abs(K).max())


def test_weak_form_hourglass_energy_is_psd_and_kills_polynomials():
    c, b = setup(order=1)
    wf = WeakForm(c, b, poisson(2), p_hg=1.0)
    K_hg = wf._K_hg.toarray()
    assert np.linalg.eigvalsh(K_hg).min() > -1e-10 * np.abs(K_hg).max()
    x = c.positions
    assert np.abs(K_hg @ (1 + 2 * x[:, 0] - x[:, 1])).max() < 1e-10 * np.abs(K_hg).max()


def test_weak_form_vector_field():
    c, b = setup(order=1)
    rng = np.random.default_rng(2)
    wf = WeakForm(c, b, plane_stress_D(100.0, 0.3), p_hg=0.3)
    u = rng.normal(size=2 * len(c)) * 0.1
    assert rel_err(wf.residual(u), fd_gradient(wf.energy, u)) < 1e-6
    assert local_dofs(b, 2).shape == (len(c), 2 * b.nodes.shape[1])
    # rigid translation costs nothing
    t = np.tile([0.3, -0.2], len(c))
    assert np.abs(wf.residual(t)).max() < 1e-9


def test_weak_form_neo_hooke():
    c, b = setup(dims=(4, 4, 4), order=1, perturb=0.2)
    rng = np.random.default_rng(3)
    wf = WeakForm(c, b, NeoHooke(20.0, 1.0), p_hg=1.0)
    u = rng.normal(size=3 * len(c)) * 0.01
    assert rel_err(wf.residual(u), fd_gradient(wf.energy, u)) < 1e-6
    assert rel_err(wf.stiffness(u).toarray(), fd_jacobian(wf.residual, u)) < 1e-5
    # uniform compression inverting every point
    with pytest.raises(InvertedElement):
        wf.energy(-2.0 * c.positions.ravel())


def test_weak_form_validation():
    c, b = setup(order=1)
    with pytest.raises(ValueError, match="beyond"):
        WeakForm(c, b, QuadraticMaterial(((0, (2, 0)),), np.eye(1)))
    with pytest.raises(ValueError, match="shape"):
        WeakForm(c, b, poisson(2), body_load=np.ones(3))
    with pytest.raises(ValueError, match="quadratic"):
        WeakForm(c, b, _Cubic()).linear_system()


class _Cubic:
    """Scalar energy ``u^4/4 - load * u`` per dof, for Newton tests."""

    selector = ((0, (1, 0)),)
    n_comp = 1
    linear = False
    stiffness_scale = 1.0

    def energy(self, g):
        return 0.25 * g[:, 0] ** 4

    def first_derivative(self, g):
        return g**3

    def second_derivative(self, g):
        return 3 * g[:, :, None] ** 2


def test_newton_quadratic_convergence_on_cubic():
    # u^3 + u = load * 10
    res = lambda u, lam: u**3 + u - 10 * lam
    jac = lambda u, lam: sp.csr_matrix(np.diag(3 * u**2 + 1))
    lines = []
    states = newton_solve(res, jac, np.zeros(1), load_steps=2, tol=1e-12, log=lines.append)
    assert len(states) == 2 and states[1].load == 1.0
    assert states[1].u[0] ** 3 + states[1].u[0] == pytest.approx(10.0, rel=1e-12)
    step, it, rel, rn = lines[0].split()
    assert step == "1" and it == "1" and float(rel) == 1.0
    # relative increments decay quadratically near the root
    rels = [float(l.split()[2]) for l in lines if l.startswith("2 ")]
    assert rels[-2] < 1e-5 and rels[-1] < 1e-12


def test_newton_linear_reports_one_iteration():
    A = sp.csr_matrix(np.array([[2.0, 1], [1, 3]]))
    st = newton_solve(lambda u, lam: A @ u - lam * np.ones(2), lambda u, lam: A, np.zeros(2))
    assert st[0].iter == 1
    assert np.allclose(A @ st[0].u, 1.0)


def test_newton_no_convergence():
    # Newton on arctan diverges from |u0| beyond about 1.39
    res = lambda u, lam: np.arctan(u)
    jac = lambda u, lam: sp.csr_matrix(np.diag(1 / (1 + u**2)))
    with pytest.raises(NoConvergence) as err:
        newton_solve(res, jac, np.array([3.0]), max_iter=5)
    assert err.value.step == 1


def test_newton_cutback_recovers():
    # u = 10 * load; an increment opening a gap above 3 "inverts"
    def res(u, lam):
        if abs(10 * lam - u[0]) > 3.0:
            raise InvertedElement("increment too large")
        return u - 10 * lam

    jac = lambda u, lam: sp.eye(1, format="csr")
    with pytest.raises(InvertedElement) as err:
        newton_solve(res, jac, np.zeros(1), max_cutbacks=1)
    assert err.value.step == 1 and err.value.iteration == 1
    st = newton_solve(res, jac, np.zeros(1), max_cutbacks=2)
    assert st[0].u[0] == pytest.approx(10.0) and st[0].iter == 4


def test_newton_rejects_bad_tol():
    with pytest.raises(ValueError):
        newton_solve(None, None, np.zeros(1), tol=0)
