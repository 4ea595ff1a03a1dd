import numpy as np
import pytest
from scipy.optimize import minimize

from src.errors import AdmmError, ConfigError, ForwardModelError
from src.fem.space import P1Space
from src.models.base import InversionModel
from src.optim import incg
from src.optim.admm import (AdmmSettings, AdmmState, NewtonSettings, augmented_lagrangian, check_convergence,
                            residuals, run, subproblem_solve, update_rho, z_update, z_update_direct)
from src.optim.objectives import ConsensusObjective
from src.regularization.total_variation import TotalVariation, TvSettings

TIGHT = NewtonSettings(grad_abs_tol=1e-13, grad_rel_tol=1e-13, max_iter=50)


class MassMisfit(InversionModel):
    """1/2 (m - d)^T M (m - d), optionally failing on every cost evaluation"""

    def __init__(self, mesh, target, fail=False):
        super().__init__(mesh)
        self.target = np.asarray(target, dtype=float)
        self.mass = P1Space.for_mesh(mesh).mass
        self.fail = fail

    def cost(self, m):
        if self.fail:
            raise ForwardModelError("forward solve diverged")
        self.counters.forward += 1
        d = self._check(m) - self.target
        return 0.5 * float(d @ (self.mass @ d))

    def gradient(self, m):
        self.counters.adjoint += 1
        return self.mass @ (self._check(m) - self.target)

    def hessian_action(self, m, direction, mode="full"):
        self.counters.incremental += 1
        return self.mass @ direction

    def state_misfit(self, m):
        return self.cost(m)

    def observe(self, m):
        return self._check(m).copy()


def tikhonov(mesh, alpha):
    return TotalVariation(mesh, TvSettings(alpha_tv=0.0, alpha_tk=alpha))


def l2_settings(**changes):
    base = dict(rho0=1.0, consensus_norm="L2", eps_abs=1e-10, eps_rel=1e-8, max_global_iter=300,
                subproblem=incg.IncgSettings(max_iter=20), z_solver=TIGHT)
    base.update(changes)
    return AdmmSettings(**base)


def test_rho_update_branches():
    assert update_rho(0.5, 10.0, 1.0, 2.0, 3.0) == (1.5, pytest.approx(1.0 / 3.0))
    assert update_rho(0.5, 1.0, 10.0, 2.0, 3.0) == (pytest.approx(0.5 / 3.0), pytest.approx(3.0))
    assert update_rho(0.5, 1.0, 1.0, 2.0, 3.0) == (0.5, 1.0)
    # ties do not trigger an update
    assert update_rho(0.5, 2.0, 1.0, 2.0, 3.0)[0] == 0.5


def test_convergence_check_is_inclusive():
    assert check_convergence(1.0, 1.0, [0.0], 0.0, 1.0, 0.1)
    assert check_convergence(1.5, 1.5, [1.0, 1.0], 1.0, 1.0, 0.5)
    assert not check_convergence(1.0 + 1e-9, 1.0, [0.0], 0.0, 1.0, 0.1)
    assert not check_convergence(1.0, 1.0 + 1e-9, [0.0], 0.0, 1.0, 0.1)


@pytest.mark.parametrize("changes", [{"rho0": 0.0}, {"mu": 1.0}, {"tau": 0.5}, {"eps_abs": 0.0},
                                     {"max_global_iter": 0}, {"consensus_norm": "H2"}, {"z_update": "avg"}])
def test_settings_validation(changes):
    with pytest.raises(ConfigError):
        AdmmSettings(**changes)


def test_residuals(disc1):
    norm = P1Space.for_mesh(disc1).norm_operator("L2")
    n = disc1.n_vertices
    area = float(np.ones(n) @ (norm.matrix @ np.ones(n)))
    state = AdmmState([np.ones(n), 3.0 * np.ones(n)], 2.0 * np.ones(n), [np.zeros(n)] * 2, rho=2.0)
    r, s = residuals(state, np.zeros(n), norm=norm)
    assert r == pytest.approx(np.sqrt(area))
    assert s == pytest.approx(2.0 * 2.0 * np.sqrt(area))


def test_quadratic_z_update_matches_a_dense_solve(disc1, rng):
    alpha, rho = 0.3, 2.0
    reg = tikhonov(disc1, alpha)
    norm = P1Space.for_mesh(disc1).norm_operator("H1")
    M = P1Space.for_mesh(disc1).mass.toarray()
    W = norm.matrix.toarray()
    m_bar, u_bar = rng.normal(size=disc1.n_vertices), rng.normal(0.0, 0.1, disc1.n_vertices)
    expected = np.linalg.solve(alpha * M + rho * W, rho * W @ (m_bar + u_bar))
    z = z_update(m_bar, u_bar, rho, reg, "H1", TIGHT, norm)
    np.testing.assert_allclose(z, expected, rtol=1e-9, atol=1e-11)


def test_tv_z_update_matches_a_generic_minimizer(disc1, rng):
    reg = TotalVariation(disc1, TvSettings(alpha_tv=0.1, alpha_tk=0.01, eps=1e-2))
    norm = P1Space.for_mesh(disc1).norm_operator("H1")
    w = rng.normal(size=disc1.n_vertices)
    objective = ConsensusObjective(reg, [w], 1.0, norm, q=1)
    reference = minimize(objective.cost, w, jac=objective.gradient, method="BFGS",
                         options={"gtol": 1e-11, "maxiter": 2000}).x
    z = z_update(w, np.zeros_like(w), 1.0, reg, "H1", TIGHT, norm)
    np.testing.assert_allclose(z, reference, atol=1e-5)
    assert objective.cost(z) <= objective.cost(reference) + 1e-12


def test_mean_and_direct_z_updates_agree(disc1, rng):
    reg = TotalVariation(disc1, TvSettings())
    norm = P1Space.for_mesh(disc1).norm_operator("H1")
    m_list = [rng.normal(size=disc1.n_vertices) for _ in range(3)]
    u_list = [rng.normal(0.0, 0.1, disc1.n_vertices) for _ in range(3)]
    z_mean, info = z_update(np.mean(m_list, axis=0), np.mean(u_list, axis=0), 0.7, reg, "H1", TIGHT, norm,
                            return_info=True)
    z_direct = z_update_direct(m_list, u_list, 0.7, reg, "H1", TIGHT, norm)
    assert info.converged
    np.testing.assert_allclose(z_mean, z_direct, rtol=1e-8, atol=1e-10)


def test_subproblem_minimizer(disc1, rng):
    n = disc1.n_vertices
    d, z, u = rng.normal(size=n), rng.normal(size=n), rng.normal(0.0, 0.1, n)
    rho = 4.0
    m = subproblem_solve(MassMisfit(disc1, d), z, u, rho, 2, incg.IncgSettings(max_iter=20), "L2")
    np.testing.assert_allclose(m, (d + rho * (z - u)) / (1.0 + rho), atol=1e-7)


@pytest.mark.parametrize("mode", ["mean", "direct"])
def test_run_reaches_the_consensus_minimizer(disc1, rng, mode):
    alpha = 0.5
    n = disc1.n_vertices
    targets = [rng.normal(size=n) for _ in range(3)]
    models = [MassMisfit(disc1, d) for d in targets]
    state = run(models, tikhonov(disc1, alpha), l2_settings(z_update=mode))
    assert state.converged
    assert not state.failures
    np.testing.assert_allclose(state.z, np.mean(targets, axis=0) / (1.0 + alpha), atol=1e-6)
    history = state.history_frame()
    assert len(history) == state.k
    assert list(history["k"]) == list(range(1, state.k + 1))
    assert history["forward_solves"].is_monotonic_increasing


def test_rescaled_duals_keep_the_z_optimality_condition(disc1, rng):
    alpha = 0.5
    n = disc1.n_vertices
    models = [MassMisfit(disc1, rng.normal(size=n)) for _ in range(2)]
    state = run(models, tikhonov(disc1, alpha), l2_settings(rho0=1e-3, max_global_iter=6))
    assert state.history_frame()["rho"].nunique() > 1
    # z minimizes alpha/2 |z|^2 + rho/2 |w - z|^2, so rho * mean(u) = alpha * z after every rescaling
    np.testing.assert_allclose(state.rho * np.mean(state.u_list, axis=0), alpha * state.z, rtol=1e-6, atol=1e-10)


def test_run_records_error_column(disc1, rng):
    n = disc1.n_vertices
    models = [MassMisfit(disc1, rng.normal(size=n))]
    state = run(models, tikhonov(disc1, 0.1), l2_settings(max_global_iter=3),
                error=lambda z: float(np.linalg.norm(z)))
    assert state.history_frame()["rel_error"].notna().all()


def test_failed_subproblem_keeps_its_iterate(disc1, rng):
    n = disc1.n_vertices
    m0 = rng.normal(size=n)
    models = [MassMisfit(disc1, rng.normal(size=n)), MassMisfit(disc1, np.zeros(n), fail=True)]
    state = run(models, tikhonov(disc1, 0.1), l2_settings(max_global_iter=2), m0=m0)
    assert [(k, i) for k, i, _ in state.failures] == [(1, 1), (2, 1)]
    np.testing.assert_array_equal(state.m_list[1], m0)


def test_every_subproblem_failing_raises(disc1):
    n = disc1.n_vertices
    models = [MassMisfit(disc1, np.zeros(n), fail=True) for _ in range(2)]
    with pytest.raises(AdmmError, match="all 2 subproblems failed at iteration 1"):
        run(models, tikhonov(disc1, 0.1), l2_settings())


def test_run_needs_models(disc1):
    with pytest.raises(AdmmError):
        run([], tikhonov(disc1, 0.1))


def test_one_newton_step_solves_a_quadratic_subproblem(disc1, rng):
    n = disc1.n_vertices
    d, z, u = rng.normal(size=n), rng.normal(size=n), rng.normal(0.0, 0.1, n)
    rho = 2.5
    m = subproblem_solve(MassMisfit(disc1, d), z, u, rho, 3, incg.IncgSettings(max_iter=1), "L2",
                         m_start=rng.normal(0.0, 5.0, n))
    np.testing.assert_allclose(m, (d + rho * (z - u)) / (1.0 + rho), rtol=1e-9, atol=1e-9)


def test_augmented_lagrangian_is_nonincreasing_at_fixed_rho(disc1, rng):
    # shared data and alpha <= rho make every iteration a descent step
    n = disc1.n_vertices
    target = rng.normal(size=n)
    models = [MassMisfit(disc1, target) for _ in range(3)]
    reg = tikhonov(disc1, 0.5)
    state = run(models, reg, l2_settings(rho0=1.0, mu=1e12, max_global_iter=12))
    history = state.history_frame()
    lagrangian = history["lagrangian"].to_numpy(dtype=float)
    assert len(lagrangian) >= 3
    assert history["rho"].nunique() == 1
    assert np.all(np.diff(lagrangian) <= 1e-12 * max(1.0, np.abs(lagrangian).max()))
    norm = P1Space.for_mesh(disc1).norm_operator("L2")
    assert augmented_lagrangian(models, reg, state, norm) == pytest.approx(lagrangian[-1], rel=1e-10, abs=1e-14)
