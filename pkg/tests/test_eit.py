import numpy as np
import pytest

from src.errors import ConfigError, FieldError, MeshError
from src.experiments.phantoms import phantom
from src.experiments.self_check import CHECK_DRAWS, gradient_fd_gap, hessian_fd_gap
from src.fem.mesh import build_unit_disc_mesh
from src.fem.space import Field
from src.models.eit import (EitModel, SourceSpec, boundary_current, equispaced_sources, forward_solve,
                            gradient, wrap_angle)


@pytest.fixture
def eit(disc3):
    return EitModel(disc3, equispaced_sources(1)[0])


def test_equispaced_source_angles():
    sources = equispaced_sources(4)
    np.testing.assert_allclose([s.theta_i for s in sources], 2 * np.pi * (np.arange(4) + 0.5) / 4)
    with pytest.raises(ConfigError):
        equispaced_sources(0)


def test_wrap_angle():
    assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)


def test_boundary_current_peaks_at_the_source():
    spec = SourceSpec(np.pi / 3, gamma=0.1, beta=10.0)
    assert boundary_current(spec, np.pi / 3) == pytest.approx(0.1)
    assert boundary_current(spec, np.pi / 3 + 2 * np.pi) == pytest.approx(0.1)
    assert boundary_current(spec, np.pi / 3 + 1.0) == pytest.approx(0.1 * np.exp(-10.0))


def test_source_spec_validation():
    with pytest.raises(ConfigError):
        SourceSpec(0.0, gamma=-1.0)
    with pytest.raises(ConfigError):
        SourceSpec(0.0, beta=0.0)


def test_ground_node_must_be_on_the_boundary(disc3):
    with pytest.raises(MeshError):
        EitModel(disc3, SourceSpec(0.0, ground_node=0))


def test_forward_state_is_grounded(eit, disc3):
    u = eit.forward(np.zeros(disc3.n_vertices))
    assert u[eit.ground_node] == 0.0
    assert np.abs(u).max() > 0


def test_conductivity_scaling(eit, disc3, rng):
    m = rng.normal(0.0, 0.3, disc3.n_vertices)
    u = eit.forward(m).copy()
    np.testing.assert_allclose(eit.forward(m + np.log(2.0)), u / 2.0, rtol=1e-9, atol=1e-14)


def test_misfit_of_a_constant_residual(eit, disc3):
    m = np.zeros(disc3.n_vertices)
    eit.data = eit.observe(m) - 0.3
    perimeter = 64 * 2 * np.sin(np.pi / 64)
    assert eit.cost(m) == pytest.approx(0.5 * 0.09 * perimeter)
    assert eit.state_misfit(m) == pytest.approx(0.09 * perimeter)


def test_data_is_validated(eit):
    with pytest.raises(FieldError):
        eit.data = np.zeros(3)


def test_solve_counters(eit, disc3, rng):
    m = rng.normal(0.0, 0.2, disc3.n_vertices)
    eit.cost(m)
    eit.gradient(m)
    assert eit.counters.as_dict() == {"forward": 1, "adjoint": 1, "incremental": 0}
    eit.hessian_action(m, np.ones(disc3.n_vertices))
    assert eit.counters.incremental == 2
    eit.cost(m + 0.1)
    assert eit.counters.forward == 2


def test_derivatives_match_finite_differences(eit, disc3, rng):
    eit.data = eit.observe(phantom(disc3).values) + rng.normal(0.0, 1e-3, disc3.n_vertices)
    for _ in range(CHECK_DRAWS):
        m = rng.normal(0.0, 0.2, disc3.n_vertices)
        v = rng.normal(size=disc3.n_vertices)
        assert gradient_fd_gap(eit.cost, eit.gradient, m, v) < 1e-4
        assert hessian_fd_gap(eit.gradient, eit.hessian_action, m, v) < 1e-4


def test_hessian_is_symmetric(eit, disc3, rng):
    eit.data = rng.normal(0.0, 0.01, disc3.n_vertices)
    m = rng.normal(0.0, 0.2, disc3.n_vertices)
    v, w = rng.normal(size=(2, disc3.n_vertices))
    for mode in ("full", "gauss_newton"):
        wHv = w @ eit.hessian_action(m, v, mode)
        vHw = v @ eit.hessian_action(m, w, mode)
        assert wHv == pytest.approx(vHw, rel=1e-8)


def test_gauss_newton_is_exact_at_a_noiseless_optimum(eit, disc3, rng):
    truth = phantom(disc3).values
    eit.data = eit.observe(truth)
    v = rng.normal(size=disc3.n_vertices)
    np.testing.assert_allclose(eit.hessian_action(truth, v, "gauss_newton"),
                               eit.hessian_action(truth, v, "full"), rtol=1e-10, atol=1e-16)
    np.testing.assert_allclose(eit.gradient(truth), 0.0, atol=1e-14)


def test_gauss_newton_hessian_is_positive(eit, disc3, rng):
    eit.data = rng.normal(0.0, 0.01, disc3.n_vertices)
    m = np.zeros(disc3.n_vertices)
    v = rng.normal(size=disc3.n_vertices)
    assert v @ eit.hessian_action(m, v, "gauss_newton") >= 0.0


def test_unknown_hessian_mode(eit, disc3):
    with pytest.raises(ConfigError):
        eit.hessian_action(np.zeros(disc3.n_vertices), np.ones(disc3.n_vertices), "newton")


def test_field_wrappers(eit, disc3):
    m = Field.constant(disc3, 0.0)
    assert forward_solve(eit, m).mesh is disc3
    assert gradient(eit, m).values.shape == (disc3.n_vertices,)


def test_boundary_traces_converge_at_second_order():
    # the ground node sinks the net current, so traces are compared up to a constant away from it
    meshes = [build_unit_disc_mesh(level) for level in (3, 4, 5)]
    coarse = meshes[0]
    nodes = coarse.boundary_vertices
    nodes = nodes[np.abs(wrap_angle(coarse.vertex_angles()[nodes])) > 0.5]
    traces = []
    for mesh in meshes:
        u = EitModel(mesh, equispaced_sources(1)[0]).forward(np.zeros(mesh.n_vertices))[nodes]
        traces.append(u - u.mean())
    first = np.abs(traces[1] - traces[0]).max()
    second = np.abs(traces[2] - traces[1]).max()
    assert second < first
    assert first / second > 2.5
