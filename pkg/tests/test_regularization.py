import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.errors import ConfigError, FieldError, ForwardModelError
from src.experiments.self_check import CHECK_DRAWS, gradient_fd_gap, hessian_fd_gap
from src.fem.mesh import build_unit_disc_mesh
from src.fem.space import Field, P1Space
from src.regularization.qpact_regularizer import (QpactRegSettings, QpactRegularizer, qpact_reg_eval,
                                                  qpact_reg_gradient, qpact_reg_hessian_action)
from src.regularization.total_variation import TotalVariation, TvSettings, tv_eval, tv_gradient
from src.regularization.transforms import ParameterTransform, TransformedRegularizer


def test_tv_of_a_constant(square):
    n = square.n_vertices
    at_reference = TotalVariation(square, TvSettings(m_ref=2.0))
    assert at_reference.cost(np.full(n, 2.0)) == pytest.approx(0.1 * np.sqrt(1e-4))
    np.testing.assert_allclose(at_reference.gradient(np.full(n, 2.0)), 0.0, atol=1e-14)
    default = TotalVariation(square, TvSettings())
    assert default.cost(np.full(n, 2.0)) == pytest.approx(0.1 * np.sqrt(1e-4) + 0.5 * 0.01 * 4.0)


def test_tv_settings_are_validated():
    with pytest.raises(ConfigError):
        TvSettings(eps=0.0)
    with pytest.raises(ConfigError):
        TvSettings(alpha_tv=-1.0)


def test_reference_must_match_the_mesh(square):
    with pytest.raises(FieldError):
        TotalVariation(square, TvSettings(m_ref=np.zeros(3)))


@settings(max_examples=CHECK_DRAWS)
@given(st.integers(min_value=0, max_value=2 ** 31))
def test_tv_derivatives_match_finite_differences(seed):
    mesh = build_unit_disc_mesh(2)
    tv = TotalVariation(mesh, TvSettings())
    rng = np.random.default_rng(seed)
    m, v = rng.normal(size=mesh.n_vertices), rng.normal(size=mesh.n_vertices)
    assert gradient_fd_gap(tv.cost, tv.gradient, m, v) < 1e-4
    assert hessian_fd_gap(tv.gradient, tv.hessian_action, m, v) < 1e-4


@given(st.integers(min_value=0, max_value=2 ** 31), st.floats(min_value=0.0, max_value=1.0))
def test_tv_is_convex_along_segments(seed, lam):
    mesh = build_unit_disc_mesh(2)
    tv = TotalVariation(mesh, TvSettings())
    rng = np.random.default_rng(seed)
    m1, m2 = rng.normal(0.0, 2.0, size=(2, mesh.n_vertices))
    assert tv.cost(lam * m1 + (1 - lam) * m2) <= lam * tv.cost(m1) + (1 - lam) * tv.cost(m2) + 1e-10


def test_tv_hessian_matrix_matches_action(disc2, rng):
    tv = TotalVariation(disc2, TvSettings())
    m, v = rng.normal(size=disc2.n_vertices), rng.normal(size=disc2.n_vertices)
    np.testing.assert_allclose(tv.hessian_matrix(m) @ v, tv.hessian_action(m, v), rtol=1e-10, atol=1e-12)
    H = tv.hessian_matrix(m)
    assert abs(H - H.T).max() < 1e-12


def test_tv_field_wrappers(disc2, rng):
    m = Field(disc2, rng.normal(size=disc2.n_vertices))
    settings = TvSettings()
    assert tv_eval(m, settings) == pytest.approx(TotalVariation(disc2, settings).cost(m.values))
    assert tv_gradient(m, settings).mesh is disc2


def test_qpact_regularizer_at_zero(square):
    reg = QpactRegularizer(square)
    n = square.n_vertices
    expected = (1e-3 + 1e-6) * np.sqrt(1e-4)
    assert reg.cost(np.zeros(3 * n)) == pytest.approx(expected)


def test_qpact_quadratic_terms_have_no_half(square):
    reg = QpactRegularizer(square, QpactRegSettings(delta_s=0.5, delta_cthb=0.0, gamma_cthb=0.0))
    n = square.n_vertices
    x = np.concatenate([np.ones(n), np.zeros(n), np.zeros(n)])
    assert reg.cost(x) == pytest.approx(0.5)
    M = P1Space.for_mesh(square).mass
    np.testing.assert_allclose(reg.gradient(x)[:n], 2.0 * 0.5 * (M @ np.ones(n)), rtol=1e-12)


def test_qpact_regularizer_derivatives(square, rng):
    reg = QpactRegularizer(square)
    n = square.n_vertices
    for _ in range(CHECK_DRAWS):
        x = np.concatenate([rng.uniform(0.2, 0.8, n), rng.uniform(0.5, 2.0, n), rng.uniform(0.5, 2.0, n)])
        v = rng.normal(size=3 * n)
        assert gradient_fd_gap(reg.cost, reg.gradient, x, v) < 1e-4
        assert hessian_fd_gap(reg.gradient, reg.hessian_action, x, v) < 1e-4
    np.testing.assert_allclose(reg.hessian_matrix(x) @ v, reg.hessian_action(x, v), rtol=1e-10, atol=1e-12)


def test_qpact_regularizer_field_wrappers(square):
    s, c, mus = (Field.constant(square, value) for value in (0.5, 1.0, 1.0))
    settings = QpactRegSettings()
    assert qpact_reg_eval(s, c, mus, settings) > 0
    assert len(qpact_reg_gradient(s, c, mus, settings)) == 3


def test_qpact_hessian_action_wrapper_matches_finite_differences(square, rng):
    n = square.n_vertices
    settings = QpactRegSettings()
    blocks = [rng.uniform(0.2, 0.8, n), rng.uniform(0.5, 2.0, n), rng.uniform(0.5, 2.0, n)]
    fields = [Field(square, values) for values in blocks]
    directions = [Field(square, rng.normal(size=n)) for _ in range(3)]
    action = qpact_reg_hessian_action(*fields, directions, settings)
    h = 1e-5
    plus = qpact_reg_gradient(*(Field(square, f.values + h * d.values) for f, d in zip(fields, directions)),
                              settings)
    minus = qpact_reg_gradient(*(Field(square, f.values - h * d.values) for f, d in zip(fields, directions)),
                               settings)
    numeric = np.concatenate([(p.values - m.values) / (2 * h) for p, m in zip(plus, minus)])
    analytic = np.concatenate([block.values for block in action])
    assert all(block.mesh is square for block in action)
    assert np.linalg.norm(analytic - numeric) <= 1e-4 * np.linalg.norm(analytic)


def test_qpact_settings_are_validated():
    with pytest.raises(ConfigError):
        QpactRegSettings(gamma_s=-1.0)


def test_transform_maps_into_the_admissible_set(rng):
    transform = ParameterTransform(("logit", "log", "identity"), 5)
    x = rng.normal(size=15)
    p = transform.to_physical(x)
    assert np.all((p[:5] > 0) & (p[:5] < 1))
    assert np.all(p[5:10] > 0)
    np.testing.assert_allclose(transform.from_physical(p), x, rtol=1e-10, atol=1e-12)


def test_transform_derivatives(rng):
    transform = ParameterTransform(("logit", "log"), 4)
    x, h = rng.normal(size=8), 1e-6
    numeric = (transform.to_physical(x + h) - transform.to_physical(x - h)) / (2 * h)
    np.testing.assert_allclose(transform.first_derivative(x), numeric, rtol=1e-6)
    numeric2 = (transform.first_derivative(x + h) - transform.first_derivative(x - h)) / (2 * h)
    np.testing.assert_allclose(transform.second_derivative(x), numeric2, rtol=1e-5, atol=1e-9)


def test_transform_domain_errors():
    with pytest.raises(ConfigError):
        ParameterTransform(("sqrt",), 2)
    with pytest.raises(ForwardModelError):
        ParameterTransform(("logit",), 2).from_physical(np.array([0.5, 1.0]))
    with pytest.raises(ForwardModelError):
        ParameterTransform(("log",), 2).from_physical(np.array([0.5, 0.0]))


def test_transformed_regularizer_chain_rule(square, rng):
    n = square.n_vertices
    transform = ParameterTransform(("logit", "log", "log"), n)
    reg = TransformedRegularizer(QpactRegularizer(square), transform)
    x = rng.normal(0.0, 0.5, 3 * n)
    v = rng.normal(size=3 * n)
    assert gradient_fd_gap(reg.cost, reg.gradient, x, v) < 1e-4
    assert hessian_fd_gap(reg.gradient, reg.hessian_action, x, v) < 1e-4
    np.testing.assert_allclose(reg.hessian_matrix(x, clip_curvature=False) @ v, reg.hessian_action(x, v),
                               rtol=1e-9, atol=1e-12)
    clipped = reg.hessian_matrix(x)
    assert np.all(clipped.diagonal() >= reg.hessian_matrix(x, clip_curvature=False).diagonal() - 1e-15)


def test_transformed_regularizer_size_mismatch(square):
    with pytest.raises(ConfigError):
        TransformedRegularizer(QpactRegularizer(square), ParameterTransform(("log",), square.n_vertices))
