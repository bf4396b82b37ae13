import numpy as np
import pytest

from rothe_mixture import model
from rothe_mixture.model import (Coefficient, ModelError, affine, constant, infimum_bounds,
                                 product, table, validate_model)

from conftest import make_spec


def test_reservoir_with_influx_validates():
    spec = make_spec(jhat=np.array([0.0, 1.0, 1.0]), phi_res=np.array([0.0, 0.5, 0.5]))
    rep = validate_model(spec)
    assert rep.passed, str(rep)


def test_reservoir_not_summing_to_one_fails():
    spec = make_spec(phi_res=np.array([0.2, 0.2, 0.2]))
    rep = validate_model(spec)
    names = [c.name for c in rep.failures()]
    assert names == ["reservoir fractions sum to 1"]


def test_understated_sup_bound_is_caught():
    gam = affine(0.0, [0.0, 0.0, 1.0], sup=0.5)
    spec = make_spec(coeffs={("Gamma",): gam})
    rep = validate_model(spec)
    bad = [c for c in rep.failures() if c.name.startswith("sup bound Gamma")]
    assert len(bad) == 1
    assert bad[0].worst == pytest.approx(1.0)


def test_understated_lipschitz_bound_is_caught():
    spec = make_spec(coeffs={("G_v",): affine(0.0, [2.0, 0.0, 0.0], lip=1.0)})
    rep = validate_model(spec)
    assert any(c.name == "lipschitz bound G_v" for c in rep.failures())


def test_infimum_of_linear_gamma():
    gam = affine(0.0, [0.0, 0.0, 1.0])
    spec = make_spec(coeffs={("Gamma",): gam})
    rep = infimum_bounds(spec, 0.1)
    # lattice minimum sits at phi_d = alpha
    assert rep.gamma_raw == pytest.approx(0.1, abs=1e-14)
    assert 0 < rep.gamma_alpha <= 0.1
    assert not rep.violated


def test_constant_gamma_infimum_is_exact():
    spec = make_spec()
    for alpha in (0.01, 0.1, 0.3):
        rep = infimum_bounds(spec, alpha)
        assert rep.gamma_alpha == 1.0
        assert rep.h_alpha == 1.0


def test_vanishing_h1_raises_flag():
    spec = make_spec(coeffs={("H", 1, 1): constant(0.0)})
    rep = infimum_bounds(spec, 0.1)
    assert rep.h_alpha == 0.0
    assert rep.violated
    assert rep.flag


def test_alpha_outside_range_rejected():
    with pytest.raises(ModelError):
        infimum_bounds(make_spec(), 0.4)


def test_product_power_below_one_rejected():
    with pytest.raises(ModelError):
        product(1.0, [0.5, 0.0, 0.0])


def test_table_matches_affine_function():
    ax = np.linspace(0, 1, 5)
    g = np.meshgrid(ax, ax, ax, indexing="ij")
    vals = 0.2 + 0.3 * g[0] - 0.1 * g[2]
    t = table(vals)
    a = affine(0.2, [0.3, 0.0, -0.1])
    pts = np.random.default_rng(0).random((3, 50))
    assert np.allclose(t(pts), a(pts), atol=1e-14)
    assert t.lip == pytest.approx(0.3)


def test_config_keys_resolve_longest_prefix():
    section = {"H": 0.5, "H.1": 2.0, "H.1.0": 3.0, "default": 0.0}
    c = model.coefficients_from_config(3, section)
    assert c.get("H", 0, 0)(np.full(3, 0.3)) == 0.5
    assert c.get("H", 1, 1)(np.full(3, 0.3)) == 2.0
    assert c.get("H", 1, 0)(np.full(3, 0.3)) == 3.0
    assert c.get("F", 0).is_zero


@pytest.mark.parametrize("key", ["Q.0", "H.2.0", "B.x"])
def test_bad_coefficient_keys(key):
    with pytest.raises(ModelError):
        model.coefficients_from_config(3, {key: 1.0})


def test_wrong_vector_length_rejected():
    with pytest.raises(ModelError):
        make_spec(delta=np.ones(2))


def test_probe_records_calls():
    p = model.probe(constant(2.0))
    phi = np.full((3, 4), 0.25)
    assert np.all(p(phi) == 2.0)
    assert len(p.calls) == 1 and p.calls[0].shape == (3, 4)


def test_coefficient_scalar_and_field_evaluation():
    c = Coefficient(lambda phi: phi[0] * 2, 2.0, 2.0)
    assert c(np.array([0.25, 0.5, 0.25])) == 0.5
    assert c(np.full((3, 5), 0.1)).shape == (5,)
