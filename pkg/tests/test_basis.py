import numpy as np
import pytest
from hypothesis import given, strategies as st

from bideepkriging.basis import (WENDLAND_MAX, BasisConfig, bandwidth, basis_matrix, embed, make_knots,
                                 wendland)
from bideepkriging.errors import ArgumentError, ConfigurationError
from bideepkriging.spatial import SiteSet


def wendland_oracle(d):
    # expanded polynomial, evaluated independently of the factored form
    if d > 1:
        return 0.0
    from fractions import Fraction
    x = Fraction(d)
    val = (1 - x) ** 6 * (35 * x * x + 18 * x + 13) / 3
    return float(val)


def test_wendland_at_zero():
    assert wendland(0.0) == pytest.approx(13 / 3, abs=1e-15)


@pytest.mark.parametrize("d", [1.0, 1.5, 10.0])
def test_wendland_compact_support(d):
    assert wendland(d) == 0.0


def test_wendland_half():
    assert abs(wendland(0.5) - 0.16015625) < 1e-12


@pytest.mark.parametrize("d", [0.0, 0.1, 0.25, 0.3, 0.5, 0.77, 0.999, 1.0])
def test_wendland_matches_exact_rational(d):
    assert abs(wendland(d) - wendland_oracle(d)) < 1e-10


@pytest.mark.parametrize("d", [-0.1, np.nan])
def test_wendland_rejects_bad(d):
    with pytest.raises(ArgumentError):
        wendland(d)


@given(st.floats(0, 5, allow_nan=False))
def test_wendland_bounded(d):
    v = wendland(d)
    assert 0.0 <= v <= WENDLAND_MAX + 1e-15


def test_wendland_continuous_at_one():
    assert wendland(1.0 - 1e-9) < 1e-40


def test_knots_two_by_two():
    (lv,) = make_knots(BasisConfig(resolutions=(4,)))
    assert sorted(map(tuple, lv.coords.tolist())) == [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]


def test_knots_25_spacing_quarter():
    (lv,) = make_knots(BasisConfig(resolutions=(25,)))
    assert sorted(set(lv.coords[:, 0].tolist())) == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert len(lv) == 25


def test_knots_nine_on_zero_two():
    (lv,) = make_knots(BasisConfig(resolutions=(9,), domain_bounds=(0, 2, 0, 2)))
    xs = np.linspace(0, 2, 3)
    want = {(a, b) for a in xs for b in xs}
    assert set(map(tuple, lv.coords.tolist())) == want


def test_knots_non_square_raises():
    with pytest.raises(ConfigurationError):
        make_knots(BasisConfig(resolutions=(79,)))


def test_explicit_knots_allow_any_count():
    pts = [[(0.1 * i, 0.05 * i) for i in range(7)]]
    cfg = BasisConfig(knots=pts, thetas=(0.3,))
    assert cfg.resolutions == (7,)
    assert embed(SiteSet(np.array([[0.2, 0.1]])), cfg).values.shape == (1, 7)


def test_bandwidth_rules():
    assert bandwidth(25, "literal", 2.5) == pytest.approx(1 / 12.5)
    assert bandwidth(25, "overlap", 4.0) == pytest.approx(0.8)
    with pytest.raises(ConfigurationError):
        bandwidth(25, "other")


def test_config_validation():
    with pytest.raises(ConfigurationError):
        BasisConfig(domain_bounds=(1, 0, 0, 1))
    with pytest.raises(ConfigurationError):
        BasisConfig(resolutions=(4, 9), thetas=(0.5,))
    with pytest.raises(ConfigurationError):
        BasisConfig(resolutions=(0,))


def test_site_at_knot_gives_max():
    cfg = BasisConfig(resolutions=(4,))
    fm = embed(SiteSet(np.array([[1.0, 1.0]])), cfg)
    j = fm.col_names.index("phi_0_3")
    assert fm.values[0, j] == pytest.approx(13 / 3)


def test_far_site_gives_zero_level():
    cfg = BasisConfig(resolutions=(4, 9), thetas=(0.1, 0.05))
    fm = embed(SiteSet(np.array([[0.3, 0.3]])), cfg)
    assert np.all(fm.values == 0.0)


def test_embed_matches_elementwise_oracle(rng):
    cfg = BasisConfig(resolutions=(4, 9))
    pts = rng.uniform(size=(3, 2))
    fm = embed(SiteSet(pts), cfg)
    assert fm.values.shape == (3, 13)
    knots = [np.array([(a, b) for a in np.linspace(0, 1, m) for b in np.linspace(0, 1, m)]) for m in (2, 3)]
    thetas = cfg.level_thetas()
    col = 0
    for lv, kn in enumerate(knots):
        for u in kn:
            for i in range(3):
                d = np.hypot(*(pts[i] - u)) / thetas[lv]
                assert abs(fm.values[i, col] - wendland_oracle(d)) < 1e-12
            col += 1


def test_embed_appends_covariates_unchanged(rng):
    cfg = BasisConfig(resolutions=(4,))
    cov = rng.normal(size=(5, 2))
    fm = embed(SiteSet(rng.uniform(size=(5, 2))), cfg, cov)
    np.testing.assert_array_equal(fm.covariates, cov)
    assert fm.col_names[-2:] == ("x_0", "x_1")
    with pytest.raises(ArgumentError):
        embed(SiteSet(rng.uniform(size=(5, 2))), cfg, cov[:4])


def test_embed_permutation_equivariant(rng):
    cfg = BasisConfig(resolutions=(9, 25))
    pts = rng.uniform(size=(20, 2))
    perm = rng.permutation(20)
    a = embed(SiteSet(pts), cfg).values
    b = embed(SiteSet(pts[perm]), cfg).values
    np.testing.assert_array_equal(a[perm], b)


def test_row_sparsity_matches_brute_force(rng):
    cfg = BasisConfig(resolutions=(81,), bandwidth_factor=2.0)
    pts = rng.uniform(size=(15, 2))
    phi = basis_matrix(pts, cfg)
    (kn,) = make_knots(cfg)
    theta = cfg.level_thetas()[0]
    for i in range(15):
        inside = np.hypot(*(kn.coords - pts[i]).T) < theta
        assert np.count_nonzero(phi[i]) == inside.sum()


def test_feature_csv(tmp_path, rng):
    fm = embed(SiteSet(rng.uniform(size=(3, 2))), BasisConfig(resolutions=(4,)))
    p = tmp_path / "f.csv"
    fm.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "phi_0_0,phi_0_1,phi_0_2,phi_0_3" and len(lines) == 4


def test_config_round_trip():
    cfg = BasisConfig(resolutions=(4, 9), bandwidth_factor=3.0)
    assert BasisConfig.from_dict(cfg.to_dict()) == cfg
