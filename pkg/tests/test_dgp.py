import json
import math

import numpy as np
import pytest
from scipy.special import expit

from pswinfer import dgp
from pswinfer.errors import BracketFailure


@pytest.fixture(scope="module")
def x100k():
    return dgp.generate_covariates(100_000, 1)


@pytest.fixture(scope="module")
def pop_1e6():
    return dgp.build_superpopulation(0.3, 0.3, 5, N=1_000_000)


def test_latent_correlation(x100k):
    V = dgp.latent_normals(100_000, 1)
    C = np.cov(V, rowvar=False)
    target = np.full((10, 10), 0.2)
    np.fill_diagonal(target, 1.0)
    assert np.max(np.abs(C - target)) < 0.01
    assert abs(np.corrcoef(x100k[:, 0], x100k[:, 1])[0, 1] - 0.2) < 0.01
    np.testing.assert_array_equal(x100k[:, :5], V[:, :5])


def test_binary_prevalences(x100k):
    means = x100k[:, 5:].mean(axis=0)
    np.testing.assert_allclose(means, [0.9, 0.8, 0.7, 0.6, 0.5], atol=0.005)
    assert set(np.unique(x100k[:, 5:])) == {0.0, 1.0}


def test_below_direction_flips():
    xb = dgp.generate_covariates(20_000, 1, direction="below")
    np.testing.assert_allclose(xb[:, 5:].mean(axis=0), [0.1, 0.2, 0.3, 0.4, 0.5], atol=0.005)
    with pytest.raises(ValueError):
        dgp.dichotomize(np.zeros(3), 10, "sideways")


def test_chunked_generation_is_prefix_stable():
    a = dgp.latent_normals(150_000, 3)
    b = dgp.latent_normals(100_000, 3)
    np.testing.assert_array_equal(a[:100_000], b)


def test_minimum_size():
    with pytest.raises(ValueError):
        dgp.generate_covariates(999, 0)


def test_intercept_closed_form(x100k):
    for target in (0.1, 0.37, 0.5):
        a = dgp.calibrate_treatment_intercept(x100k, target, coef=np.zeros(10), tol=1e-12)
        assert a == pytest.approx(math.log(target / (1 - target)), abs=1e-6)


def test_intercept_monotone_and_accurate(x100k):
    a3 = dgp.calibrate_treatment_intercept(x100k, 0.3)
    a4 = dgp.calibrate_treatment_intercept(x100k, 0.4)
    assert a3 < a4
    a5 = dgp.calibrate_treatment_intercept(x100k, 0.5)
    assert abs(np.mean(expit(a5 + x100k @ dgp.TREATMENT_COEF)) - 0.5) < 1e-4


def test_bracket_failure(x100k):
    with pytest.raises(BracketFailure):
        dgp.calibrate_treatment_intercept(x100k, 1.2)
    with pytest.raises(BracketFailure):
        dgp.bisect(lambda a: a, 50.0, 1e-6)
    with pytest.raises(BracketFailure):
        dgp.calibrate_outcome(x100k, 0.3, target_ate=-0.9)


def test_outcome_calibration(x100k):
    a0, at = dgp.calibrate_outcome(x100k, 0.3)
    lin = a0 + x100k @ dgp.OUTCOME_COEF
    assert abs(np.mean(expit(lin)) - 0.3) < 1e-4
    assert abs(np.mean(expit(lin + at) - expit(lin)) + 0.02) < 1e-5
    assert at < 0
    # zero treatment log-odds ratio gives identical models
    assert np.mean(expit(lin + 0.0) - expit(lin)) == 0.0


def test_calibration_records_targets(pop_1e6):
    c = pop_1e6.calibration
    assert abs(c.achieved_pz - 0.3) < 1e-4 and abs(c.achieved_py0 - 0.3) < 1e-4
    assert abs(c.achieved_ate + 0.02) < 1e-5
    assert c.alpha_treat < 0


def test_realized_draws(pop_1e6):
    sp = pop_1e6
    assert abs(sp.z.mean() - 0.3) < 0.002
    assert abs(sp.y0.mean() - 0.3) < 0.002
    assert abs(np.mean(sp.y1 - sp.y0) + 0.02) < 0.003
    # the true ATE from realized draws, 2 * sqrt(0.5 / N) noise bound plus slack
    assert abs(sp.calibration.true_ate + 0.02) < 1e-3 + 2 * math.sqrt(0.5 / sp.N)
    assert np.all((sp.p_treat > 0) & (sp.p_treat < 1))
    np.testing.assert_array_equal(sp.y, np.where(sp.z == 1, sp.y1, sp.y0))


def test_true_estimands_identities():
    g = np.random.default_rng(0)
    N = 1000
    x = g.standard_normal((N, 10))
    y1 = g.integers(0, 2, N).astype(float)
    y0 = g.integers(0, 2, N).astype(float)
    p = g.uniform(0.05, 0.95, N)
    sp = dgp.SuperPopulation(x, np.full(N, 0.3), np.zeros(N), y1, y0, p, p)
    ate, ato = dgp.true_estimands(sp)
    assert ato == pytest.approx(ate, abs=1e-15)
    same = dgp.SuperPopulation(x, p, np.zeros(N), y1, y1, p, p)
    assert dgp.true_estimands(same) == (0.0, 0.0)
    # hand-rolled weighted mean
    sp = dgp.SuperPopulation(x, p, np.zeros(N), y1, y0, p, p)
    num = den = 0.0
    for i in range(N):
        w = p[i] * (1 - p[i])
        num += w * (y1[i] - y0[i])
        den += w
    assert dgp.true_estimands(sp)[1] == pytest.approx(num / den, abs=1e-14)
    assert dgp.true_estimands(sp, expected=True) == (0.0, 0.0)


def test_determinism():
    a = dgp.build_superpopulation(0.2, 0.4, 9, N=20_000)
    b = dgp.build_superpopulation(0.2, 0.4, 9, N=20_000)
    assert a.equals(b)
    for f in ("x", "z", "y1", "y0"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    c = dgp.build_superpopulation(0.2, 0.4, 10, N=20_000)
    assert not a.equals(c)


def test_cells_share_covariates_not_draws():
    x = dgp.generate_covariates(20_000, 4)
    a = dgp.build_superpopulation(0.3, 0.3, 4, N=20_000, x=x)
    b = dgp.build_superpopulation(0.3, 0.5, 4, N=20_000, x=x)
    assert a.x is b.x
    assert dgp.cell_key(0.3, 0.3) == (300000, 300000)
    assert not np.array_equal(a.z, b.z)


def test_save_load_round_trip(tmp_path):
    sp = dgp.build_superpopulation(0.4, 0.2, 3, N=5_000)
    path = dgp.save_superpopulation(sp, tmp_path / "sp")
    assert path.suffix == ".npz"
    meta = json.loads((tmp_path / "sp.json").read_text())
    assert meta["seed"] == 3 and meta["N"] == 5000 and meta["calibration"]["target_pz"] == 0.4
    back = dgp.load_superpopulation(tmp_path / "sp.npz")
    assert back.equals(sp) and back.key == sp.key
    assert back.calibration == sp.calibration
    dgp.export_csv(sp, tmp_path / "sp.csv")
    arr = np.loadtxt(tmp_path / "sp.csv", delimiter=",", skiprows=1)
    assert arr.shape == (5000, 16)
    np.testing.assert_array_equal(arr[:, :10], sp.x)


def test_save_keeps_dotted_names(tmp_path):
    sp = dgp.build_superpopulation(0.3, 0.3, 2, N=2_000)
    assert dgp.save_superpopulation(sp, tmp_path / "pop_0.3") == tmp_path / "pop_0.3.npz"
    assert (tmp_path / "pop_0.3.json").exists()
    assert dgp.load_superpopulation(tmp_path / "pop_0.3").equals(sp)
    assert dgp.load_superpopulation(tmp_path / "pop_0.3.npz").equals(sp)
