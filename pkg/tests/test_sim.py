import numpy as np
import pytest

from statfuse.errors import ConfigurationError, DomainError
from statfuse.sim import (
    PRINTED_SIGMA_YZ,
    GaussianSpec,
    McReport,
    generate_population,
    mse_decompose,
    run_monte_carlo,
    srswor,
)


def test_cia_product_matches_printed():
    np.testing.assert_allclose(GaussianSpec().model_sigma_yz, PRINTED_SIGMA_YZ, atol=0.1)


def test_cia_product_hand_entry():
    # first row of B_y times Sigma_xx times first row of B_z
    by = np.array([0.2, -0.3, 1.0])
    bz = np.array([-0.4, 1.0, -0.3])
    sxx = np.array(GaussianSpec().sigma_xx)
    assert GaussianSpec().model_sigma_yz[0, 0] == pytest.approx(by @ sxx @ bz, rel=1e-14)
    assert by @ sxx @ bz == pytest.approx(-3.64, abs=0.01)


def test_population_moments():
    spec = GaussianSpec(N=40_000)
    pop = generate_population(spec, 1)
    emp = np.cov(pop.x.T, bias=True)
    scale = np.sqrt(np.outer(np.diag(spec.sigma_xx), np.diag(spec.sigma_xx)))
    assert np.all(np.abs(emp - spec.sigma_xx) <= 4 / np.sqrt(spec.N) * scale + 1e-12)
    sd_yz = np.sqrt(np.outer(pop.y.var(axis=0), pop.z.var(axis=0)))
    assert np.all(np.abs(pop.finite_sigma_yz() - spec.model_sigma_yz) <= 4 / np.sqrt(spec.N) * sd_yz * 1.5)


def test_independent_blocks():
    zero = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    spec = GaussianSpec(N=20_000, B_y=zero, B_z=zero)
    pop = generate_population(spec, 2)
    assert np.abs(pop.finite_sigma_yz()).max() < 4 / np.sqrt(spec.N)


def test_population_reproducible():
    spec = GaussianSpec(N=50, n1=5, n2=10)
    a = generate_population(spec, 9)
    b = generate_population(spec, 9)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.z, b.z)


def test_srswor_edges():
    rng = np.random.default_rng(0)
    idx, w = srswor(10, 10, rng)
    np.testing.assert_array_equal(idx, np.arange(10))
    np.testing.assert_array_equal(w, 1.0)
    idx, w = srswor(10, 1, rng)
    assert len(idx) == 1 and w[0] == 10.0
    with pytest.raises(DomainError):
        srswor(10, 11, rng)


def test_srswor_inclusion_frequency():
    rng = np.random.default_rng(1)
    N, n, R = 20, 5, 10_000
    counts = np.zeros(N)
    for _ in range(R):
        counts[srswor(N, n, rng)[0]] += 1
    pi = n / N
    assert np.all(np.abs(counts / R - pi) <= 3 * np.sqrt(pi * (1 - pi) / R) * 1.2)


def test_mse_decompose():
    b, v, e = mse_decompose([np.zeros((2, 2)), 2 * np.ones((2, 2))], np.zeros((2, 2)))
    np.testing.assert_array_equal(b, 1.0)
    np.testing.assert_array_equal(v, 1.0)
    np.testing.assert_array_equal(e, 2.0)
    b, v, e = mse_decompose([np.eye(2)] * 3, np.eye(2))
    assert b.max() == v.max() == e.max() == 0.0
    with pytest.raises(DomainError):
        mse_decompose([], np.eye(2))


def test_single_replicate_has_no_variance():
    b, v, e = mse_decompose([np.array([[1.5]])], np.array([[1.0]]))
    assert v[0, 0] == 0.0 and e[0, 0] == b[0, 0] == 0.25


def test_spec_validation():
    with pytest.raises(DomainError):
        GaussianSpec(n1=0)
    with pytest.raises(DomainError):
        GaussianSpec(sigma_xx=((1.0, 2.0, 0.0), (2.0, 1.0, 0.0), (0.0, 0.0, 1.0)))
    with pytest.raises(ConfigurationError):
        GaussianSpec(truth="sample")


def test_spec_from_file(tmp_path):
    p = tmp_path / "sim.cfg"
    p.write_text("# smaller run\nN = 500\nn1 = 40\nn2 = 90\nB_y = 1,0,0; 0,1,0\nseed = 3\n")
    spec = GaussianSpec.from_file(p, n2=None, replicates=4)
    assert (spec.N, spec.n1, spec.n2, spec.replicates, spec.seed) == (500, 40, 90, 4, 3)
    assert GaussianSpec.from_file(p, n2=120).n2 == 120
    assert spec.B_y == ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))
    p.write_text("bogus = 1\n")
    with pytest.raises(ConfigurationError, match="bogus"):
        GaussianSpec.from_file(p)


def test_report_csv(tmp_path):
    est = {"opt": np.array([np.eye(2), 3 * np.eye(2)])}
    rep = McReport.from_estimates(est, 2 * np.eye(2))
    path = tmp_path / "r.csv"
    rep.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "method,cell_row,cell_col,bias2,variance,mse"
    assert lines[1] == "opt,1,1,0.0,1.0,1.0"
    assert len(lines) == 5


def test_small_run_deterministic():
    spec = GaussianSpec(N=600, n1=40, n2=120, replicates=3, seed=5)
    a = run_monte_carlo(spec)
    b = run_monte_carlo(spec, n_jobs=2)
    for m in ("opt", "bal", "ren"):
        np.testing.assert_array_equal(a.mse[m], b.mse[m])
        np.testing.assert_allclose(a.mse[m], a.bias2[m] + a.variance[m], rtol=1e-15)
    assert a.failures == 0
