import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp
from scipy.stats import norm

from diffonebit.errors import InvalidArgument, ParseError
from diffonebit.prior import (
    GaussianMixturePrior,
    LookupDenoiser,
    gmm_denoise,
    gmm_log_density,
    gmm_sample,
    load_mixture,
    parse_mixture,
    random_mixture,
    save_mixture,
)


def _marginal_logpdf(w, m, tau, alpha, sigma, x):
    # independent scalar implementation of log p_t for N=1
    sd = np.sqrt(alpha**2 * np.asarray(tau) ** 2 + sigma**2)
    return logsumexp(np.log(w) + norm.logpdf(x, loc=alpha * np.asarray(m), scale=sd))


def _posterior_mean_quadrature(w, m, tau, alpha, sigma, x_t, lo=-10.0, hi=10.0, n=100_000):
    x0 = np.linspace(lo, hi, n)
    logprior = logsumexp(np.log(w)[:, None] + norm.logpdf(x0[None, :], np.asarray(m)[:, None], np.asarray(tau)[:, None]), axis=0)
    loglik = norm.logpdf(x_t, loc=alpha * x0, scale=sigma)
    logpost = logprior + loglik
    p = np.exp(logpost - logpost.max())
    return np.trapezoid(p * x0, x0) / np.trapezoid(p, x0)


def test_shrinkage_single_standard():
    prior = GaussianMixturePrior([1.0], [[0.0, 0.0]], [1.0])
    x = np.array([1.5, -2.0])
    for s in (0.1, 0.7, 3.0):
        assert np.allclose(gmm_denoise(prior, x, 1.0, s), x / (1 + s**2), rtol=1e-14)


def test_single_component_closed_form():
    prior = GaussianMixturePrior([1.0], [[2.0]], [1.0])
    assert gmm_denoise(prior, np.array([2.0]), 0.8, 0.6) == pytest.approx([2.32], rel=1e-14)


def test_two_component_quadrature():
    w, m, tau = np.array([0.3, 0.7]), np.array([-1.5, 2.0]), np.array([0.6, 0.9])
    prior = GaussianMixturePrior(w, m, tau)
    for alpha, sigma, x_t in [(0.9, 0.5, 0.3), (0.5, 0.8, -0.7), (1.0, 0.3, 1.9), (0.7, 1.2, 0.0)]:
        want = _posterior_mean_quadrature(w, m, tau, alpha, sigma, x_t)
        got = gmm_denoise(prior, np.array([x_t]), alpha, sigma)[0]
        assert abs(got - want) < 1e-6


def test_tweedie_identity_random_cases():
    rng = np.random.default_rng(2718)
    h = 1e-4
    for _ in range(50):
        j = rng.integers(1, 4)
        w = rng.dirichlet(np.ones(j))
        m = rng.uniform(-2, 2, j)
        tau = rng.uniform(0.3, 1.5, j)
        alpha = rng.uniform(0.1, 1.0)
        sigma = rng.uniform(0.05, 1.5)
        x_t = rng.uniform(-2, 2)
        score = (
            _marginal_logpdf(w, m, tau, alpha, sigma, x_t + h) - _marginal_logpdf(w, m, tau, alpha, sigma, x_t - h)
        ) / (2 * h)
        want = x_t / alpha + sigma**2 / alpha * score
        got = gmm_denoise(GaussianMixturePrior(w, m, tau), np.array([x_t]), alpha, sigma)[0]
        assert abs(got - want) <= 1e-6 * max(abs(want), 1.0)


def test_responsibilities_sum_to_one(rng):
    prior = random_mixture(1, 5, 3)
    r = prior.responsibilities(rng.standard_normal((10, 3)) * 30, 0.6, 0.4)
    assert np.allclose(r.sum(axis=-1), 1.0, rtol=0, atol=1e-15)


def test_small_noise_limit():
    prior = random_mixture(2, 3, 2)
    x = np.array([0.4, -1.2])
    assert np.max(np.abs(gmm_denoise(prior, x, 0.7, 1e-8) - x / 0.7)) < 1e-6
    assert np.array_equal(gmm_denoise(prior, x, 0.7, 0.0), x / 0.7)


def test_large_noise_limit():
    prior = GaussianMixturePrior([0.25, 0.75], [[1.0, -2.0], [3.0, 0.5]], [0.5, 1.0])
    got = gmm_denoise(prior, np.array([0.3, 2.0]), 0.8, 1e6)
    assert np.max(np.abs(got - prior.mean())) < 1e-4


@pytest.mark.parametrize("alpha,sigma", [(0.0, 1.0), (1.1, 1.0), (0.5, -0.1)])
def test_denoise_rejects_bad_noise(alpha, sigma):
    with pytest.raises(InvalidArgument):
        gmm_denoise(random_mixture(0, 2, 1), np.zeros(1), alpha, sigma)


def test_log_density_examples():
    std = GaussianMixturePrior([1.0], [[0.0]], [1.0])
    assert gmm_log_density(std, np.array([0.0])) == pytest.approx(-0.5 * np.log(2 * np.pi), rel=1e-15)
    sym = GaussianMixturePrior([0.5, 0.5], [[-1.0], [1.0]], [0.7, 0.7])
    avg = 0.5 * (norm.pdf(0.0, -1.0, 0.7) + norm.pdf(0.0, 1.0, 0.7))
    assert gmm_log_density(sym, np.array([0.0])) == pytest.approx(np.log(avg), rel=1e-14)


def test_log_density_integrates_to_one():
    prior = GaussianMixturePrior([0.2, 0.5, 0.3], [[-2.0], [0.5], [3.0]], [0.4, 1.0, 0.6])
    x = np.linspace(-15, 15, 200_001)[:, None]
    assert abs(np.trapezoid(np.exp(gmm_log_density(prior, x)), x[:, 0]) - 1) < 1e-4


def test_sample_degenerate_and_deterministic():
    prior = GaussianMixturePrior([1.0], [[1.0, -3.0]], [1e-9])
    assert np.allclose(gmm_sample(prior, 5), [1.0, -3.0], atol=1e-7)
    p2 = random_mixture(0, 3, 4)
    assert np.array_equal(gmm_sample(p2, 9), gmm_sample(p2, 9))


def test_sample_mean_clt():
    prior = GaussianMixturePrior([1.0], [[0.5, -1.0]], [2.0])
    xs = gmm_sample(prior, 31, size=100_000)
    assert np.all(np.abs(xs.mean(axis=0) - [0.5, -1.0]) < 3 * 2.0 / np.sqrt(100_000))


def test_sample_zero_weight_never_drawn():
    prior = GaussianMixturePrior([1.0, 0.0], [[0.0], [100.0]], [1.0, 1.0])
    assert np.all(np.abs(gmm_sample(prior, 3, size=10_000)) < 10)


def test_weights_validation():
    with pytest.raises(InvalidArgument):
        GaussianMixturePrior([0.5, 0.4], [[0.0], [1.0]], [1.0, 1.0])
    with pytest.raises(InvalidArgument):
        GaussianMixturePrior([1.0], [[0.0]], [0.0])


def test_mixture_file_roundtrip(tmp_path):
    prior = random_mixture(4, 3, 5, spread=0.7, tau=0.3)
    path = tmp_path / "prior.txt"
    save_mixture(path, prior)
    back = load_mixture(path)
    assert np.array_equal(back.weights, prior.weights)
    assert np.array_equal(back.means, prior.means)
    assert np.array_equal(back.taus, prior.taus)


def test_mixture_file_malformed():
    with pytest.raises(ParseError):
        parse_mixture("[mixture]\nJ = 2\nN = 1\n[component 0]\nweight = 1\ntau = 1\nmean = 0\n")
    with pytest.raises(ParseError):
        parse_mixture("[mixture]\nJ = 1\nN = 2\n[component 0]\nweight = 1\ntau = 1\nmean = 0\n")


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), alpha=st.floats(0.05, 1.0), sigma=st.floats(0.0, 5.0))
def test_denoise_finite_and_batched(seed, alpha, sigma):
    prior = random_mixture(seed, 3, 2)
    xs = np.random.default_rng(seed).standard_normal((4, 2)) * 5
    batch = gmm_denoise(prior, xs, alpha, sigma)
    assert np.all(np.isfinite(batch))
    assert np.allclose(batch, [gmm_denoise(prior, x, alpha, sigma) for x in xs], rtol=1e-13, atol=1e-13)


# --- lookup denoiser ---


def test_lookup_matches_gmm_on_grid_nodes():
    prior = GaussianMixturePrior([0.5, 0.5], [[-1.0], [1.0]], [0.5, 0.5])
    ratios = np.array([0.1, 0.5, 1.0, 2.0])
    table = LookupDenoiser.tabulate(prior, -4, 4, 81, ratios)
    dense = LookupDenoiser.tabulate(prior, -4, 4, 161, np.linspace(0.05, 2.0, 79))
    x = np.array([[0.3], [-1.1]])
    # alpha = 1, sigma on a ratio node, x on a grid node
    got = table.denoise(np.array([[0.4]]), 1.0, 0.5)
    assert np.allclose(got, prior.denoise(np.array([[0.4]]), 1.0, 0.5), atol=1e-12)
    # between nodes: interpolation error is small
    assert np.allclose(dense.denoise(x, 0.8, 0.6), prior.denoise(x, 0.8, 0.6), atol=2e-3)


def test_lookup_sigma_zero_identity_and_clamp():
    prior = GaussianMixturePrior([1.0], [[0.0, 0.0]], [1.0])
    table = LookupDenoiser.tabulate(prior, -2, 2, 9, [0.5, 1.0])
    x = np.array([0.3, 5.0])
    assert np.array_equal(table.denoise(x, 0.5, 0.0), x / 0.5)
    far = table.denoise(np.array([50.0, 0.0]), 1.0, 1.0)
    edge = table.denoise(np.array([2.0, 0.0]), 1.0, 1.0)
    assert np.allclose(far, edge)


def test_lookup_quadrature_non_gaussian_prior():
    # Laplace prior in 1-D; table built by quadrature, checked against an independent computation
    support = np.linspace(-12, 12, 20001)
    table = LookupDenoiser.from_log_prior_1d(lambda x: -np.abs(x), support, -3, 3, 61, [0.3, 1.0])
    x_t, s = 0.5, 1.0
    p = np.exp(-np.abs(support) - 0.5 * ((x_t - support) / s) ** 2)
    want = np.trapezoid(p * support, support) / np.trapezoid(p, support)
    assert table.denoise(np.array([x_t]), 1.0, s)[0] == pytest.approx(want, abs=1e-9)


def test_lookup_file_roundtrip(tmp_path):
    prior = random_mixture(1, 2, 2)
    table = LookupDenoiser.tabulate(prior, -3, 3, 7, [0.2, 0.9])
    path = tmp_path / "table.txt"
    table.save(path)
    back = LookupDenoiser.load(path)
    assert np.array_equal(back.values, table.values)
    q = np.array([0.31, -0.77])
    assert np.array_equal(back.denoise(q, 0.9, 0.4), table.denoise(q, 0.9, 0.4))


def test_lookup_rejects_bad_table():
    with pytest.raises(InvalidArgument):
        LookupDenoiser(-1, 1, 5, [0.5], np.zeros((1, 5, 5, 5, 3)))
    with pytest.raises(ParseError):
        LookupDenoiser.parse("[lookup]\nN = 1\nlower = 0\nupper = 1\nresolution = 3\nnoise_ratios = 1\nvalues = 1 2\n")
