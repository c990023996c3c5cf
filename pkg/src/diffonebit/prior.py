"""Denoisers used as the prior step of the reverse loop.

A denoiser is any object with ``denoise(x_t, alpha, sigma)`` returning the
posterior mean E[x0 | x_t] for ``x_t = alpha * x0 + sigma * eps``. The
isotropic Gaussian mixture gives that mean in closed form; the lookup
denoiser interpolates a tabulated one and can represent non-Gaussian priors
in one or two dimensions.
"""

import configparser
from typing import Protocol

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import logsumexp

from .errors import InvalidArgument, ParseError
from .rng import derive_rng

LOG_2PI = np.log(2.0 * np.pi)


class Denoiser(Protocol):
    dim: int

    def denoise(self, x_t, alpha, sigma): ...


def _check_noise(alpha, sigma):
    if not (0.0 < alpha <= 1.0):
        raise InvalidArgument(f"alpha must lie in (0, 1], got {alpha}")
    if not np.isfinite(sigma) or sigma < 0:
        raise InvalidArgument(f"sigma must be finite and non-negative, got {sigma}")


class GaussianMixturePrior:
    """Mixture of isotropic Gaussians ``sum_j w_j N(m_j, tau_j^2 I)``.

    Weights may be zero (the component is then never used) but must sum to 1.
    """

    def __init__(self, weights, means, taus):
        weights = np.atleast_1d(np.asarray(weights, dtype=np.float64))
        means = np.asarray(means, dtype=np.float64)
        if means.ndim == 1:
            means = means[:, None] if weights.size > 1 else means[None, :]
        taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
        j = weights.size
        if means.shape[0] != j or taus.shape != (j,):
            raise InvalidArgument(
                f"inconsistent mixture shapes: weights {weights.shape}, means {means.shape}, taus {taus.shape}"
            )
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidArgument("mixture weights must be non-negative and sum to 1")
        if np.any(~np.isfinite(taus)) or np.any(taus <= 0):
            raise InvalidArgument("component standard deviations must be positive")
        if not np.all(np.isfinite(means)):
            raise InvalidArgument("component means must be finite")
        self.weights, self.means, self.taus = weights, means, taus
        for a in (self.weights, self.means, self.taus):
            a.flags.writeable = False
        with np.errstate(divide="ignore"):
            self._log_w = np.log(weights)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.weights.size

    def mean(self):
        return self.weights @ self.means

    def _log_components(self, x, loc_scale, var):
        # log N(x; loc_scale * m_j, var_j I) for each j, batched over leading axes of x
        d2 = np.sum((x[..., None, :] - loc_scale * self.means) ** 2, axis=-1)
        return self._log_w - 0.5 * self.dim * (LOG_2PI + np.log(var)) - 0.5 * d2 / var

    def responsibilities(self, x_t, alpha, sigma):
        x_t = np.asarray(x_t, dtype=np.float64)
        var = alpha**2 * self.taus**2 + sigma**2
        logp = self._log_components(x_t, alpha, var)
        r = np.exp(logp - logp.max(axis=-1, keepdims=True))
        return r / r.sum(axis=-1, keepdims=True)

    def denoise(self, x_t, alpha, sigma):
        return gmm_denoise(self, x_t, alpha, sigma)

    def log_density(self, x):
        return gmm_log_density(self, x)

    def noisy_log_density(self, x_t, alpha, sigma):
        """log p_t(x_t), the marginal of ``alpha * x0 + sigma * eps``."""
        x_t = np.asarray(x_t, dtype=np.float64)
        var = alpha**2 * self.taus**2 + sigma**2
        return logsumexp(self._log_components(x_t, alpha, var), axis=-1)

    def __repr__(self):
        return f"GaussianMixturePrior(J={self.n_components}, N={self.dim})"


def gmm_denoise(prior, x_t, alpha, sigma):
    """Exact E[x0 | x_t] under the mixture prior; ``x_t`` may be batched."""
    _check_noise(alpha, sigma)
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != prior.dim:
        raise InvalidArgument(f"x_t has trailing size {x_t.shape[-1]}, prior has N={prior.dim}")
    if sigma == 0:
        return x_t / alpha
    var = alpha**2 * prior.taus**2 + sigma**2
    r = prior.responsibilities(x_t, alpha, sigma)
    gain = alpha * prior.taus**2 / var
    # per-component posterior means, shape (..., J, N)
    post = prior.means + gain[:, None] * (x_t[..., None, :] - alpha * prior.means)
    return np.einsum("...j,...jn->...n", r, post)


def gmm_log_density(prior, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != prior.dim:
        raise InvalidArgument(f"x has trailing size {x.shape[-1]}, prior has N={prior.dim}")
    return prior.noisy_log_density(x, 1.0, 0.0)


def gmm_sample(prior, seed, size=None):
    """Draw one signal (or ``size`` signals) from the mixture."""
    rng = derive_rng(seed, "gmm_sample")
    shape = () if size is None else (int(size),)
    comp = rng.choice(prior.n_components, size=shape, p=prior.weights)
    noise = rng.standard_normal(shape + (prior.dim,))
    return prior.means[comp] + prior.taus[comp][..., None] * noise


def random_mixture(seed, n_components, dim, spread=1.0, tau=1.0):
    """Equal-weight mixture with N(0, spread^2 I) means and a shared ``tau``."""
    rng = derive_rng(seed, "random_mixture")
    means = spread * rng.standard_normal((n_components, dim))
    return GaussianMixturePrior(np.full(n_components, 1.0 / n_components), means, np.full(n_components, tau))


# --- mixture files ---------------------------------------------------------


def _floats(text):
    return [float(v) for v in text.split()]


def format_mixture(prior):
    lines = ["[mixture]", f"J = {prior.n_components}", f"N = {prior.dim}", ""]
    for j in range(prior.n_components):
        lines.append(f"[component {j}]")
        lines.append(f"weight = {float(prior.weights[j])!r}")
        lines.append(f"tau = {float(prior.taus[j])!r}")
        lines.append("mean = " + " ".join(repr(float(v)) for v in prior.means[j]))
        lines.append("")
    return "\n".join(lines)


def parse_mixture(text):
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
        j = cp.getint("mixture", "J")
        n = cp.getint("mixture", "N")
        weights, means, taus = [], [], []
        for k in range(j):
            sec = cp[f"component {k}"]
            weights.append(float(sec["weight"]))
            taus.append(float(sec["tau"]))
            mean = _floats(sec["mean"])
            if len(mean) != n:
                raise ParseError(f"component {k} mean has {len(mean)} entries, expected N={n}")
            means.append(mean)
    except (configparser.Error, KeyError, ValueError) as exc:
        raise ParseError(f"malformed mixture file: {exc}") from None
    total = sum(weights)
    if total > 0 and abs(total - 1.0) <= 1e-9:
        weights = [w / total for w in weights]
    try:
        return GaussianMixturePrior(weights, np.array(means).reshape(j, n), taus)
    except InvalidArgument as exc:
        raise ParseError(f"invalid mixture: {exc}") from None


def save_mixture(path, prior):
    with open(path, "w") as fh:
        fh.write(format_mixture(prior))


def load_mixture(path):
    with open(path) as fh:
        return parse_mixture(fh.read())


# --- lookup denoiser -------------------------------------------------------


class LookupDenoiser:
    """Multilinear interpolation of a tabulated posterior mean.

    The table is indexed by the noise ratio ``s = sigma / alpha`` and the
    rescaled input ``x_t / alpha`` on a regular grid over ``[lower, upper]``
    per axis; the posterior mean depends on (alpha, sigma) only through
    these. Queries outside the grid are clamped to its edges, and
    ``sigma = 0`` returns ``x_t / alpha`` exactly.
    """

    def __init__(self, lower, upper, resolution, noise_ratios, values):
        values = np.asarray(values, dtype=np.float64)
        noise_ratios = np.asarray(noise_ratios, dtype=np.float64)
        dim = values.shape[-1]
        if dim not in (1, 2):
            raise InvalidArgument("lookup denoisers support N = 1 or 2")
        if resolution < 2 or upper <= lower:
            raise InvalidArgument("grid needs resolution >= 2 and upper > lower")
        if noise_ratios.ndim != 1 or noise_ratios.size < 1 or np.any(np.diff(noise_ratios) <= 0):
            raise InvalidArgument("noise ratios must be strictly increasing")
        expected = (noise_ratios.size,) + (resolution,) * dim + (dim,)
        if values.shape != expected:
            raise InvalidArgument(f"table has shape {values.shape}, expected {expected}")
        self.dim = dim
        self.lower, self.upper, self.resolution = float(lower), float(upper), int(resolution)
        self.noise_ratios = noise_ratios
        self.values = values
        self.values.flags.writeable = False
        axis = np.linspace(lower, upper, resolution)
        self._axes = (noise_ratios,) + (axis,) * dim
        if noise_ratios.size == 1:
            # degenerate noise axis; interpolate over space only
            self._interp = RegularGridInterpolator((axis,) * dim, values[0])
        else:
            self._interp = RegularGridInterpolator(self._axes, values)

    @classmethod
    def tabulate(cls, denoiser, lower, upper, resolution, noise_ratios):
        """Tabulate any denoiser at alpha = 1 over the grid."""
        dim = denoiser.dim
        axis = np.linspace(lower, upper, resolution)
        grid = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1)
        values = np.stack([denoiser.denoise(grid, 1.0, float(s)) for s in noise_ratios])
        return cls(lower, upper, resolution, noise_ratios, values)

    @classmethod
    def from_log_prior_1d(cls, log_prior, support, lower, upper, resolution, noise_ratios):
        """Posterior means of a 1-D prior by quadrature on ``support`` (sorted grid)."""
        support = np.asarray(support, dtype=np.float64)
        logp = np.asarray(log_prior(support), dtype=np.float64)
        axis = np.linspace(lower, upper, resolution)
        rows = []
        for s in noise_ratios:
            if s == 0:
                rows.append(axis.copy())
                continue
            logw = logp[None, :] - 0.5 * ((axis[:, None] - support[None, :]) / s) ** 2
            w = np.exp(logw - logw.max(axis=1, keepdims=True))
            num = np.trapezoid(w * support, support, axis=1)
            den = np.trapezoid(w, support, axis=1)
            rows.append(num / den)
        values = np.asarray(rows)[..., None]
        return cls(lower, upper, resolution, noise_ratios, values)

    def denoise(self, x_t, alpha, sigma):
        _check_noise(alpha, sigma)
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.shape[-1] != self.dim:
            raise InvalidArgument(f"x_t has trailing size {x_t.shape[-1]}, table has N={self.dim}")
        if sigma == 0:
            return x_t / alpha
        pts = np.clip(x_t / alpha, self.lower, self.upper)
        if self.noise_ratios.size == 1:
            return self._interp(pts)
        s = np.clip(sigma / alpha, self.noise_ratios[0], self.noise_ratios[-1])
        q = np.concatenate([np.full(pts.shape[:-1] + (1,), s), pts], axis=-1)
        return self._interp(q)

    def format(self):
        lines = [
            "[lookup]",
            f"N = {self.dim}",
            f"lower = {self.lower!r}",
            f"upper = {self.upper!r}",
            f"resolution = {self.resolution}",
            "noise_ratios = " + " ".join(repr(float(s)) for s in self.noise_ratios),
            "values = " + " ".join(repr(float(v)) for v in self.values.ravel()),
            "",
        ]
        return "\n".join(lines)

    @classmethod
    def parse(cls, text):
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
            sec = cp["lookup"]
            dim = int(sec["N"])
            res = int(sec["resolution"])
            ratios = np.array(_floats(sec["noise_ratios"]))
            values = np.array(_floats(sec["values"]))
            shape = (ratios.size,) + (res,) * dim + (dim,)
            values = values.reshape(shape)
            return cls(float(sec["lower"]), float(sec["upper"]), res, ratios, values)
        except (configparser.Error, KeyError, ValueError, InvalidArgument) as exc:
            raise ParseError(f"malformed lookup table: {exc}") from None

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.format())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.parse(fh.read())
