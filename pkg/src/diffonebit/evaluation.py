"""Reconstruction metrics and brute-force reference solvers."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgument, Unsupported
from .likelihood import check_compatible, nll_from_measurements
from .measurement import as_signal, signs

PSNR_CAP = 200.0
SSIM_WINDOW = 8
SSIM_VARIANT = "uniform-8x8-stride1-population"


def _pair(x_hat, x_true):
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x_true = np.asarray(x_true, dtype=np.float64)
    if x_hat.shape != x_true.shape:
        raise InvalidArgument(f"shape mismatch: {x_hat.shape} vs {x_true.shape}")
    return x_hat, x_true


def psnr(x_hat, x_true, data_range=2.0):
    """Peak signal-to-noise ratio in dB, capped at 200 dB for exact matches."""
    x_hat, x_true = _pair(x_hat, x_true)
    if not data_range > 0:
        raise InvalidArgument("data_range must be positive")
    mse = float(np.mean((x_hat - x_true) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(data_range**2 / mse))


def ssim(x_hat, x_true, data_range=2.0):
    """Mean SSIM over all 8x8 windows (uniform weights, stride 1).

    Local variances and covariance use population normalization.
    """
    x_hat, x_true = _pair(x_hat, x_true)
    if x_hat.ndim != 2 or min(x_hat.shape) < SSIM_WINDOW:
        raise InvalidArgument(f"SSIM needs 2-D images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x_hat.shape}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    wa = sliding_window_view(x_hat, (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(x_true, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = (da * da).mean(axis=(-2, -1))
    var_b = (db * db).mean(axis=(-2, -1))
    cov = (da * db).mean(axis=(-2, -1))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def cosine_similarity(x_hat, x_true):
    x_hat, x_true = _pair(x_hat, x_true)
    na, nb = np.linalg.norm(x_hat), np.linalg.norm(x_true)
    if na == 0 or nb == 0:
        raise InvalidArgument("cosine similarity of a zero vector is undefined")
    return float(np.dot(x_hat.ravel(), x_true.ravel()) / (na * nb))


def sign_consistency(op, x_hat, obs):
    """Fraction of bits reproduced by ``sign(A x_hat)`` (with sign(0) = +1)."""
    if obs.m != op.rows:
        raise InvalidArgument(f"observation has {obs.m} bits, operator has {op.rows} rows")
    pred = signs(op.apply(as_signal(x_hat, op.cols, "x_hat")))
    return float(np.mean(pred == obs.bits))


def norm_relative_error(x_hat, x_true):
    from .sampler import recover_norm_error

    return float(recover_norm_error(x_hat, x_true))


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    cosine: float
    norm_rel_error: float
    sign_consistency: float
    meta: dict = field(default_factory=lambda: {"ssim_variant": SSIM_VARIANT})

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def image_shape_for(n, image_shape=None):
    """Image shape used for SSIM: the given one, else square if ``n`` is a square >= 64, else None."""
    if image_shape is not None:
        h, w = (int(v) for v in image_shape)
        if h * w != n:
            raise InvalidArgument(f"image shape {h}x{w} does not match N={n}")
        return h, w
    side = math.isqrt(n)
    if side * side == n and side >= SSIM_WINDOW:
        return side, side
    return None


def compute_metrics(op, obs, x_hat, x_true, data_range=2.0, image_shape=None):
    """All per-trial metrics; ``ssim`` is None when no image shape applies."""
    x_hat = as_signal(x_hat, op.cols, "x_hat")
    x_true = as_signal(x_true, op.cols, "x_true")
    shape = image_shape_for(x_hat.size, image_shape)
    report = MetricReport(
        psnr=psnr(x_hat, x_true, data_range),
        ssim=ssim(x_hat.reshape(shape), x_true.reshape(shape), data_range) if shape else None,
        cosine=cosine_similarity(x_hat, x_true),
        norm_rel_error=norm_relative_error(x_hat, x_true),
        sign_consistency=sign_consistency(op, x_hat, obs),
    )
    if shape:
        report.meta["image_shape"] = list(shape)
    return report


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function."""
    if not h > 0:
        raise InvalidArgument("step h must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# --- grid MAP reference ----------------------------------------------------

MAX_GRID_DIM = 3
_CHUNK = 1 << 18


@dataclass
class GridSearchResult:
    x: np.ndarray
    objective: float
    index: tuple
    axes: list
    objective_max: float
    cell: np.ndarray


def _axes(bounds, n, resolution):
    bounds = np.asarray(bounds, dtype=np.float64)
    if bounds.shape == (2,):
        bounds = np.tile(bounds, (n, 1))
    if bounds.shape != (n, 2) or np.any(bounds[:, 1] <= bounds[:, 0]):
        raise InvalidArgument(f"bounds must be (lo, hi) or one (lo, hi) per dimension, got {bounds.tolist()}")
    return [np.linspace(lo, hi, resolution) for lo, hi in bounds]


def map_objective(fidelity, obs, op, prior, x):
    """``nll(x) - log p(x)``, batched over leading axes of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    return nll_from_measurements(fidelity, obs, op.apply(x)) - prior.log_density(x)


def grid_map_search(obs, op, prior, fidelity, bounds, resolution):
    """Exhaustive minimizer of the MAP objective over a regular grid.

    Ties go to the lowest flat (lexicographic) grid index.
    """
    n = op.cols
    if n > MAX_GRID_DIM:
        raise Unsupported(f"grid oracle supports N <= {MAX_GRID_DIM}, got N={n}")
    if resolution < 64:
        raise InvalidArgument(f"grid resolution must be >= 64, got {resolution}")
    if prior.dim != n:
        raise InvalidArgument(f"prior has N={prior.dim}, operator has N={n}")
    check_compatible(fidelity, obs, op)
    axes = _axes(bounds, n, int(resolution))
    shape = (int(resolution),) * n
    total = int(np.prod(shape))
    best_f, best_i, worst = np.inf, -1, -np.inf
    for start in range(0, total, _CHUNK):
        flat = np.arange(start, min(total, start + _CHUNK))
        idx = np.unravel_index(flat, shape)
        pts = np.stack([axes[d][idx[d]] for d in range(n)], axis=-1)
        vals = map_objective(fidelity, obs, op, prior, pts)
        j = int(np.argmin(vals))
        if vals[j] < best_f:
            best_f, best_i = float(vals[j]), int(flat[j])
        worst = max(worst, float(np.max(vals)))
    index = tuple(int(v) for v in np.unravel_index(best_i, shape))
    x = np.array([axes[d][index[d]] for d in range(n)])
    cell = np.array([a[1] - a[0] for a in axes])
    return GridSearchResult(x, best_f, index, axes, worst, cell)


def grid_map_oracle(obs, op, prior, fidelity, bounds, resolution):
    return grid_map_search(obs, op, prior, fidelity, bounds, resolution).x


# --- gradient check suite --------------------------------------------------


@dataclass
class GradCheckResult:
    family: str
    instances: int
    max_rel_error: float
    worst_instance: int
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def gradient_check(family, instances=100, seed=0, h=1e-5, tol=1e-6, perturb=0.0):
    """Analytic likelihood gradients vs central differences on random small problems.

    Instances have N <= 8 and M <= 32 with margins kept well inside the
    saturation clamp. ``perturb`` adds a constant to the analytic gradient;
    it exists only to demonstrate that the check can fail.
    """
    from .likelihood import DataFidelity, nll, nll_grad
    from .measurement import gaussian_operator, quantize_onebit, sample_logistic
    from .rng import derive_rng, derive_seed

    worst, worst_i = 0.0, -1
    for i in range(int(instances)):
        rng = derive_rng(seed, "gradcheck", family, i)
        n = int(rng.integers(1, 9))
        m = int(rng.integers(1, 33))
        op = gaussian_operator(derive_seed(seed, "gradcheck-op", family, i), m, n)
        x_true = rng.standard_normal(n)
        x = rng.standard_normal(n)
        if family == "logistic":
            obs = sample_logistic(op, x_true, derive_seed(seed, "gradcheck-obs", i))
            fid = DataFidelity.logistic()
        else:
            sigma = float(rng.uniform(0.2, 2.0))
            obs = quantize_onebit(op, x_true, sigma, derive_seed(seed, "gradcheck-obs", i))
            fid = DataFidelity.probit(sigma) if family == "probit" else DataFidelity.null()
        analytic = nll_grad(fid, obs, op, x) + perturb
        numeric = finite_diff_grad(lambda v: nll(fid, obs, op, v), x, h)
        scale = max(np.linalg.norm(numeric), 1e-8)
        err = float(np.linalg.norm(analytic - numeric) / scale)
        if family == "null" and np.linalg.norm(numeric) == 0:
            err = float(np.linalg.norm(analytic - numeric))
        if err > worst:
            worst, worst_i = err, i
    return GradCheckResult(family, int(instances), worst, worst_i, tol)
