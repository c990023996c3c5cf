"""The guided reverse loop and its inner data-consistency solver.

Each outer step denoises the current state, pulls the denoised estimate
towards the measurements by minimizing ``nll(x) + mu/2 ||x - z||^2`` with a
first-order method, and re-noises the result to the next timestep using the
residual noise direction (optionally mixed with fresh noise).
"""

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgument, InvalidPlan, NumericalFailure
from .likelihood import check_compatible, nll_from_measurements, nll_grad
from .measurement import as_signal
from .rng import derive_rng

ADAM = "adam"
GRADIENT_DESCENT = "gd"
FROM_Z = "from_z"
FROM_PREVIOUS = "from_previous"


@dataclass(frozen=True)
class InnerSolverConfig:
    steps: int = 100
    learning_rate: float = 0.25
    method: str = ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warm_start: str = FROM_Z

    def __post_init__(self):
        if int(self.steps) < 1:
            raise InvalidArgument(f"inner steps must be >= 1, got {self.steps}")
        if not self.learning_rate > 0:
            raise InvalidArgument(f"learning rate must be positive, got {self.learning_rate}")
        if self.method not in (ADAM, GRADIENT_DESCENT):
            raise InvalidArgument(f"unknown inner method {self.method!r}")
        if self.warm_start not in (FROM_Z, FROM_PREVIOUS):
            raise InvalidArgument(f"unknown warm start {self.warm_start!r}")


@dataclass(frozen=True)
class RecoveryConfig:
    lam: float = 0.02
    zeta: float = 0.0
    nfe: int = 20
    seed: int = 0
    inner: InnerSolverConfig = field(default_factory=InnerSolverConfig)

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise InvalidArgument(f"lambda must be positive, got {self.lam}")
        if not (0.0 <= self.zeta <= 1.0):
            raise InvalidArgument(f"zeta must lie in [0, 1], got {self.zeta}")
        if int(self.nfe) < 1:
            raise InvalidArgument(f"nfe must be >= 1, got {self.nfe}")


@dataclass
class TraceRecord:
    k: int
    t: int
    alpha: float
    sigma: float
    mu: float
    objective: float
    step_norm: float
    nll: float


@dataclass
class RecoveryTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def write_csv(self, path, header=None):
        with open(path, "w", newline="") as fh:
            for key, val in (header or {}).items():
                fh.write(f"# {key}={val}\n")
            names = list(TraceRecord.__dataclass_fields__)
            writer = csv.DictWriter(fh, fieldnames=names)
            writer.writeheader()
            for rec in self.records:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(rec).items()})


def _objective(fidelity, obs, op, x, z, mu):
    return float(nll_from_measurements(fidelity, obs, op.apply(x))) + 0.5 * mu * float(np.dot(x - z, x - z))


def solve_x_update(z_tilde, mu, fidelity, obs, op, cfg=None, x_init=None, grad_fn=None, step=None):
    """Minimize ``nll(x) + mu/2 ||x - z_tilde||^2``.

    Returns ``(x, objective)`` for the lowest-objective iterate seen, the
    starting point included, so the result never scores worse than where
    the solver started. ``grad_fn(x)``, if given, replaces the analytic
    likelihood gradient (used to cross-check against finite differences).
    """
    cfg = cfg or InnerSolverConfig()
    z = np.asarray(z_tilde, dtype=np.float64)
    if z.ndim != 1 or z.size != op.cols or not np.all(np.isfinite(z)):
        raise InvalidArgument("z_tilde must be a finite vector matching the operator")
    if not (np.isfinite(mu) and mu > 0):
        raise InvalidArgument(f"mu must be positive, got {mu}")
    check_compatible(fidelity, obs, op)
    if fidelity.family == "null":
        # purely quadratic: the minimizer is z itself
        return z.copy(), 0.0
    x = z.copy() if x_init is None else as_signal(x_init, op.cols, "x_init").copy()
    if grad_fn is None:
        grad_fn = lambda v: nll_grad(fidelity, obs, op, v)  # noqa: E731

    best_x, best_f = x.copy(), _objective(fidelity, obs, op, x, z, mu)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2 = cfg.beta1, cfg.beta2
    for i in range(1, int(cfg.steps) + 1):
        g = grad_fn(x) + mu * (x - z)
        if not np.all(np.isfinite(g)):
            raise NumericalFailure("non-finite gradient in x-update", step=step, inner_step=i)
        if cfg.method == ADAM:
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1**i)
            v_hat = v / (1 - b2**i)
            x = x - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        else:
            x = x - cfg.learning_rate * g
        f = _objective(fidelity, obs, op, x, z, mu)
        if not math.isfinite(f) or not np.all(np.isfinite(x)):
            raise NumericalFailure("non-finite iterate in x-update", step=step, inner_step=i)
        if f < best_f:
            best_x, best_f = x.copy(), f
    return best_x, best_f


def x_update(z_tilde, mu, fidelity, obs, op, cfg=None, grad_fn=None):
    return solve_x_update(z_tilde, mu, fidelity, obs, op, cfg, grad_fn=grad_fn)[0]


def _check_plan(plan, n):
    if plan.sigmas[-1] != 0 or plan.alphas[-1] != 1:
        raise InvalidPlan("plan must end at the clean endpoint (alpha=1, sigma=0)")
    if np.any(plan.sigmas[:-1] <= 0):
        k = int(np.flatnonzero(plan.sigmas[:-1] <= 0)[0])
        raise InvalidPlan(f"zero noise level at plan step k={plan.K - k} before the endpoint")


def _reverse_loop(obs, op, denoiser, plan, fidelity, cfg, mix, grad_fn=None):
    n = op.cols
    if denoiser.dim != n:
        raise InvalidArgument(f"denoiser has N={denoiser.dim}, operator has N={n}")
    _check_plan(plan, n)
    x = derive_rng(cfg.seed, "diff_onebit", "init").standard_normal(n)
    trace = RecoveryTrace()
    x_prev = None
    for i in range(plan.K):
        k = plan.K - i
        alpha, sigma = float(plan.alphas[i]), float(plan.sigmas[i])
        mu = float(plan.mu[i])
        z = np.asarray(denoiser.denoise(x, alpha, sigma), dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise NumericalFailure("denoiser returned non-finite values", step=k)
        x_init = x_prev if cfg.inner.warm_start == FROM_PREVIOUS else None
        x_hat, obj = solve_x_update(z, mu, fidelity, obs, op, cfg.inner, x_init, grad_fn, step=k)
        eps_tilde = (x - alpha * x_hat) / sigma
        direction = mix(eps_tilde, k)
        x = plan.alphas[i + 1] * x_hat + plan.sigmas[i + 1] * direction
        if not np.all(np.isfinite(x)):
            raise NumericalFailure("non-finite state after re-noising", step=k)
        x_prev = x_hat
        trace.records.append(
            TraceRecord(
                k=k,
                t=int(plan.timesteps[i]),
                alpha=alpha,
                sigma=sigma,
                mu=mu,
                objective=float(obj),
                step_norm=float(np.linalg.norm(x_hat - z)),
                nll=float(nll_from_measurements(fidelity, obs, op.apply(x_hat))),
            )
        )
    return x, trace


def diff_onebit(obs, op, denoiser, plan, fidelity, cfg=None, grad_fn=None):
    """Run the guided reverse loop with stochasticity ``cfg.zeta``.

    The next state mixes the residual direction with fresh noise as
    ``sqrt(1 - zeta) * eps_tilde + sqrt(zeta) * eps``; the fresh noise for
    step k comes from its own stream keyed by (seed, k).
    """
    cfg = cfg or RecoveryConfig()
    keep, fresh = math.sqrt(1.0 - cfg.zeta), math.sqrt(cfg.zeta)

    def mix(eps_tilde, k):
        eps = derive_rng(cfg.seed, "diff_onebit", "noise", k).standard_normal(eps_tilde.shape)
        return keep * eps_tilde + fresh * eps

    return _reverse_loop(obs, op, denoiser, plan, fidelity, cfg, mix, grad_fn)


def diff_onebit_deterministic(obs, op, denoiser, plan, fidelity, cfg=None, grad_fn=None):
    """The purely deterministic loop: the residual direction is reused as is."""
    cfg = cfg or RecoveryConfig()
    return _reverse_loop(obs, op, denoiser, plan, fidelity, cfg, lambda eps_tilde, k: eps_tilde, grad_fn)


def recover_norm_error(x_hat, x_true):
    x_hat = as_signal(x_hat, name="x_hat")
    x_true = as_signal(x_true, x_hat.size, "x_true")
    ref = np.linalg.norm(x_true)
    if ref == 0:
        raise InvalidArgument("ground truth has zero norm")
    return abs(np.linalg.norm(x_hat) - ref) / ref
