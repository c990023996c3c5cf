"""Discrete variance-preserving noise schedule and sampler plans."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

DEFAULT_T = 1000
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """Linear-beta VP schedule; timesteps are 1-based, ``t = 1..T``."""

    beta: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self):
        return self.beta.size

    def _idx(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise InvalidArgument(f"timestep out of range [1, {self.T}]: {t}")
        return t - 1

    def alpha(self, t):
        return np.sqrt(self.alpha_bar[self._idx(t)])

    def sigma(self, t):
        return np.sqrt(1.0 - self.alpha_bar[self._idx(t)])


def build_schedule(T=DEFAULT_T, beta_min=DEFAULT_BETA_MIN, beta_max=DEFAULT_BETA_MAX):
    if int(T) != T or T < 2:
        raise InvalidArgument(f"T must be an integer >= 2, got {T}")
    if not (0 < beta_min <= beta_max < 1):
        raise InvalidArgument(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    beta = np.linspace(beta_min, beta_max, int(T))
    alpha_bar = np.cumprod(1.0 - beta)
    beta.flags.writeable = False
    alpha_bar.flags.writeable = False
    return DiffusionSchedule(beta, alpha_bar)


@dataclass(frozen=True, eq=False)
class SamplerPlan:
    """Descending timesteps ``t_K > ... > t_1`` followed by the clean endpoint ``t_0 = 0``.

    ``alphas``/``sigmas`` have K+1 entries aligned with ``timesteps``; the
    last is (1, 0). ``mu[k]`` is the coupling weight used at ``timesteps[k]``
    for the K noisy steps only.
    """

    timesteps: np.ndarray
    alphas: np.ndarray
    sigmas: np.ndarray
    mu: np.ndarray
    lam: float

    @property
    def K(self):
        return self.mu.size


def uniform_timesteps(T, K):
    """K indices spread uniformly over [1, T], round-half-up, descending."""
    if K == 1:
        return np.array([T])
    pos = 1.0 + np.arange(K) * (T - 1) / (K - 1)
    idx = np.floor(pos + 0.5).astype(np.int64)
    idx = np.clip(idx, 1, T)
    # resolve collisions by pushing later duplicates down, walking from the top
    out = idx[::-1].copy()
    for i in range(1, K):
        if out[i] >= out[i - 1]:
            out[i] = out[i - 1] - 1
    if out[-1] < 1:
        raise InvalidArgument(f"cannot place {K} distinct steps in [1, {T}]")
    return out


def plan_timesteps(schedule, K, lam):
    K = int(K)
    if not (1 <= K <= schedule.T):
        raise InvalidArgument(f"K must lie in [1, T={schedule.T}], got {K}")
    if not (np.isfinite(lam) and lam > 0):
        raise InvalidArgument(f"lambda must be positive, got {lam}")
    ts = uniform_timesteps(schedule.T, K)
    alphas = np.append(schedule.alpha(ts), 1.0)
    sigmas = np.append(schedule.sigma(ts), 0.0)
    mu = lam * alphas[:-1] ** 2 / sigmas[:-1] ** 2
    timesteps = np.append(ts, 0)
    for a in (timesteps, alphas, sigmas, mu):
        a.flags.writeable = False
    return SamplerPlan(timesteps, alphas, sigmas, mu, float(lam))
