"""Decentralized adaptive commit pacing.

Each producer waits a gap T between commit attempts. Modeling the other N-1
producers' attempt starts as Poisson with rate 1/(T + tau), where tau is the
measured manifest-I/O ("fragile") window, gives a conflict probability

    p(T) = 1 - exp(-(N-1) * tau / (T + tau))

and a duty factor d(T) = tau / (T + tau). Both fall monotonically in T, so the
smallest gap satisfying a conflict budget epsilon and a duty budget delta is
the max of the two closed-form inversions. Everything here is a pure function;
jitter takes its uniform sample as an argument so callers own all randomness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import DomainError


@dataclass(frozen=True)
class DacParams:
    """Budgets and estimator knobs.

    delta: duty budget (fraction of producer time allowed on manifest I/O).
    epsilon: conflict budget. 0.05 suits steady microbenchmark-style pools;
        0.20 is a reasonable preset for end-to-end runs that favor freshness.
    alpha: EMA coefficient for the fragile-window estimate.
    rho: gap jitter magnitude, desynchronizes producers.
    """

    delta: float = 0.5
    epsilon: float = 0.05
    alpha: float = 0.2
    rho: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise DomainError(f"delta must be in (0,1], got {self.delta}")
        if not 0.0 < self.epsilon < 1.0:
            raise DomainError(f"epsilon must be in (0,1), got {self.epsilon}")
        if not 0.0 < self.alpha <= 1.0:
            raise DomainError(f"alpha must be in (0,1], got {self.alpha}")
        if self.rho < 0.0:
            raise DomainError(f"rho must be >= 0, got {self.rho}")


def _check_non_negative(**kwargs: float) -> None:
    for name, value in kwargs.items():
        if value < 0:
            raise DomainError(f"{name} must be >= 0, got {value}")


def conflict_probability(t: float, tau: float, n: int) -> float:
    """Probability at least one competing attempt lands in the fragile window."""
    _check_non_negative(t=t, tau=tau)
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if n == 1 or tau == 0.0:
        return 0.0
    return 1.0 - math.exp(-(n - 1) * tau / (t + tau))


def duty(t: float, tau: float) -> float:
    """Fraction of an attempt cycle spent on manifest I/O."""
    _check_non_negative(t=t, tau=tau)
    if tau == 0.0:
        return 0.0
    return tau / (t + tau)


def t_conf(tau_hat: float, n: int, epsilon: float) -> float:
    """Smallest gap keeping the conflict probability at or under epsilon."""
    _check_non_negative(tau_hat=tau_hat)
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"epsilon must be in (0,1), got {epsilon}")
    return max(0.0, (n - 1) * tau_hat / (-math.log(1.0 - epsilon)) - tau_hat)


def t_cost(tau_hat: float, delta: float) -> float:
    """Smallest gap keeping the duty factor at or under delta."""
    _check_non_negative(tau_hat=tau_hat)
    if not 0.0 < delta <= 1.0:
        raise DomainError(f"delta must be in (0,1], got {delta}")
    return (1.0 - delta) / delta * tau_hat


def t_star(tau_hat: float, n: int, params: DacParams) -> float:
    """Minimal gap satisfying both budgets (the inf of the feasible set)."""
    return max(t_conf(tau_hat, n, params.epsilon), t_cost(tau_hat, params.delta))


def jittered_gap(t_star_value: float, rho: float, u: float) -> float:
    """Stretch the optimum by a uniform factor in [1, 1+rho]."""
    _check_non_negative(t_star=t_star_value, rho=rho)
    if not 0.0 <= u <= 1.0:
        raise DomainError(f"u must be a uniform sample in [0,1], got {u}")
    return t_star_value * (1.0 + rho * u)


def update_tau(tau_hat: float, observed: float, alpha: float) -> float:
    """Exponential moving average of the fragile window."""
    _check_non_negative(tau_hat=tau_hat, observed=observed)
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must be in (0,1], got {alpha}")
    return (1.0 - alpha) * tau_hat + alpha * observed


@dataclass
class DacState:
    """Per-producer controller state. Owned and mutated by one producer only.

    tau_hat is None until the first observation seeds it directly; before
    that the gap is zero (commit immediately), matching a cold start.
    """

    tau_hat: float | None = None
    gap: float = 0.0
    n_producers: int = 1
    t_last: float = float("-inf")

    def observe(self, tau_obs: float, params: DacParams) -> None:
        """Fold one fragile-window measurement in, regardless of outcome."""
        if self.tau_hat is None:
            self.tau_hat = tau_obs
        else:
            self.tau_hat = update_tau(self.tau_hat, tau_obs, params.alpha)

    def recompute_gap(self, params: DacParams, u: float) -> float:
        if self.tau_hat is None:
            self.gap = 0.0
        else:
            self.gap = jittered_gap(
                t_star(self.tau_hat, self.n_producers, params), params.rho, u
            )
        return self.gap
