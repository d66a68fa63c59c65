"""Exponential precision schedules and per-channel prior parameters."""

from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-6


class ScheduleError(ValueError):
    """Raised for times outside [0, 1] or invalid schedule parameters."""


@dataclass(frozen=True)
class PrecisionSchedule:
    """Precision schedule ``beta(t) = beta_start * (exp(t log(beta_end/beta_start)) - 1)``.

    ``beta0`` is the prior precision (variance of the initial logits) and
    ``mu0`` the prior mean logits of length ``c``.
    """

    beta_start: float
    beta_end: float
    beta0: float = 1.0
    mu0: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        mu0 = np.array(self.mu0, dtype=np.float64).reshape(-1)
        if mu0.size < 1 or not np.all(np.isfinite(mu0)):
            raise ScheduleError("mu0 must be a finite vector with at least one entry")
        mu0.setflags(write=False)
        object.__setattr__(self, "mu0", mu0)
        if not (self.beta_start > 0 and self.beta_end > self.beta_start):
            raise ScheduleError(
                f"need beta_end > beta_start > 0, got {self.beta_start}, {self.beta_end}")
        if not self.beta0 >= 0:
            raise ScheduleError(f"beta0 must be nonnegative, got {self.beta0}")

    @property
    def n_classes(self):
        return self.mu0.shape[0]

    @property
    def log_ratio(self):
        return float(np.log(self.beta_end / self.beta_start))

    @classmethod
    def uniform(cls, beta_start, beta_end, beta0, n_classes):
        return cls(beta_start, beta_end, beta0, np.zeros(n_classes))

    @classmethod
    def from_marginals(cls, beta_start, beta_end, class_probs, beta0=1.0):
        """Prior centred on the log of a dataset's class marginals."""
        probs = np.asarray(class_probs, dtype=np.float64)
        probs = probs / probs.sum()
        return cls(beta_start, beta_end, beta0, np.log(np.maximum(probs, PROB_FLOOR)))

    def with_beta0(self, beta0):
        return PrecisionSchedule(self.beta_start, self.beta_end, beta0, self.mu0)


def _check_t(t):
    arr = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ScheduleError(f"time must lie in [0, 1], got {t}")
    return arr


def beta(schedule, t):
    """Accumulated precision at time ``t`` (scalar or array)."""
    t = _check_t(t)
    out = schedule.beta_start * np.expm1(t * schedule.log_ratio)
    return float(out) if out.ndim == 0 else out


def beta_prime(schedule, t):
    """Analytic time derivative of :func:`beta`."""
    t = _check_t(t)
    out = schedule.beta_start * schedule.log_ratio * np.exp(t * schedule.log_ratio)
    return float(out) if out.ndim == 0 else out


def alpha(schedule, t_lo, t_hi):
    """Precision added over ``[t_lo, t_hi]``."""
    if not t_lo < t_hi:
        raise ScheduleError(f"need t_lo < t_hi, got {t_lo} >= {t_hi}")
    return beta(schedule, t_hi) - beta(schedule, t_lo)


def variance(schedule, t):
    """Per-coordinate variance ``beta0 + beta(t)`` of the encoding marginal."""
    return schedule.beta0 + beta(schedule, t)
