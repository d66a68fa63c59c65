"""Logit-space beliefs over categorical samples.

A belief is a tensor of logits ``z`` of shape ``[..., n, c]``: ``n``
independent components over ``c`` classes, optionally with leading lane
(batch) dimensions.  Observing ``y ~ N(x, 1/alpha)`` shifts the logits by
``alpha * y``; with the true sample plugged in, the logits at time ``t`` are
Gaussian with mean ``mu0 + beta(t) x`` and variance ``beta0 + beta(t)``.
"""

from dataclasses import dataclass

import numpy as np

from catbsi.rng import Stream
from catbsi.schedule import beta, _check_t


class SingularityError(ZeroDivisionError):
    """Score requested where ``beta(t) + beta0 == 0``."""


@dataclass
class BeliefState:
    logits: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim < 2:
            raise ValueError("logits need shape [..., n_components, c]")
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("belief logits must be finite")
        self.t = float(_check_t(self.t))

    @property
    def n_components(self):
        return self.logits.shape[-2]

    @property
    def n_classes(self):
        return self.logits.shape[-1]


@dataclass
class CategoricalSample:
    onehot: np.ndarray

    def __post_init__(self):
        oh = np.asarray(self.onehot, dtype=np.float64)
        if oh.ndim < 2 or not np.all((oh == 0) | (oh == 1)) or not np.all(oh.sum(-1) == 1):
            raise ValueError("onehot rows must contain exactly one 1")
        self.onehot = oh

    @classmethod
    def from_classes(cls, classes, c):
        classes = np.asarray(classes, dtype=np.int64)
        return cls(np.eye(c)[classes])

    @property
    def classes(self):
        return self.onehot.argmax(-1)


@dataclass
class Measurement:
    y: np.ndarray
    precision: float

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if not self.precision > 0:
            raise ValueError(f"measurement precision must be positive, got {self.precision}")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("measurement must be finite")


def _logits(z):
    return z.logits if isinstance(z, BeliefState) else np.asarray(z, dtype=np.float64)


def posterior_pmf(z):
    """Row-wise softmax of the logits (max-subtracted)."""
    logits = _logits(z)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_pmf(z, x):
    """Sum over components of ``log Cat(x | softmax(z))`` (last two axes)."""
    logits = _logits(z)
    m = logits.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(logits - m).sum(axis=-1))
    onehot = x.onehot if isinstance(x, CategoricalSample) else np.asarray(x)
    return ((logits * onehot).sum(-1) - lse).sum(-1)


def quantize(probs):
    """Row-wise argmax as one-hot; ties go to the lowest index."""
    probs = np.asarray(probs)
    return CategoricalSample(np.eye(probs.shape[-1])[probs.argmax(-1)])


def sample_prior(schedule, n_components, rng, *, lanes=None, components=None,
                 channel=0, step=0):
    """Draw initial logits ``z0 ~ N(mu0, beta0 I)`` per row."""
    if n_components < 1:
        raise ValueError("need at least one component")
    eps = rng.normal(Stream.PRIOR + channel, step, schedule.n_classes, n_components,
                     components=components, lanes=lanes)
    return BeliefState(schedule.mu0 + np.sqrt(schedule.beta0) * eps, 0.0)


def bayes_update(z, m):
    """Posterior logits after observing ``m.y`` at precision ``m.precision``."""
    if z.logits.shape != m.y.shape:
        raise ValueError(f"shape mismatch: logits {z.logits.shape} vs measurement {m.y.shape}")
    return BeliefState(z.logits + m.precision * m.y, z.t)


def measure(x_hat, precision, noise):
    """Noisy measurement ``x_hat + noise / sqrt(precision)``."""
    return Measurement(np.asarray(x_hat) + np.asarray(noise) / np.sqrt(precision), precision)


def encode_marginal(schedule, x, t, rng, *, lanes=None, components=None, channel=0, step=0):
    """Draw ``z ~ N(mu0 + beta(t) x, (beta0 + beta(t)) I)`` for a known sample ``x``."""
    onehot = x.onehot if isinstance(x, CategoricalSample) else np.asarray(x, dtype=np.float64)
    b = beta(schedule, t)
    n = onehot.shape[-2]
    eps = rng.normal(Stream.ENCODE + channel, step, schedule.n_classes, n,
                     components=components, lanes=lanes)
    return BeliefState(schedule.mu0 + b * onehot + np.sqrt(schedule.beta0 + b) * eps, t)


def score(schedule, z, x_hat):
    """Score estimate ``(mu0 + beta(t) x_hat - z) / (beta(t) + beta0)``."""
    b = beta(schedule, z.t)
    denom = b + schedule.beta0
    if denom <= 0.0:
        raise SingularityError("score undefined at t=0 with beta0=0")
    return (schedule.mu0 + b * np.asarray(x_hat) - z.logits) / denom


def categorical_draw(z, rng, *, lanes=None, components=None, channel=0, step=0):
    """Draw one class per row from ``Cat(softmax(z))`` by inverse CDF."""
    probs = posterior_pmf(z)
    n = probs.shape[-2]
    u = rng.uniform(Stream.CATEGORICAL + channel, step, 1, n,
                    components=components, lanes=lanes)
    cdf = np.cumsum(probs, axis=-1)
    classes = (u >= cdf).sum(-1)
    classes = np.minimum(classes, probs.shape[-1] - 1)
    return CategoricalSample(np.eye(probs.shape[-1])[classes])
