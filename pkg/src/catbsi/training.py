"""Continuous-time training objective, training loop and discrete ELBO.

The per-graph objective is ``beta'(t)/2 * ||f(z, t) - x||^2`` summed over
the active node and edge components, with ``z`` drawn from the encoding
marginal at a single time ``t`` per graph.  All randomness (data index,
time, encoding noise) comes from the counter-based generator, so a run is
reproducible from its seed regardless of batching.
"""

from dataclasses import dataclass

import numpy as np

from catbsi.belief import log_pmf
from catbsi.graphs import SENTINEL, edge_rng_ids, node_rng_ids
from catbsi.model import pair_index
from catbsi.rng import CounterRNG, Stream
from catbsi.schedule import _check_t, beta, beta_prime


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, step, value):
        self.step = step
        self.value = value
        super().__init__(f"loss became non-finite ({value}) at step {step}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    batch: int = 16
    steps: int = 1000
    seed: int = 0
    clip: float = 1.0
    momentum: float = 0.9
    node_weight: float = 1.0
    edge_weight: float = 1.0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"learning rate must be nonnegative, got {self.lr}")
        if int(self.batch) != self.batch or self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.clip is not None and not self.clip > 0:
            raise ValueError(f"clip norm must be positive, got {self.clip}")
        if self.node_weight < 0 or self.edge_weight < 0:
            raise ValueError("channel weights must be nonnegative")


def _stack(graphs):
    n_max = graphs[0].n_max
    if any(g.n_max != n_max for g in graphs):
        raise ValueError("all graphs in a batch must share n_max")
    mask = np.stack([g.mask for g in graphs])
    xn = np.stack([g.node_target() for g in graphs])
    xe = np.stack([g.edge_target() for g in graphs])
    return xn, xe, mask


def _encode(schedule, x, t, active, rng, stream, step, lanes, components):
    """Encoding-marginal draw with per-lane times; inactive rows get the sentinel."""
    b = beta(schedule, t)[:, None, None]
    eps = rng.normal(stream, step, schedule.n_classes, components=components, lanes=lanes)
    z = schedule.mu0 + b * x + np.sqrt(schedule.beta0 + b) * eps
    return np.where(active[..., None], z, SENTINEL)


def batch_loss(net, schedule_node, schedule_edge, graphs, t, rng, *, step=0, lanes=None,
               node_ids=None, node_weight=1.0, edge_weight=1.0, grad=True):
    """Mean per-graph loss over a batch and its parameter gradients.

    ``t`` holds one time per graph.  ``lanes`` are the RNG lane ids of the
    graphs (default ``0..B-1``) and ``node_ids`` the RNG ids of the node
    slots (default ``0..n_max-1``); edge ids derive from node-id pairs.
    Returns ``(loss, grads, per_graph_losses)``.
    """
    t = _check_t(np.atleast_1d(np.asarray(t, dtype=np.float64)))
    B = len(graphs)
    if t.shape != (B,):
        raise ValueError(f"need one time per graph, got {t.shape} for {B} graphs")
    xn, xe, mask = _stack(graphs)
    n_max = mask.shape[1]
    I, J = pair_index(n_max)
    emask = mask[:, I] & mask[:, J]
    lanes = np.arange(B) if lanes is None else np.asarray(lanes)
    ids = np.arange(n_max) if node_ids is None else np.asarray(node_ids)
    zx = _encode(schedule_node, xn, t, mask, rng, Stream.ENCODE + 0, step, lanes, node_rng_ids(ids))
    za = _encode(schedule_edge, xe, t, emask, rng, Stream.ENCODE + 1, step, lanes,
                 edge_rng_ids(ids))
    (px, pa), cache = net.forward(zx, za, mask, t, keep=True)
    wx = node_weight * beta_prime(schedule_node, t)[:, None, None] * mask[..., None]
    wa = edge_weight * beta_prime(schedule_edge, t)[:, None, None] * emask[..., None]
    rx, ra = px - xn, pa - xe
    per_graph = 0.5 * ((wx * rx**2).sum((1, 2)) + (wa * ra**2).sum((1, 2)))
    value = float(per_graph.mean())
    grads = net.backward(cache, wx * rx / B, wa * ra / B) if grad else None
    return value, grads, per_graph


def loss(net, schedule_node, schedule_edge, x, t, rng, *, step=0, lane=0, node_ids=None,
         node_weight=1.0, edge_weight=1.0):
    """Objective for a single graph at time ``t``; returns ``(value, grads)``."""
    value, grads, _ = batch_loss(net, schedule_node, schedule_edge, [x], [t], rng, step=step,
                                 lanes=[lane], node_ids=node_ids, node_weight=node_weight,
                                 edge_weight=edge_weight)
    return value, grads


def loss_integrand(beta_prime_t, f, x):
    """``beta'(t)/2 * ||f - x||^2`` over the last two axes."""
    d = np.asarray(f) - np.asarray(x)
    return 0.5 * beta_prime_t * (d * d).sum((-2, -1))


def score_matching_residual(schedule, z, t, f, x):
    """Weighted denoising score-matching term for one belief.

    Uses ``lambda(t) = beta'(t) (beta(t)+beta0)^2 / beta(t)^2`` and the
    conventional ``1/2`` factor, ``lambda/2 * ||s_f - s_x||^2`` where
    ``s_f`` and ``s_x`` are the scores obtained with the reconstruction and
    the true sample.  Algebraically this equals :func:`loss_integrand`.
    """
    b = beta(schedule, t)
    if b <= 0:
        raise ZeroDivisionError("weighting is undefined at beta(t) = 0")
    denom = b + schedule.beta0
    s_f = (schedule.mu0 + b * np.asarray(f) - z) / denom
    s_x = (schedule.mu0 + b * np.asarray(x) - z) / denom
    lam = beta_prime(schedule, t) * denom**2 / b**2
    d = s_f - s_x
    return 0.5 * lam * (d * d).sum((-2, -1))


def elbo_discrete(net, schedules, x, k, n_mc, rng, *, node_ids=None):
    """Monte-Carlo estimate of the finite-``k`` lower bound on ``log p(x)``.

    Times follow ``t_i = i / (k + 1)``; the KL part sums
    ``(beta(t_{i+1}) - beta(t_i)) / 2 * ||f(z_i, t_i) - x||^2`` exactly over
    ``i = 0..k-1`` with ``n_mc`` encoding draws each, and the reconstruction
    part is the categorical log-pmf of the active components under
    ``softmax(z_k)``.  Returns ``(bound, reconstruction, kl)``.
    """
    if k < 1 or n_mc < 1:
        raise ValueError("need k >= 1 and n_mc >= 1")
    sn, se = schedules
    xn, xe, mask = _stack([x])
    n_max = mask.shape[1]
    I, J = pair_index(n_max)
    emask = (mask[:, I] & mask[:, J])[0]
    mask = mask[0]
    ids = np.arange(n_max) if node_ids is None else np.asarray(node_ids)
    nid, eid = node_rng_ids(ids), edge_rng_ids(ids)
    lanes = np.arange(n_mc)
    ts = np.arange(k + 1) / (k + 1)
    xn_b = np.broadcast_to(xn, (n_mc,) + xn.shape[1:])
    xe_b = np.broadcast_to(xe, (n_mc,) + xe.shape[1:])
    kl = 0.0
    for i in range(k):
        tt = np.full(n_mc, ts[i])
        zx = _encode(sn, xn_b, tt, mask, rng, Stream.ENCODE + 0, i, lanes, nid)
        za = _encode(se, xe_b, tt, emask, rng, Stream.ENCODE + 1, i, lanes, eid)
        px, pa = net.forward(zx, za, mask, ts[i])
        ax = beta(sn, ts[i + 1]) - beta(sn, ts[i])
        aa = beta(se, ts[i + 1]) - beta(se, ts[i])
        sq = ax * (((px - xn_b) ** 2).sum(-1) * mask).sum(-1) \
            + aa * (((pa - xe_b) ** 2).sum(-1) * emask).sum(-1)
        kl += 0.5 * float(sq.mean())
    tk = np.full(n_mc, ts[k])
    zx = _encode(sn, xn_b, tk, mask, rng, Stream.ENCODE + 0, k, lanes, nid)
    za = _encode(se, xe_b, tk, emask, rng, Stream.ENCODE + 1, k, lanes, eid)
    recon = float(np.mean(log_pmf(zx[:, mask], xn_b[:, mask]) + log_pmf(za[:, emask], xe_b[:, emask])))
    return recon - kl, recon, kl


def clip_by_global_norm(grads, max_norm):
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def train(net, dataset, config, schedule_node, schedule_edge, *, log_every=0, callback=None):
    """SGD(+momentum) on the continuous-time objective.

    Each step draws ``config.batch`` graphs uniformly from ``dataset`` and one
    time per graph.  Updates ``net`` in place and returns ``(net, losses)``
    where ``losses[s]`` is the batch loss at step ``s``.  Raises
    :class:`DivergenceError` on a non-finite loss.
    """
    if not dataset:
        raise ValueError("training needs a nonempty dataset")
    rng = CounterRNG(config.seed)
    velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    losses = np.empty(config.steps)
    lanes = np.arange(config.batch)
    for s in range(config.steps):
        u = rng.uniform(Stream.DATA, s, 1, 1, lanes=lanes)[:, 0, 0]
        idx = np.minimum((u * len(dataset)).astype(np.int64), len(dataset) - 1)
        t = rng.uniform(Stream.TIME, s, 1, 1, lanes=lanes)[:, 0, 0]
        batch = [dataset[i] for i in idx]
        value, grads, _ = batch_loss(net, schedule_node, schedule_edge, batch, t, rng, step=s,
                                     lanes=lanes, node_weight=config.node_weight,
                                     edge_weight=config.edge_weight)
        if not np.isfinite(value):
            raise DivergenceError(s, value)
        grads, norm = clip_by_global_norm(grads, config.clip)
        if not np.isfinite(norm):
            raise DivergenceError(s, norm)
        for k, g in grads.items():
            velocity[k] = config.momentum * velocity[k] + g
            net.params[k] -= config.lr * velocity[k]
        losses[s] = value
        if log_every and (s + 1) % log_every == 0:
            print(f"step {s + 1}: loss {losses[max(0, s + 1 - log_every):s + 1].mean():.5f}")
        if callback is not None:
            callback(s, value)
    return net, losses


def write_loss_curve(path, losses):
    with open(path, "w") as fh:
        for s, v in enumerate(losses):
            fh.write(f"{s},{v!r}\n")
