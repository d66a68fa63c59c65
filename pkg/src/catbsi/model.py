"""Small permutation-equivariant reconstruction network over graph beliefs.

Node and edge beliefs are embedded from their logits, class probabilities,
entropy and a sinusoidal time embedding, mixed by a few rounds of message
passing (mean aggregation over active neighbours, residual updates), and read
out as residual logits: ``f(z, t) = softmax(z + residual)``.  Edges live on
the upper triangle only, so predictions are symmetric by construction.

Gradients are computed by a hand-written reverse pass; features depend on the
belief only and carry no parameter gradient.
"""

import struct
from dataclasses import dataclass

import numpy as np

from catbsi.belief import posterior_pmf

DEFAULT_FREQS = 8
DEFAULT_FREQ_RANGE = (1.0, 1000.0)


def time_embedding(t, n_freqs=DEFAULT_FREQS, freq_range=DEFAULT_FREQ_RANGE):
    """``[sin(w t), cos(w t)]`` at ``n_freqs`` geometrically spaced frequencies."""
    freqs = np.geomspace(freq_range[0], freq_range[1], n_freqs)
    phase = np.asarray(t, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def _entropy(p):
    return -(p * np.log(np.maximum(p, 1e-300))).sum(-1, keepdims=True)


def _features(z, temb):
    p = posterior_pmf(z)
    zc = z - z.mean(-1, keepdims=True)
    temb = np.broadcast_to(temb[:, None, :], z.shape[:2] + temb.shape[-1:])
    return np.concatenate([zc, p, _entropy(p), temb], axis=-1)


def pair_index(n):
    """Upper-triangular pairs ``(i, j), i < j`` in row-major order."""
    return np.triu_indices(n, 1)


@dataclass
class _Cache:
    fx: np.ndarray
    fa: np.ndarray
    h0: np.ndarray
    e0: np.ndarray
    layers: list
    h: np.ndarray
    e: np.ndarray
    ea: np.ndarray
    inv_deg: np.ndarray
    px: np.ndarray
    pa: np.ndarray
    squeeze: bool


class ReconNet:
    """Message-passing reconstructor ``f_theta`` for node and edge beliefs."""

    def __init__(self, node_classes, edge_classes, hidden=32, layers=2,
                 n_freqs=DEFAULT_FREQS, freq_range=DEFAULT_FREQ_RANGE, seed=0,
                 init_scale=1.0):
        self.node_classes = int(node_classes)
        self.edge_classes = int(edge_classes)
        self.hidden = int(hidden)
        self.layers = int(layers)
        self.n_freqs = int(n_freqs)
        self.freq_range = (float(freq_range[0]), float(freq_range[1]))
        rng = np.random.default_rng(seed)
        d = self.hidden
        dx = 2 * self.node_classes + 1 + 2 * self.n_freqs
        da = 2 * self.edge_classes + 1 + 2 * self.n_freqs

        def dense(fan_in, fan_out):
            return rng.normal(0.0, init_scale / np.sqrt(fan_in), (fan_in, fan_out))

        p = {
            "embed.node.W": dense(dx, d),
            "embed.node.b": np.zeros(d),
            "embed.edge.W": dense(da, d),
            "embed.edge.b": np.zeros(d),
        }
        for li in range(self.layers):
            p[f"layer{li}.U"] = dense(d, d)
            p[f"layer{li}.V"] = dense(d, d)
            p[f"layer{li}.c"] = np.zeros(d)
            p[f"layer{li}.P"] = dense(d, d)
            p[f"layer{li}.Q"] = dense(d, d)
            p[f"layer{li}.r"] = np.zeros(d)
        # zero heads: training starts from f = softmax(z)
        p["head.node.W"] = np.zeros((d, self.node_classes))
        p["head.node.b"] = np.zeros(self.node_classes)
        p["head.edge.W"] = np.zeros((d, self.edge_classes))
        p["head.edge.b"] = np.zeros(self.edge_classes)
        self.params = p

    def hyperparameters(self):
        return {
            "node_classes": self.node_classes,
            "edge_classes": self.edge_classes,
            "hidden": self.hidden,
            "layers": self.layers,
            "n_freqs": self.n_freqs,
            "freq_min": self.freq_range[0],
            "freq_max": self.freq_range[1],
        }

    def copy(self):
        other = ReconNet.__new__(ReconNet)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def n_parameters(self):
        return sum(v.size for v in self.params.values())

    # -- forward / backward -------------------------------------------------

    def forward(self, node_logits, edge_logits, mask=None, t=0.0, keep=False):
        """Predict node ``[B, N, c_X]`` and edge ``[B, P, c_A]`` class probabilities.

        Unbatched inputs (``[N, c_X]``, ``[P, c_A]``) give unbatched outputs.
        With ``keep=True`` also returns the cache needed by :meth:`backward`.
        """
        zx = np.asarray(node_logits, dtype=np.float64)
        za = np.asarray(edge_logits, dtype=np.float64)
        squeeze = zx.ndim == 2
        if squeeze:
            zx, za = zx[None], za[None]
        if not (np.all(np.isfinite(zx)) and np.all(np.isfinite(za))):
            raise ValueError("NaN or inf in belief logits")
        B, N, _ = zx.shape
        I, J = pair_index(N)
        if za.shape[1] != I.size:
            raise ValueError(f"expected {I.size} edge rows for {N} nodes, got {za.shape[1]}")
        m = np.ones((B, N)) if mask is None else np.broadcast_to(
            np.asarray(mask, dtype=np.float64), (B, N))
        ea = m[:, I] * m[:, J]
        deg = np.zeros((B, N))
        np.add.at(deg, (slice(None), I), ea)
        np.add.at(deg, (slice(None), J), ea)
        inv_deg = 1.0 / np.maximum(deg, 1.0)
        temb = time_embedding(np.broadcast_to(np.asarray(t, dtype=np.float64), (B,)),
                              self.n_freqs, self.freq_range)
        P = self.params
        fx, fa = _features(zx, temb), _features(za, temb)
        h = np.tanh(fx @ P["embed.node.W"] + P["embed.node.b"])
        e = np.tanh(fa @ P["embed.edge.W"] + P["embed.edge.b"])
        h0, e0 = h, e
        w_ea = ea[..., None]
        cache_layers = []
        for li in range(self.layers):
            agg = self._scatter(e * h[:, J] * w_ea, e * h[:, I] * w_ea, I, J, N) * inv_deg[..., None]
            u = np.tanh(h @ P[f"layer{li}.U"] + agg @ P[f"layer{li}.V"] + P[f"layer{li}.c"])
            h_new = h + u
            s = h_new[:, I] + h_new[:, J]
            w = np.tanh(e @ P[f"layer{li}.P"] + s @ P[f"layer{li}.Q"] + P[f"layer{li}.r"])
            cache_layers.append((h, e, agg, u, s, w))
            h, e = h_new, e + w
        px = posterior_pmf(zx + h @ P["head.node.W"] + P["head.node.b"])
        pa = posterior_pmf(za + e @ P["head.edge.W"] + P["head.edge.b"])
        out = (px[0], pa[0]) if squeeze else (px, pa)
        if not keep:
            return out
        return out, _Cache(fx, fa, h0, e0, cache_layers, h, e, ea, inv_deg, px, pa, squeeze)

    __call__ = forward

    @staticmethod
    def _scatter(to_i, to_j, I, J, n):
        out = np.zeros(to_i.shape[:1] + (n,) + to_i.shape[2:])
        np.add.at(out, (slice(None), I), to_i)
        np.add.at(out, (slice(None), J), to_j)
        return out

    def backward(self, cache, grad_nodes, grad_edges):
        """Parameter gradients given upstream gradients on the predictions."""
        gx = np.asarray(grad_nodes, dtype=np.float64)
        ga = np.asarray(grad_edges, dtype=np.float64)
        if cache.squeeze:
            gx, ga = gx[None], ga[None]
        P = self.params
        px, pa = cache.px, cache.pa
        N = px.shape[1]
        I, J = pair_index(N)
        drx = px * (gx - (gx * px).sum(-1, keepdims=True))
        dra = pa * (ga - (ga * pa).sum(-1, keepdims=True))
        g = {
            "head.node.W": np.einsum("bnd,bnc->dc", cache.h, drx),
            "head.node.b": drx.sum((0, 1)),
            "head.edge.W": np.einsum("bpd,bpc->dc", cache.e, dra),
            "head.edge.b": dra.sum((0, 1)),
        }
        dh = drx @ P["head.node.W"].T
        de = dra @ P["head.edge.W"].T
        w_ea = cache.ea[..., None]
        for li in reversed(range(self.layers)):
            h, e, agg, u, s, w = cache.layers[li]
            daw = de * (1.0 - w * w)
            g[f"layer{li}.P"] = np.einsum("bpd,bpk->dk", e, daw)
            g[f"layer{li}.Q"] = np.einsum("bpd,bpk->dk", s, daw)
            g[f"layer{li}.r"] = daw.sum((0, 1))
            ds = daw @ P[f"layer{li}.Q"].T
            de = de + daw @ P[f"layer{li}.P"].T
            dh = dh + self._scatter(ds, ds, I, J, N)
            dau = dh * (1.0 - u * u)
            g[f"layer{li}.U"] = np.einsum("bnd,bnk->dk", h, dau)
            g[f"layer{li}.V"] = np.einsum("bnd,bnk->dk", agg, dau)
            g[f"layer{li}.c"] = dau.sum((0, 1))
            dagg = (dau @ P[f"layer{li}.V"].T) * cache.inv_deg[..., None]
            dh = dh + dau @ P[f"layer{li}.U"].T
            g_i, g_j = dagg[:, I], dagg[:, J]
            de = de + (g_i * h[:, J] + g_j * h[:, I]) * w_ea
            dh = dh + self._scatter(g_j * e * w_ea, g_i * e * w_ea, I, J, N)
        dae = de * (1.0 - cache.e0 ** 2)
        g["embed.edge.W"] = np.einsum("bpf,bpd->fd", cache.fa, dae)
        g["embed.edge.b"] = dae.sum((0, 1))
        dah = dh * (1.0 - cache.h0 ** 2)
        g["embed.node.W"] = np.einsum("bnf,bnd->fd", cache.fx, dah)
        g["embed.node.b"] = dah.sum((0, 1))
        return {k: g[k] for k in P}


def forward(net, belief, t=None):
    """Apply ``net`` to a :class:`~catbsi.graphs.GraphBelief`."""
    return net.forward(belief.node_logits, belief.edge_logits, belief.mask,
                       belief.t if t is None else t)


def backward(net, cache, grad_nodes, grad_edges):
    return net.backward(cache, grad_nodes, grad_edges)


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"CATBSI\x00\x01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, net, meta=None, extra=None):
    """Write ``net`` plus optional metadata and extra float64 arrays.

    Layout (little-endian)::

        magic      8 bytes  b"CATBSI\\x00\\x01"
        version    uint32
        meta_len   uint32, then meta_len bytes of UTF-8 "key = value" lines
        n_blocks   uint32
        per block: name_len uint16, name (ASCII), ndim uint8, ndim x uint32 dims
        payload:   each block's values as float64, C order, in header order
    """
    meta = dict(meta or {})
    for k, v in net.hyperparameters().items():
        meta[f"model.{k}"] = v
    blocks = dict(net.params)
    for k, v in (extra or {}).items():
        blocks[f"extra.{k}"] = np.asarray(v, dtype=np.float64)
    text = "".join(f"{k} = {v}\n" for k, v in meta.items()).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(text)))
        fh.write(text)
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks.items():
            raw = name.encode("ascii")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for arr in blocks.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(net, meta dict of strings, extra arrays)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a catbsi checkpoint")
    version, meta_len = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    meta = {}
    for line in data[pos:pos + meta_len].decode().splitlines():
        key, _, value = line.partition(" = ")
        meta[key] = value
    pos += meta_len
    (n_blocks,) = struct.unpack_from("<I", data, pos)
    pos += 4
    shapes = []
    for _ in range(n_blocks):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("ascii")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        dims = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        shapes.append((name, dims))
    arrays = {}
    for name, dims in shapes:
        count = int(np.prod(dims, dtype=np.int64))
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims).copy()
        pos += 8 * count
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after payload")
    net = ReconNet(int(meta["model.node_classes"]), int(meta["model.edge_classes"]),
                   int(meta["model.hidden"]), int(meta["model.layers"]),
                   int(meta["model.n_freqs"]),
                   (float(meta["model.freq_min"]), float(meta["model.freq_max"])))
    for k in net.params:
        if k not in arrays or arrays[k].shape != net.params[k].shape:
            raise CheckpointError(f"{path}: missing or misshapen block {k}")
        net.params[k] = arrays.pop(k)
    extra = {k[len("extra."):]: v for k, v in arrays.items() if k.startswith("extra.")}
    return net, meta, extra
