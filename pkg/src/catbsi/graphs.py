"""Graph data model, toy datasets, validity oracles and evaluation metrics.

Graphs are stored with a fixed slot count ``n_max``; the active nodes occupy
the first ``n`` slots.  Edge category 0 means "no edge", the diagonal is
pinned to it, and padded nodes carry the reserved category ``node_classes``
which never enters a belief or a loss.

Graph file grammar (one graph per line, ``#`` lines are header/comments)::

    line   := n ";" nodes ";" edges
    nodes  := cat ("," cat)*                 # n node categories
    edges  := "" | edge ("," edge)*          # present edges only, sorted by (i, j)
    edge   := i "-" j "-" cat                # 0 <= i < j < n, 1 <= cat < edge_classes
"""

import itertools
from collections import Counter
from dataclasses import dataclass
from enum import Enum

import numpy as np

from catbsi.belief import categorical_draw
from catbsi.model import pair_index
from catbsi.rng import Stream
from catbsi.samplers import Channel, Scheme, integrate

MAX_ISO_NODES = 8
EDGE_KEY_BASE = 1 << 16


class GraphFormatError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class GraphSample:
    node_cats: np.ndarray
    edge_cats: np.ndarray
    mask: np.ndarray
    node_classes: int = 1
    edge_classes: int = 2

    def __post_init__(self):
        self.node_cats = np.asarray(self.node_cats, dtype=np.int64)
        self.edge_cats = np.asarray(self.edge_cats, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        n_max = self.mask.shape[0]
        n = int(self.mask.sum())
        if not np.all(self.mask[:n]):
            raise ValueError("active nodes must occupy the leading slots")
        if self.node_cats.shape != (n_max,) or self.edge_cats.shape != (n_max, n_max):
            raise ValueError("inconsistent graph tensor shapes")
        if not np.array_equal(self.edge_cats, self.edge_cats.T):
            raise ValueError("edge tensor must be symmetric")
        if np.any(np.diag(self.edge_cats) != 0):
            raise ValueError("self-loops are not allowed")
        if np.any(self.edge_cats[n:] != 0):
            raise ValueError("padded nodes cannot carry edges")
        if np.any(self.edge_cats < 0) or np.any(self.edge_cats >= self.edge_classes):
            raise ValueError("edge category out of range")
        active = self.node_cats[:n]
        if np.any(active < 0) or np.any(active >= self.node_classes):
            raise ValueError("node category out of range")
        if np.any(self.node_cats[n:] != self.node_classes):
            raise ValueError("padded nodes must carry the padding category")

    @classmethod
    def from_edges(cls, n, edges, n_max=None, node_cats=None, node_classes=1, edge_classes=2):
        """Build from ``(i, j)`` or ``(i, j, cat)`` tuples over ``n`` active nodes."""
        n_max = n if n_max is None else n_max
        if not 1 <= n <= n_max:
            raise ValueError(f"need 1 <= n <= n_max, got n={n}, n_max={n_max}")
        cats = np.full(n_max, node_classes, dtype=np.int64)
        cats[:n] = 0 if node_cats is None else node_cats
        adj = np.zeros((n_max, n_max), dtype=np.int64)
        for e in edges:
            i, j = int(e[0]), int(e[1])
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"bad edge {e} for {n} nodes")
            adj[i, j] = adj[j, i] = e[2] if len(e) > 2 else 1
        mask = np.arange(n_max) < n
        return cls(cats, adj, mask, node_classes, edge_classes)

    @property
    def n_max(self):
        return self.mask.shape[0]

    @property
    def n(self):
        return int(self.mask.sum())

    @property
    def node_onehot(self):
        """``[n_max, node_classes + 1]``; the last column is the padding class."""
        return np.eye(self.node_classes + 1)[self.node_cats]

    @property
    def edge_onehot(self):
        return np.eye(self.edge_classes)[self.edge_cats]

    def node_target(self):
        """Belief-space node targets ``[n_max, node_classes]`` (padded rows are zero)."""
        return self.node_onehot[:, :self.node_classes]

    def edge_target(self):
        """Upper-triangular edge targets ``[P, edge_classes]``."""
        I, J = pair_index(self.n_max)
        return np.eye(self.edge_classes)[self.edge_cats[I, J]]

    def edges(self):
        I, J = pair_index(self.n)
        cats = self.edge_cats[I, J]
        keep = cats != 0
        return list(zip(I[keep].tolist(), J[keep].tolist(), cats[keep].tolist()))

    def degrees(self):
        n = self.n
        return (self.edge_cats[:n, :n] != 0).sum(1)

    def permute(self, perm):
        """Relabel active nodes: new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        n = self.n
        full = np.concatenate([perm, np.arange(n, self.n_max)])
        return GraphSample(self.node_cats[full], self.edge_cats[np.ix_(full, full)],
                           self.mask.copy(), self.node_classes, self.edge_classes)

    def __eq__(self, other):
        return (isinstance(other, GraphSample)
                and self.node_classes == other.node_classes
                and self.edge_classes == other.edge_classes
                and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.node_cats, other.node_cats)
                and np.array_equal(self.edge_cats, other.edge_cats))


@dataclass
class GraphBelief:
    """Node logits ``[..., n_max, c_X]`` and upper-triangular edge logits ``[..., P, c_A]``."""

    node_logits: np.ndarray
    edge_logits: np.ndarray
    mask: np.ndarray
    t: float = 0.0

    @property
    def n_max(self):
        return self.node_logits.shape[-2]

    def edge_mask(self):
        I, J = pair_index(self.n_max)
        m = np.asarray(self.mask, dtype=bool)
        return m[..., I] & m[..., J]

    def materialize_edges(self):
        """Full symmetric ``[..., n_max, n_max, c_A]`` edge logits; the diagonal is zero."""
        n = self.n_max
        I, J = pair_index(n)
        lead = self.edge_logits.shape[:-2]
        out = np.zeros(lead + (n, n, self.edge_logits.shape[-1]))
        out[..., I, J, :] = self.edge_logits
        out[..., J, I, :] = self.edge_logits
        return out


@dataclass
class NodeCountDistribution:
    """Histogram over node counts ``1..n_max``; ``probs[k-1] = P(N = k)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or p.sum() <= 0:
            raise ValueError("node-count histogram is empty")
        self.probs = p / p.sum()

    @classmethod
    def from_counts(cls, counts, n_max=None):
        counts = list(counts)
        if not counts:
            raise ValueError("node-count histogram is empty")
        n_max = max(counts) if n_max is None else n_max
        hist = np.bincount(np.asarray(counts) - 1, minlength=n_max)[:n_max]
        return cls(hist.astype(np.float64))

    @property
    def n_max(self):
        return self.probs.size


def sample_node_count(dist, rng, *, lanes=None, step=0):
    """Draw node counts from the histogram (int, or an array when ``lanes`` is given)."""
    u = rng.uniform(Stream.NODE_COUNT, step, 1, 1, lanes=lanes)[..., 0, 0]
    cdf = np.cumsum(dist.probs)
    k = np.minimum(np.searchsorted(cdf, u, side="right"), dist.n_max - 1) + 1
    # skip zero-probability bins that searchsorted can land on through rounding
    support = np.flatnonzero(dist.probs > 0) + 1
    k = support[np.minimum(np.searchsorted(support, k), support.size - 1)]
    return int(k) if lanes is None else k.astype(np.int64)


def node_rng_ids(node_ids):
    return np.asarray(node_ids, dtype=np.int64)


def edge_rng_ids(node_ids):
    """Per-pair RNG ids that depend only on the unordered pair of node ids."""
    node_ids = np.asarray(node_ids, dtype=np.int64)
    I, J = pair_index(node_ids.size)
    a, b = node_ids[I], node_ids[J]
    return np.minimum(a, b) * EDGE_KEY_BASE + np.maximum(a, b)


SENTINEL = 0.0


def make_masked_belief(schedule_node, schedule_edge, n, n_max, rng, *, lanes=None,
                       node_ids=None):
    """Prior belief with ``n`` active nodes; padded components hold ``SENTINEL``.

    ``n`` may be an array of per-lane node counts when ``lanes`` is given.
    """
    n_arr = np.asarray(n)
    if np.any(n_arr < 1) or np.any(n_arr > n_max):
        raise ValueError(f"need 1 <= n <= n_max={n_max}, got {n}")
    ids = np.arange(n_max) if node_ids is None else np.asarray(node_ids)
    zx = rng.normal(Stream.PRIOR + 0, 0, schedule_node.n_classes, n_max,
                    components=node_rng_ids(ids), lanes=lanes)
    za = rng.normal(Stream.PRIOR + 1, 0, schedule_edge.n_classes, components=edge_rng_ids(ids),
                    lanes=lanes)
    zx = schedule_node.mu0 + np.sqrt(schedule_node.beta0) * zx
    za = schedule_edge.mu0 + np.sqrt(schedule_edge.beta0) * za
    mask = np.arange(n_max) < n_arr[..., None]
    if lanes is None:
        mask = mask.reshape(n_max)
    belief = GraphBelief(zx, za, mask, 0.0)
    belief.node_logits = np.where(mask[..., None], zx, SENTINEL)
    belief.edge_logits = np.where(belief.edge_mask()[..., None], za, SENTINEL)
    return belief


# ---------------------------------------------------------------------------
# generation


def sample_graphs(net, schedule_node, schedule_edge, config, node_counts, rng, count,
                  *, record=False, node_ids=None):
    """Generate ``count`` graphs with a trained reconstructor.

    Node counts come from ``node_counts`` (a :class:`NodeCountDistribution`).
    Returns the list of :class:`GraphSample` (and the trajectory record when
    ``record`` is set).
    """
    n_max = node_counts.n_max
    if count == 0:
        return ([], None) if record else []
    ns = sample_node_count(node_counts, rng, lanes=count)
    belief = make_masked_belief(schedule_node, schedule_edge, ns, n_max, rng, lanes=count,
                                node_ids=node_ids)
    ids = np.arange(n_max) if node_ids is None else np.asarray(node_ids)
    mask = belief.mask
    channels = [
        Channel(schedule_node, n_max, node_rng_ids(ids), mask),
        Channel(schedule_edge, belief.edge_logits.shape[-2], edge_rng_ids(ids),
                belief.edge_mask()),
    ]

    def f(zs, t):
        return net.forward(zs[0], zs[1], mask, t)

    states, rec, final = integrate(f, channels, config, rng, lanes=count,
                                   init=[belief.node_logits, belief.edge_logits], record=record)
    if config.scheme is Scheme.DISCRETE:
        nodes = categorical_draw(states[0], rng, lanes=count, components=channels[0].components,
                                 channel=0, step=config.steps).classes
        edges = categorical_draw(states[1], rng, lanes=count, components=channels[1].components,
                                 channel=1, step=config.steps).classes
    else:
        nodes, edges = final[0].argmax(-1), final[1].argmax(-1)
    graphs = [_decode(nodes[b], edges[b], int(ns[b]), n_max, schedule_node.n_classes,
                      schedule_edge.n_classes) for b in range(count)]
    return (graphs, rec) if record else graphs


def _decode(node_cls, edge_cls, n, n_max, node_classes, edge_classes):
    I, J = pair_index(n_max)
    adj = np.zeros((n_max, n_max), dtype=np.int64)
    keep = (I < n) & (J < n)
    adj[I[keep], J[keep]] = edge_cls[keep]
    adj[J[keep], I[keep]] = edge_cls[keep]
    cats = np.full(n_max, node_classes, dtype=np.int64)
    cats[:n] = node_cls[:n]
    return GraphSample(cats, adj, np.arange(n_max) < n, node_classes, edge_classes)


# ---------------------------------------------------------------------------
# datasets


class Family(str, Enum):
    ALL_TREES = "AllTreesN"
    CYCLES_VS_PATHS = "CyclesVsPaths"
    TWO_CLASS_SBM = "TwoClassSBM"


def prufer_decode(seq, n):
    """Edges of the labelled tree on ``n`` nodes with Prüfer sequence ``seq``."""
    degree = [1] * n
    for v in seq:
        degree[v] += 1
    edges = []
    for v in seq:
        leaf = min(u for u in range(n) if degree[u] == 1)
        edges.append((min(leaf, v), max(leaf, v)))
        degree[leaf] -= 1
        degree[v] -= 1
    u, w = [x for x in range(n) if degree[x] == 1]
    edges.append((u, w))
    return sorted(edges)


def all_trees(n):
    """Every labelled tree on ``n`` nodes (``n**(n-2)`` of them), ``n <= 6``."""
    if not 1 <= n <= 6:
        raise ValueError(f"AllTreesN supports 1 <= n <= 6, got {n}")
    if n == 1:
        return [GraphSample.from_edges(1, [])]
    return [GraphSample.from_edges(n, prufer_decode(seq, n))
            for seq in itertools.product(range(n), repeat=n - 2)]


def cycles_vs_paths(count, rng, n_lo=4, n_hi=8, p_cycle=0.5):
    if not 3 <= n_lo <= n_hi or count < 1 or not 0 <= p_cycle <= 1:
        raise ValueError("CyclesVsPaths needs 3 <= n_lo <= n_hi, count >= 1, p_cycle in [0, 1]")
    graphs = []
    for _ in range(count):
        n = int(rng.integers(n_lo, n_hi + 1))
        order = rng.permutation(n)
        edges = [(order[i], order[i + 1]) for i in range(n - 1)]
        if rng.random() < p_cycle:
            edges.append((order[-1], order[0]))
        graphs.append(GraphSample.from_edges(n, edges, n_max=n_hi))
    return graphs


def two_class_sbm(count, rng, n_lo=6, n_hi=12, p_in=0.7, p_out=0.1):
    if not 2 <= n_lo <= n_hi <= 12 or count < 1 or not (0 <= p_out <= 1 and 0 <= p_in <= 1):
        raise ValueError("TwoClassSBM needs 2 <= n_lo <= n_hi <= 12 and probabilities in [0, 1]")
    graphs = []
    for _ in range(count):
        n = int(rng.integers(n_lo, n_hi + 1))
        block = rng.permutation(np.arange(n) % 2)
        I, J = pair_index(n)
        p = np.where(block[I] == block[J], p_in, p_out)
        keep = rng.random(I.size) < p
        graphs.append(GraphSample.from_edges(n, list(zip(I[keep], J[keep])), n_max=n_hi))
    return graphs


def dataset_generate(family, params=None, rng=None):
    """Generate a toy dataset; returns ``(graphs, NodeCountDistribution)``."""
    params = dict(params or {})
    rng = rng if rng is not None else np.random.default_rng(params.pop("seed", 0))
    family = Family(family)
    if family is Family.ALL_TREES:
        graphs = all_trees(int(params.get("n", 4)))
        n_max = graphs[0].n_max
    elif family is Family.CYCLES_VS_PATHS:
        graphs = cycles_vs_paths(int(params.get("count", 64)), rng, int(params.get("n_lo", 4)),
                                 int(params.get("n_hi", 8)), float(params.get("p_cycle", 0.5)))
        n_max = int(params.get("n_hi", 8))
    else:
        graphs = two_class_sbm(int(params.get("count", 64)), rng, int(params.get("n_lo", 6)),
                               int(params.get("n_hi", 12)), float(params.get("p_in", 0.7)),
                               float(params.get("p_out", 0.1)))
        n_max = int(params.get("n_hi", 12))
    return graphs, NodeCountDistribution.from_counts([g.n for g in graphs], n_max)


# ---------------------------------------------------------------------------
# validity oracles


def _adjacency(g):
    n = g.n
    return g.edge_cats[:n, :n] != 0


def is_connected(g):
    adj = _adjacency(g)
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    frontier = [0]
    while frontier:
        v = frontier.pop()
        for u in np.flatnonzero(adj[v] & ~seen):
            seen[u] = True
            frontier.append(int(u))
    return bool(seen.all())


def is_tree(g):
    return int(_adjacency(g).sum()) // 2 == g.n - 1 and is_connected(g)


def is_cycle_or_path(g):
    deg = _adjacency(g).sum(1)
    if not is_connected(g):
        return False
    m = int(deg.sum()) // 2
    if m == g.n - 1:
        return bool(deg.max(initial=0) <= 2)
    return m == g.n and bool(np.all(deg == 2))


VALIDITY = {
    Family.ALL_TREES: is_tree,
    Family.CYCLES_VS_PATHS: is_cycle_or_path,
    Family.TWO_CLASS_SBM: is_connected,
}


# ---------------------------------------------------------------------------
# isomorphism


def _refined_colours(cats, adj):
    """Colour refinement; returns final colour ranks and the per-round signature history.

    Ranks alone forget what they were derived from, so the history of sorted
    signature multisets is what makes the result comparable across graphs.
    """
    n = len(cats)
    colours = [int(cats[v]) for v in range(n)]
    history = []
    n_classes = -1
    while True:
        sig = [(colours[v], tuple(sorted((colours[u], int(adj[v, u]))
                                         for u in range(n) if adj[v, u])))
               for v in range(n)]
        ranks = {s: r for r, s in enumerate(sorted(set(sig)))}
        history.append(tuple(sorted(sig)))
        colours = [ranks[s] for s in sig]
        if len(ranks) == n_classes:
            return colours, tuple(history)
        n_classes = len(ranks)


def canonical_form(g):
    """Exact isomorphism-invariant key for graphs with at most 8 active nodes.

    Nodes are partitioned by colour refinement over (node category, incident
    edge categories); the key is the colour signature plus the
    lexicographically smallest upper-triangular edge code over all
    colour-preserving orderings.
    """
    n = g.n
    if n > MAX_ISO_NODES:
        raise ValueError(f"exact isomorphism is limited to {MAX_ISO_NODES} nodes, got {n}")
    adj = g.edge_cats[:n, :n]
    cats = g.node_cats[:n]
    colours, history = _refined_colours(cats, adj)
    classes = [[v for v in range(n) if colours[v] == c] for c in range(max(colours) + 1)]
    blocks = [list(itertools.permutations(cls)) for cls in classes]
    perms = np.array([sum(choice, ()) for choice in itertools.product(*blocks)], dtype=np.int64)
    I, J = pair_index(n)
    codes = adj[perms[:, I], perms[:, J]]
    best = codes[np.lexsort(codes.T[::-1])[0]] if codes.shape[1] else codes[0]
    return (n, history, tuple(best.tolist()))


def are_isomorphic(g1, g2):
    return canonical_form(g1) == canonical_form(g2)


# ---------------------------------------------------------------------------
# metrics


def degree_histogram(graphs, n_bins):
    counts = np.zeros(n_bins)
    for g in graphs:
        deg = g.degrees()
        counts += np.bincount(deg, minlength=n_bins)[:n_bins]
    return counts / max(counts.sum(), 1.0)


def eval_metrics(samples, train_set, family=Family.ALL_TREES):
    """Validity, uniqueness, novelty and degree-histogram TV of ``samples``."""
    if not samples:
        raise ValueError("no samples to evaluate")
    valid = VALIDITY[Family(family)]
    forms = [canonical_form(g) for g in samples]
    train_forms = {canonical_form(g) for g in train_set}
    n_bins = max(max(g.n_max for g in samples), max((g.n_max for g in train_set), default=1))
    p = degree_histogram(samples, n_bins)
    q = degree_histogram(train_set, n_bins)
    return {
        "validity": sum(bool(valid(g)) for g in samples) / len(samples),
        "uniqueness": len(set(forms)) / len(samples),
        "novelty": sum(f not in train_forms for f in forms) / len(samples),
        "degree_hist_tv": 0.5 * float(np.abs(p - q).sum()),
    }


# ---------------------------------------------------------------------------
# graph files


def format_graph(g):
    n = g.n
    nodes = ",".join(str(c) for c in g.node_cats[:n])
    edges = ",".join(f"{i}-{j}-{c}" for i, j, c in g.edges())
    return f"{n};{nodes};{edges}"


def write_graphs(path, graphs, **header):
    with open(path, "w") as fh:
        fh.write("# catbsi-graphs v1\n")
        if graphs:
            header = {"node_classes": graphs[0].node_classes,
                      "edge_classes": graphs[0].edge_classes,
                      "n_max": max(g.n_max for g in graphs), **header}
        if header:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
        for g in graphs:
            fh.write(format_graph(g) + "\n")


def _parse_line(text, lineno):
    try:
        n_s, nodes_s, edges_s = text.split(";")
        n = int(n_s)
        cats = [int(c) for c in nodes_s.split(",")] if nodes_s else []
        edges = []
        for item in filter(None, edges_s.split(",")):
            i, j, c = (int(x) for x in item.split("-"))
            edges.append((i, j, c))
    except ValueError:
        raise GraphFormatError(f"cannot parse {text!r}", lineno) from None
    if n < 1 or len(cats) != n:
        raise GraphFormatError(f"expected {n} node categories, got {len(cats)}", lineno)
    keys = [(i, j) for i, j, _ in edges]
    if any(not 0 <= i < j < n for i, j in keys) or keys != sorted(set(keys)):
        raise GraphFormatError("edges must satisfy 0 <= i < j < n, sorted and unique", lineno)
    if any(c < 1 for _, _, c in edges):
        raise GraphFormatError("edge categories must be >= 1", lineno)
    return n, cats, edges


def read_graphs(path):
    """Parse a graph file; returns ``(graphs, header dict)``."""
    header, parsed = {}, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, _, v = tok.partition("=")
                        header[k] = v
                continue
            parsed.append((lineno,) + _parse_line(line, lineno))
    node_classes = int(header.get("node_classes",
                                  1 + max((max(c) for _, _, c, _ in parsed), default=0)))
    edge_classes = int(header.get("edge_classes",
                                  1 + max((c for *_, es in parsed for *_, c in es), default=1)))
    n_max = int(header.get("n_max", max((n for _, n, _, _ in parsed), default=1)))
    graphs = []
    for lineno, n, cats, edges in parsed:
        try:
            graphs.append(GraphSample.from_edges(n, edges, n_max, cats, node_classes, edge_classes))
        except ValueError as exc:
            raise GraphFormatError(str(exc), lineno) from None
    return graphs, header


def family_degree_summary(graphs):
    """Counter of sorted degree sequences; handy for eyeballing generated sets."""
    return Counter(tuple(sorted(g.degrees().tolist())) for g in graphs)
