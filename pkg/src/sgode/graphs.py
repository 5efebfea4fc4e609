"""Benchmark graph families, normalizations and the graph text format."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ParseError
from .seeding import rng

DEFAULTS = {
    "random": {"p": 0.1},
    "powerlaw": {"m_attach": 5},
    "smallworld": {"k_ring": 4, "p_rewire": 0.1},
    "community": {"blocks": 4, "p_in": 0.2, "p_out": 0.01},
}

# all pair-based generators draw from one stream so that equal edge
# probabilities give identical graphs across families
_PAIR_STREAM = "graph-gen/pairs"


@dataclass
class Graph:
    n: int
    adjacency: np.ndarray
    directed: bool = False

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        if self.adjacency.shape != (self.n, self.n):
            raise ParameterError(f"adjacency shape {self.adjacency.shape} does not match n={self.n}")

    @property
    def num_edges(self):
        nz = np.count_nonzero(self.adjacency)
        return nz if self.directed else nz // 2

    def degrees(self):
        return (self.adjacency != 0).sum(axis=1)

    def edge_list(self):
        """Every nonzero A[i, j] as (rows, cols, weights), row-major order."""
        rows, cols = np.nonzero(self.adjacency)
        return rows.astype(np.int64), cols.astype(np.int64), self.adjacency[rows, cols].copy()


def _from_pairs(n, pairs):
    a = np.zeros((n, n))
    if len(pairs):
        i, j = np.asarray(pairs).T
        a[i, j] = 1.0
        a[j, i] = 1.0
    return Graph(n, a, directed=False)


def gen_grid(side):
    """side x side lattice, each node linked to its (up to) 8 Moore neighbours."""
    if side < 2:
        raise ParameterError(f"grid side must be >= 2, got {side}")
    n = side * side
    a = np.zeros((n, n))
    for r in range(side):
        for c in range(side):
            u = r * side + c
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if (dr or dc) and 0 <= rr < side and 0 <= cc < side:
                        a[u, rr * side + cc] = 1.0
    return Graph(n, a)


def _check_prob(name, p):
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"{name} must lie in [0, 1], got {p}")


def _pair_uniforms(n, seed):
    iu, ju = np.triu_indices(n, k=1)
    return iu, ju, rng(seed, _PAIR_STREAM).random(iu.size)


def gen_random(n, p=0.1, seed=0):
    """Erdos-Renyi G(n, p)."""
    _check_prob("p", p)
    iu, ju, u = _pair_uniforms(n, seed)
    keep = u < p
    return _from_pairs(n, np.stack([iu[keep], ju[keep]], axis=1))


def gen_community(n, blocks=4, p_in=0.2, p_out=0.01, seed=0):
    """Stochastic block model with equal blocks; the remainder joins the last one."""
    if blocks < 2:
        raise ParameterError(f"need at least 2 blocks, got {blocks}")
    if blocks > n:
        raise ParameterError(f"blocks ({blocks}) exceeds node count ({n})")
    _check_prob("p_in", p_in)
    _check_prob("p_out", p_out)
    if p_out > p_in:
        raise ParameterError(f"p_out ({p_out}) must not exceed p_in ({p_in})")
    size = n // blocks
    label = np.minimum(np.arange(n) // size, blocks - 1)
    iu, ju, u = _pair_uniforms(n, seed)
    prob = np.where(label[iu] == label[ju], p_in, p_out)
    keep = u < prob
    return _from_pairs(n, np.stack([iu[keep], ju[keep]], axis=1))


def gen_powerlaw(n, m_attach=5, seed=0):
    """Barabasi-Albert growth from an m_attach-clique."""
    if not 1 <= m_attach < n:
        raise ParameterError(f"need 1 <= m_attach < n, got m_attach={m_attach}, n={n}")
    g = rng(seed, "graph-gen/powerlaw")
    a = np.zeros((n, n))
    for i in range(m_attach):
        for j in range(i + 1, m_attach):
            a[i, j] = a[j, i] = 1.0
    deg = a.sum(axis=1)
    for new in range(m_attach, n):
        weights = deg[:new]
        total = weights.sum()
        p = weights / total if total > 0 else None
        targets = g.choice(new, size=m_attach, replace=False, p=p)
        a[new, targets] = a[targets, new] = 1.0
        deg[targets] += 1.0
        deg[new] = m_attach
    return Graph(n, a)


def gen_smallworld(n, k_ring=4, p_rewire=0.1, seed=0):
    """Watts-Strogatz: ring lattice with k_ring neighbours, then rewire."""
    if k_ring % 2:
        raise ParameterError(f"k_ring must be even, got {k_ring}")
    if not 0 < k_ring < n:
        raise ParameterError(f"need 0 < k_ring < n, got k_ring={k_ring}, n={n}")
    _check_prob("p_rewire", p_rewire)
    g = rng(seed, "graph-gen/smallworld")
    a = np.zeros((n, n), dtype=bool)
    for j in range(1, k_ring // 2 + 1):
        for u in range(n):
            v = (u + j) % n
            a[u, v] = a[v, u] = True
    for j in range(1, k_ring // 2 + 1):
        for u in range(n):
            v = (u + j) % n
            if g.random() >= p_rewire or not a[u, v]:
                continue
            free = ~a[u]
            free[u] = False
            choices = np.flatnonzero(free)
            if choices.size == 0:
                continue
            w = choices[g.integers(choices.size)]
            a[u, v] = a[v, u] = False
            a[u, w] = a[w, u] = True
    return Graph(n, a.astype(np.float64))


FAMILIES = {
    "grid": gen_grid,
    "random": gen_random,
    "powerlaw": gen_powerlaw,
    "smallworld": gen_smallworld,
    "community": gen_community,
}


def generate(family, seed=0, n=None, side=None, **params):
    """Build a graph by family name; unspecified parameters take the defaults."""
    if family == "grid":
        if side is None:
            side = int(round(math.sqrt(n))) if n else 20
        return gen_grid(side)
    if family not in FAMILIES:
        raise ParameterError(f"unknown graph family {family!r}")
    kw = dict(DEFAULTS[family])
    kw.update({k: v for k, v in params.items() if k in kw and v is not None})
    return FAMILIES[family](n if n is not None else 400, seed=seed, **kw)


def _inv_sqrt(d):
    out = np.zeros_like(d)
    pos = d > 0
    out[pos] = 1.0 / np.sqrt(d[pos])
    return out


def normalize_ndcn(g):
    """D^-1/2 (D - A) D^-1/2 with zero rows/cols for isolated nodes."""
    a = g.adjacency
    d = a.sum(axis=1)
    s = _inv_sqrt(d)
    return s[:, None] * (np.diag(d) - a) * s[None, :]


def row_normalize(g, direction="out"):
    """D_O^-1 A (out) or D_I^-1 A^T (in); zero-degree rows stay zero."""
    if direction not in ("out", "in"):
        raise ParameterError(f"direction must be 'out' or 'in', got {direction!r}")
    a = g.adjacency if direction == "out" else g.adjacency.T
    d = a.sum(axis=1)
    inv = np.zeros_like(d)
    inv[d > 0] = 1.0 / d[d > 0]
    return inv[:, None] * a


def format_graph(g):
    lines = [f"SGODE-GRAPH v1 n={g.n} directed={int(g.directed)}"]
    rows, cols, w = g.edge_list()
    for i, j, x in zip(rows, cols, w):
        if g.directed or i < j:
            lines.append(f"{i} {j} {float(x)!r}")
    return "\n".join(lines) + "\n"


def parse_graph(text):
    lines = text.split("\n")
    head = lines[0].split()
    if len(head) != 4 or head[:2] != ["SGODE-GRAPH", "v1"]:
        raise ParseError("missing 'SGODE-GRAPH v1' header", 1)
    try:
        fields = dict(tok.split("=", 1) for tok in head[2:])
        n = int(fields["n"])
        directed = bool(int(fields["directed"]))
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad header field: {exc}", 1) from None
    a = np.zeros((n, n))
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"expected 'i j w', got {line!r}", lineno)
        try:
            i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(f"non-numeric edge {line!r}", lineno) from None
        if not (0 <= i < n and 0 <= j < n):
            raise ParseError(f"node index out of range in {line!r}", lineno)
        a[i, j] = w
        if not directed:
            a[j, i] = w
    return Graph(n, a, directed)


def save_graph(g, path):
    from .io import atomic_write_text
    atomic_write_text(path, format_graph(g))


def load_graph(path):
    with open(path, "r", encoding="ascii") as fh:
        return parse_graph(fh.read())
