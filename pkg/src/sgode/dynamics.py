"""Ground-truth network dynamics and trajectory datasets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DomainError, NumericError, ParameterError, ParseError
from .ode import integrate_dopri5
from .seeding import rng

KINDS = ("heat", "mutualistic", "gene")

# horizon per (dynamics, graph family)
EVOLUTION_TIME = {
    "heat": {"grid": 5.0, "random": 0.08, "powerlaw": 0.6, "smallworld": 2.0, "community": 0.4},
    "mutualistic": {"grid": 5.0, "random": 2.0, "powerlaw": 4.0, "smallworld": 5.0, "community": 4.0},
    "gene": {"grid": 5.0, "random": 4.0, "powerlaw": 1.5, "smallworld": 4.5, "community": 5.0},
}


@dataclass
class DynamicsParams:
    kind: str = "heat"
    k_heat: float = 1.0
    b: float | np.ndarray = 0.1
    k_cap: float | np.ndarray = 5.0
    c: float | np.ndarray = 1.0
    d: float | np.ndarray = 5.0
    e: float | np.ndarray = 0.9
    h_sat: float | np.ndarray = 0.1
    b_gene: float | np.ndarray = 1.0
    f_exp: int = 2
    h_hill: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown dynamics kind {self.kind!r}")
        if self.f_exp not in (1, 2):
            raise ConfigError(f"f_exp must be 1 or 2, got {self.f_exp}")
        for name in ("k_heat", "b", "k_cap", "c", "d", "e", "h_sat", "b_gene", "h_hill"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigError(f"dynamics constant {name} must be finite")
        if self.kind == "mutualistic" and (np.any(np.asarray(self.k_cap) <= 0)
                                           or np.any(np.asarray(self.c) <= 0)):
            raise ConfigError("mutualistic dynamics need k_cap > 0 and c > 0")


def _node_array(v, n):
    return np.ascontiguousarray(np.broadcast_to(np.asarray(v, dtype=np.float64), (n,)))


def _as_state(x):
    x = np.asarray(x, dtype=np.float64)
    return np.ascontiguousarray(x.reshape(x.shape[0], -1))


class DynamicsRHS:
    """Vector field for one (graph, params) pair; caches the edge list."""

    def __init__(self, graph, params):
        self.graph = graph
        self.params = params
        self.rows, self.cols, self.w = graph.edge_list()
        n = graph.n
        p = params
        if p.kind == "mutualistic":
            self._mut = tuple(_node_array(v, n) for v in (p.b, p.k_cap, p.c, p.d, p.e, p.h_sat))
        elif p.kind == "gene":
            self._b_gene = _node_array(p.b_gene, n)

    def __call__(self, t, x):
        shape = np.shape(x)
        x = _as_state(x)
        kind = self.params.kind
        if kind == "heat":
            out = kernels.heat(x, self.rows, self.cols, self.w, float(self.params.k_heat))
        elif kind == "mutualistic":
            out, bad = kernels.mutualistic(x, self.rows, self.cols, self.w, *self._mut)
            if bad >= 0:
                raise NumericError(f"mutualistic denominator vanishes on edge "
                                   f"({self.rows[bad]}, {self.cols[bad]})")
        else:
            if np.any(x < 0):
                i = int(np.argwhere(x < 0)[0][0])
                raise DomainError(f"gene dynamics need nonnegative states; node {i} is {x.min():.3g}")
            out = kernels.gene(x, self.rows, self.cols, self.w, self._b_gene,
                               float(self.params.f_exp), float(self.params.h_hill))
        return out.reshape(shape)


def heat_rhs(x, g, k_heat=1.0):
    return DynamicsRHS(g, DynamicsParams("heat", k_heat=k_heat))(0.0, x)


def mutualistic_rhs(x, g, params):
    return DynamicsRHS(g, params)(0.0, x)


def gene_rhs(x, g, params):
    return DynamicsRHS(g, params)(0.0, x)


@dataclass
class SplitSpec:
    mode: str = "irregular"
    train: int = 80
    interp_test: int = 20
    extrap_test: int = 20

    def __post_init__(self):
        if self.mode not in ("irregular", "regular"):
            raise ConfigError(f"sampling mode must be irregular or regular, got {self.mode!r}")
        if self.mode == "regular" and self.interp_test:
            raise ConfigError("regular sampling has no interpolation split")

    @property
    def total(self):
        return self.train + self.interp_test + self.extrap_test

    @classmethod
    def regular(cls):
        return cls("regular", 80, 0, 20)


@dataclass
class Trajectory:
    """Snapshots ``states[k]`` (n x d) at ``times[k]``; ``times[0]`` is the initial time."""

    times: np.ndarray
    states: np.ndarray
    graph_ref: str = ""
    params_ref: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 2:
            self.states = self.states[:, :, None]
        if len(self.times) != len(self.states):
            raise ParameterError("times and states differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ParameterError("trajectory times must be strictly increasing")

    @property
    def n(self):
        return self.states.shape[1]

    @property
    def d(self):
        return self.states.shape[2]


@dataclass
class Splits:
    """Snapshot indices into a Trajectory (index 0, the initial state, is never listed)."""

    train: np.ndarray
    interp: np.ndarray
    extrap: np.ndarray
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return {"train": self.train, "interp": self.interp, "extrap": self.extrap}


def initial_state(n, seed, low=0.0, high=25.0, d=1):
    return rng(seed, "dynamics/x0").uniform(low, high, size=(n, d))


def sample_times(t_end, spec, seed):
    if spec.mode == "irregular":
        t = np.sort(rng(seed, "dynamics/times").uniform(0.0, t_end, size=spec.total))
        # uniform draws on (0, t_end]; a duplicate or zero has probability ~0
        if t[0] <= 0 or np.any(np.diff(t) <= 0):
            raise ParameterError("degenerate time sample; choose another seed")
        return t
    return t_end * np.arange(1, spec.total + 1) / spec.total


def make_splits(spec, seed):
    if spec.mode == "regular":
        idx = np.arange(1, spec.total + 1)
        return Splits(idx[:spec.train], np.array([], dtype=int), idx[spec.train:])
    head = spec.train + spec.interp_test
    if not spec.interp_test:
        return Splits(np.arange(1, head + 1), np.array([], dtype=int),
                      np.arange(head + 1, spec.total + 1))
    if spec.train < 2:
        raise ConfigError("interpolation splits need at least 2 training snapshots")
    # the first and last of the head stay in train so every interpolation
    # time lies inside the training range
    inner = rng(seed, "dynamics/split").permutation(head - 2) + 2
    k = spec.train - 2
    train = np.sort(np.concatenate([[1, head], inner[:k]])).astype(int)
    interp = np.sort(inner[k:])
    extrap = np.arange(head + 1, spec.total + 1)
    return Splits(train, interp, extrap)


def generate_trajectory(g, params, x0=None, t_end=1.0, sampler=None, seed=0,
                        rtol=1e-7, atol=1e-9):
    """Integrate the true dynamics with dopri5 and sample snapshots.

    Returns ``(trajectory, splits)``. Irregular sampling draws ``sampler.total``
    sorted uniform times on (0, t_end]; the first ``train + interp_test`` are
    split at random, the rest are the extrapolation set.
    """
    if not t_end > 0:
        raise ParameterError(f"t_end must be positive, got {t_end}")
    sampler = sampler or SplitSpec()
    if x0 is None:
        x0 = initial_state(g.n, seed)
    x0 = _as_state(x0)
    times = sample_times(t_end, sampler, seed)
    rhs = DynamicsRHS(g, params)
    states = integrate_dopri5(rhs, x0, np.concatenate([[0.0], times]), rtol=rtol, atol=atol)
    traj = Trajectory(np.concatenate([[0.0], times]), states)
    return traj, make_splits(sampler, seed)


def format_trajectory(traj):
    T, n, d = traj.states.shape
    lines = [f"SGODE-TRAJ v1 n={n} d={d} T={T}"]
    for t, s in zip(traj.times, traj.states):
        lines.append(" ".join([repr(float(t))] + [repr(float(v)) for v in s.reshape(-1)]))
    return "\n".join(lines) + "\n"


def parse_trajectory(text):
    lines = [ln for ln in text.split("\n")]
    head = lines[0].split()
    if len(head) != 5 or head[:2] != ["SGODE-TRAJ", "v1"]:
        raise ParseError("missing 'SGODE-TRAJ v1' header", 1)
    try:
        f = dict(tok.split("=", 1) for tok in head[2:])
        n, d, count = int(f["n"]), int(f["d"]), int(f["T"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad header field: {exc}", 1) from None
    times, states = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            vals = [float(v) for v in line.split()]
        except ValueError:
            raise ParseError("non-numeric value", lineno) from None
        if len(vals) != 1 + n * d:
            raise ParseError(f"expected {1 + n * d} values, got {len(vals)}", lineno)
        times.append(vals[0])
        states.append(np.array(vals[1:]).reshape(n, d))
    if len(times) != count:
        raise ParseError(f"header says T={count} but found {len(times)} snapshots")
    return Trajectory(np.array(times), np.array(states))


def save_trajectory(traj, path):
    from .io import atomic_write_text
    atomic_write_text(path, format_trajectory(traj))


def load_trajectory(path):
    with open(path, "r", encoding="ascii") as fh:
        return parse_trajectory(fh.read())


def format_splits(splits):
    lines = ["SGODE-SPLITS v1"]
    for name, idx in splits.as_dict().items():
        lines.append(" ".join([name] + [str(int(i)) for i in idx]))
    return "\n".join(lines) + "\n"


def parse_splits(text):
    lines = text.split("\n")
    if lines[0].strip() != "SGODE-SPLITS v1":
        raise ParseError("missing 'SGODE-SPLITS v1' header", 1)
    found = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        name, *vals = line.split()
        if name not in ("train", "interp", "extrap"):
            raise ParseError(f"unknown split {name!r}", lineno)
        try:
            found[name] = np.array([int(v) for v in vals], dtype=int)
        except ValueError:
            raise ParseError("non-integer snapshot index", lineno) from None
    missing = {"train", "interp", "extrap"} - set(found)
    if missing:
        raise ParseError(f"missing splits {sorted(missing)}")
    return Splits(found["train"], found["interp"], found["extrap"])


def save_splits(splits, path):
    from .io import atomic_write_text
    atomic_write_text(path, format_splits(splits))


def load_splits(path):
    with open(path, "r", encoding="ascii") as fh:
        return parse_splits(fh.read())
