"""Signed coefficient matrices, the self-trend term and the dynamics models."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .graphs import normalize_ndcn
from .ode import graph_ode, integrate_fixed
from .seeding import rng

VARIANTS = ("v1_dense", "v2_factored", "v3_signed_pair", "masked_signed",
            "positive1", "positive2", "adaptive")

_EMBEDDINGS = {
    "v2_factored": ("E1", "E2"),
    "v3_signed_pair": ("E1", "E2", "E3", "E4"),
    "masked_signed": ("E1", "E2", "E3", "EM1", "EM2"),
    "positive1": ("E1", "E2"),
    "positive2": ("E1", "E2", "E3", "E4"),
    "adaptive": ("E1", "E2"),
}


def _gauss(seed, name, shape, std):
    return rng(seed, f"init/{name}").normal(0.0, std, size=shape)


@dataclass
class SignedCoeff:
    """Learnable n x n coefficient matrix K in one of several parameterizations."""

    variant: str
    params: dict
    alpha: float = 1.0

    @classmethod
    def init(cls, variant, n, emb_dim=10, seed=0, prefix="K", alpha=1.0):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown coefficient variant {variant!r}")
        if variant == "v1_dense":
            params = {"K_raw": T.parameter(_gauss(seed, f"{prefix}.K_raw", (n, n), 0.1),
                                           f"{prefix}.K_raw")}
        else:
            std = 1.0 / np.sqrt(emb_dim)
            params = {e: T.parameter(_gauss(seed, f"{prefix}.{e}", (n, emb_dim), std),
                                     f"{prefix}.{e}")
                      for e in _EMBEDDINGS[variant]}
        return cls(variant, params, alpha)

    @property
    def n(self):
        return next(iter(self.params.values())).shape[0]

    def named_parameters(self, prefix="K"):
        return {f"{prefix}.{k}": v for k, v in self.params.items()}

    def mask(self):
        """Binary straight-through mask (masked_signed only)."""
        p = self.params
        return T.hardsigmoid_ste(p["EM1"] @ p["EM2"].T, self.alpha)

    def parts(self):
        """(positive part, negative part) as arrays, for inspection."""
        p = {k: v.data for k, v in self.params.items()}
        relu = lambda a: np.maximum(a, 0.0)  # noqa: E731
        v = self.variant
        if v == "v3_signed_pair":
            return relu(p["E1"] @ p["E2"].T), -relu(p["E3"] @ p["E4"].T)
        if v == "masked_signed":
            m = np.floor(np.clip(self.alpha * (p["EM1"] @ p["EM2"].T) / 6 + 0.5, 0, 1) + 0.5)
            return m * relu(p["E1"] @ p["E2"].T), -m * relu(p["E1"] @ p["E3"].T)
        k = self.build().data
        return np.maximum(k, 0.0), np.minimum(k, 0.0)


def build_K(sc):
    """Materialize K as a tape tensor."""
    p = sc.params
    v = sc.variant
    if v == "v1_dense":
        return p["K_raw"]
    if v == "v2_factored":
        return p["E1"] @ p["E2"].T
    if v in ("v3_signed_pair", "positive2"):
        pos = T.relu(p["E1"] @ p["E2"].T)
        other = T.relu(p["E3"] @ p["E4"].T)
        return pos - other if v == "v3_signed_pair" else pos + other
    if v == "positive1":
        return T.relu(p["E1"] @ p["E2"].T)
    if v == "masked_signed":
        k0 = T.relu(p["E1"] @ p["E2"].T) - T.relu(p["E1"] @ p["E3"].T)
        return T.mul(sc.mask(), k0)
    if v == "adaptive":
        return T.softmax_rows(T.relu(p["E1"] @ p["E2"].T))
    raise ConfigError(f"unknown coefficient variant {v!r}")


SignedCoeff.build = build_K


def adaptive_adjacency(E, E2=None, identity=True):
    """I + softmax_rows(relu(E E2^T)); E2 defaults to E."""
    E2 = E if E2 is None else E2
    phi = T.softmax_rows(T.relu(E @ E2.T))
    if not identity:
        return phi
    return T.add(phi, T.Tensor(np.eye(E.shape[0])))


@dataclass
class TrendSpec:
    """B(t) = l1*g1(H(t)) + l2*g2(H(0)) + l3*B0."""

    lambda1: int = 0
    lambda2: int = 0
    lambda3: int = 0
    g1_kind: str = "linear_scale_b"
    g2_kind: str = "none"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.g1_kind not in ("linear_scale_b", "weightpool"):
            raise ConfigError(f"unknown g1 kind {self.g1_kind!r}")
        if self.g2_kind not in ("none", "two_layer_fc"):
            raise ConfigError(f"unknown g2 kind {self.g2_kind!r}")
        for lam in (self.lambda1, self.lambda2, self.lambda3):
            if lam not in (0, 1):
                raise ConfigError("trend switches must be 0 or 1")

    @classmethod
    def init(cls, n, hidden, lambdas=(0, 0, 0), g1_kind="linear_scale_b",
             g2_kind="none", seed=0, prefix="trend", emb_dim=10):
        spec = cls(*lambdas, g1_kind=g1_kind, g2_kind=g2_kind)
        p = {}
        if spec.lambda1:
            if g1_kind == "linear_scale_b":
                p["b"] = np.zeros((n, 1))
            else:
                p["W_pool"] = _gauss(seed, f"{prefix}.W_pool", (emb_dim, hidden * hidden),
                                     1.0 / hidden)
        if spec.lambda2:
            if g2_kind == "none":
                raise ConfigError("lambda2 = 1 needs g2_kind='two_layer_fc'")
            std = 1.0 / np.sqrt(hidden)
            p["fc1.W"] = _gauss(seed, f"{prefix}.fc1.W", (hidden, hidden), std)
            p["fc1.b"] = np.zeros((1, hidden))
            p["fc2.W"] = _gauss(seed, f"{prefix}.fc2.W", (hidden, hidden), std)
            p["fc2.b"] = np.zeros((1, hidden))
        if spec.lambda3:
            p["B0"] = np.zeros((n, hidden))
        spec.params = {k: T.parameter(v, f"{prefix}.{k}") for k, v in p.items()}
        return spec

    def named_parameters(self, prefix="trend"):
        return {f"{prefix}.{k}": v for k, v in self.params.items()}

    def g2(self, H0, batch=1):
        p = self.params
        z = T.relu(H0 @ p["fc1.W"] + p["fc1.b"])
        return z @ p["fc2.W"] + p["fc2.b"]

    def constant(self, H0, batch=1):
        """The time-independent part l2*g2(H0) + l3*B0, or None."""
        parts = []
        if self.lambda2:
            parts.append(self.g2(H0, batch))
        if self.lambda3:
            parts.append(T.repeat_rows(self.params["B0"], batch))
        if not parts:
            return None
        return parts[0] if len(parts) == 1 else parts[0] + parts[1]


def trend_B(spec, H_t, H_0, W_h, batch=1, embedding=None):
    """Evaluate B(t) on the tape; returns a zero tensor when every switch is off."""
    out = None
    if spec.lambda1:
        if spec.g1_kind == "linear_scale_b":
            g1 = T.mul(T.repeat_rows(spec.params["b"], batch), H_t @ W_h)
        else:
            if embedding is None:
                raise ContractError("weightpool trend needs the node embedding E1")
            g1 = T.node_linear(H_t, embedding @ spec.params["W_pool"])
        out = g1
    const = spec.constant(H_0, batch)
    if const is not None:
        out = const if out is None else out + const
    if out is None:
        return T.Tensor(np.zeros(H_t.shape))
    return out


def sgode_rhs(K, H_t, W_h, b_h, B_t):
    """relu(K H W + B + b)."""
    return T.relu(K @ H_t @ W_h + B_t + b_h)


def ndcn_rhs(A_norm, H_t, W_h, b_h):
    """relu(A H W + b) with a fixed normalized operator A."""
    return T.relu(T.tensor(A_norm) @ H_t @ W_h + b_h)


MODEL_KINDS = ("sgodev1", "sgodev2", "sgodev3", "sgode-masked", "ndcn", "adaptive", "nograph")
_COEFF = {"sgodev1": "v1_dense", "sgodev2": "v2_factored", "sgodev3": "v3_signed_pair",
          "sgode-masked": "masked_signed", "adaptive": "adaptive"}
DEFAULT_LAMBDAS = {"sgodev3": (1, 0, 0)}


class DynModel:
    """Encoder -> graph ODE layer -> decoder, evaluated at requested times.

    Inputs are divided by ``x_scale`` and times by ``t_scale`` before entering
    the network; predictions are scaled back.
    """

    def __init__(self, kind, n, d_in=1, hidden=20, emb_dim=10, lambdas=None,
                 g1_kind="linear_scale_b", g2_kind=None, graph=None, seed=0, alpha=1.0,
                 x_scale=1.0, t_scale=1.0, max_step=0.125, method="rk4"):
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {kind!r}")
        if kind == "ndcn" and graph is None:
            raise ConfigError("the ndcn model needs the true graph")
        self.kind = kind
        self.n, self.d_in, self.hidden, self.emb_dim = n, d_in, hidden, emb_dim
        self.seed = seed
        self.x_scale = float(x_scale)
        self.t_scale = float(t_scale)
        self.max_step = max_step
        self.method = method
        lambdas = tuple(lambdas) if lambdas is not None else DEFAULT_LAMBDAS.get(kind, (0, 0, 0))
        if g2_kind is None:
            g2_kind = "two_layer_fc" if lambdas[1] else "none"
        h = hidden
        self.layers = {
            "enc.W": T.parameter(_gauss(seed, "enc.W", (d_in, h), 1.0 / np.sqrt(d_in)), "enc.W"),
            "enc.b": T.parameter(np.zeros((1, h)), "enc.b"),
            "ode.W": T.parameter(_gauss(seed, "ode.W", (h, h), 1.0 / np.sqrt(h)), "ode.W"),
            "ode.b": T.parameter(np.zeros((1, h)), "ode.b"),
            "dec.W": T.parameter(_gauss(seed, "dec.W", (h, d_in), 1.0 / np.sqrt(h)), "dec.W"),
            "dec.b": T.parameter(np.zeros((1, d_in)), "dec.b"),
        }
        self.coeff = None
        if kind in _COEFF:
            self.coeff = SignedCoeff.init(_COEFF[kind], n, emb_dim, seed, alpha=alpha)
        self.trend = TrendSpec.init(n, h, lambdas, g1_kind, g2_kind, seed, emb_dim=emb_dim)
        if g1_kind == "weightpool" and lambdas[0] and (self.coeff is None or "E1" not in self.coeff.params):
            raise ConfigError("weightpool trend needs an embedding-based coefficient matrix")
        self.graph = graph
        self._A = T.Tensor(normalize_ndcn(graph)) if kind == "ndcn" else None

    def hyperparameters(self):
        return {"kind": self.kind, "n": self.n, "d_in": self.d_in, "hidden": self.hidden,
                "emb_dim": self.emb_dim, "seed": self.seed, "x_scale": self.x_scale,
                "t_scale": self.t_scale, "max_step": float(self.max_step), "method": self.method,
                "lambdas": ",".join(str(x) for x in (self.trend.lambda1, self.trend.lambda2,
                                                     self.trend.lambda3)),
                "g1_kind": self.trend.g1_kind, "g2_kind": self.trend.g2_kind,
                "alpha": float(self.coeff.alpha) if self.coeff is not None else 1.0}

    @classmethod
    def from_hyperparameters(cls, hp, graph=None):
        """Rebuild an (untrained) model from :meth:`hyperparameters` output."""
        lam = tuple(int(v) for v in str(hp["lambdas"]).split(","))
        return cls(hp["kind"], int(hp["n"]), d_in=int(hp["d_in"]), hidden=int(hp["hidden"]),
                   emb_dim=int(hp["emb_dim"]), lambdas=lam, g1_kind=hp["g1_kind"],
                   g2_kind=hp["g2_kind"], graph=graph, seed=int(hp["seed"]),
                   alpha=float(hp["alpha"]), x_scale=float(hp["x_scale"]),
                   t_scale=float(hp["t_scale"]), max_step=float(hp["max_step"]),
                   method=hp["method"])

    def named_parameters(self):
        out = dict(self.layers)
        if self.coeff is not None:
            out.update(self.coeff.named_parameters())
        out.update(self.trend.named_parameters())
        return dict(sorted(out.items()))

    def coefficient(self):
        """The operator used in the ODE layer (None for the no-graph baseline)."""
        if self.coeff is not None:
            return build_K(self.coeff)
        return self._A

    def encode(self, x0):
        x = T.scale(T.tensor(x0), 1.0 / self.x_scale)
        return T.tanh(x @ self.layers["enc.W"] + self.layers["enc.b"])

    def decode(self, H):
        return T.scale(H @ self.layers["dec.W"] + self.layers["dec.b"], self.x_scale)

    def _fusable(self):
        return not (self.trend.lambda1 and self.trend.g1_kind == "weightpool")

    def forward(self, x0, times, fused=True):
        """Stacked predictions, (len(times)*n) x d; block k is the state at times[k].

        ``times[0]`` is the time of ``x0``.
        """
        times = np.asarray(times, dtype=np.float64) / self.t_scale
        H0 = self.encode(x0)
        K = self.coefficient()
        W, b = self.layers["ode.W"], self.layers["ode.b"]
        tr = self.trend
        if fused and self._fusable():
            const = tr.constant(H0)
            c = b if const is None else const + b
            bvec = tr.params["b"] if tr.lambda1 else None
            states = graph_ode(H0, W, times, K=K, bvec=bvec, c=c, act="relu",
                               method=self.method, max_step=self.max_step)
        else:
            emb = self.coeff.params.get("E1") if self.coeff is not None else None

            def rhs(t, H):
                B = trend_B(tr, H, H0, W, embedding=emb)
                mixed = K @ H if K is not None else H
                return T.relu(mixed @ W + B + b)

            seq = integrate_fixed(rhs, H0, times, method=self.method, max_step=self.max_step)
            states = T.concat_rows(*seq)
        return self.decode(states)

    def predict(self, x0, times):
        with T.no_grad():
            out = self.forward(x0, times)
        return out.data.reshape(len(times), self.n, self.d_in)


def dyn_forward(model, x0, t_eval):
    return model.forward(x0, t_eval)
