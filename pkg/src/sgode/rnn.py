"""Signed-diffusion GRU cells and the sequence-to-sequence forecaster."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .core import SignedCoeff, TrendSpec, _gauss
from .errors import ConfigError, ContractError
from .ode import graph_ode
from .seeding import rng

ABLATIONS = (None, "positive1", "positive2", "without-b", "only-ff")
_K_VARIANT = {"positive1": "positive1", "positive2": "positive2"}


def _linear(seed, name, fan_in, fan_out):
    return T.parameter(_gauss(seed, name, (fan_in, fan_out), 1.0 / math.sqrt(fan_in)), name)


class SignedDiffusionCell:
    """One GRU cell whose graph convolutions are signed continuous diffusions.

    The input and hidden state are concatenated and projected to ``hidden``
    columns, evolved by ``dH/dt = K H W_h + B(t)`` on [0, 1] and read out as
    ``sum_m H(t_m) w_m + b`` at ``m + 1`` equidistant times. The reset and
    update gates share one projection and one integration; the candidate has
    its own.
    """

    def __init__(self, n, d_in, hidden, m=2, seed=0, prefix="cell", trend=True,
                 only_final=False, substeps=4, emb_dim=10):
        if m < 1:
            raise ConfigError(f"diffusion step m must be >= 1, got {m}")
        self.n, self.d_in, self.hidden, self.m = n, d_in, hidden, m
        self.prefix = prefix
        self.only_final = only_final
        self.substeps = substeps
        h = hidden
        reads = 1 if only_final else m + 1
        self.p = {
            "P_ru": _linear(seed, f"{prefix}.P_ru", d_in + h, h),
            "P_c": _linear(seed, f"{prefix}.P_c", d_in + h, h),
            "W_h": T.parameter(_gauss(seed, f"{prefix}.W_h", (h, h), 0.1 / math.sqrt(h)),
                               f"{prefix}.W_h"),
            "w_ru": _linear(seed, f"{prefix}.w_ru", reads * h, 2 * h),
            # reset/update biases start at 1 so the cell initially keeps its state
            "b_ru": T.parameter(np.ones((1, 2 * h)), f"{prefix}.b_ru"),
            "w_c": _linear(seed, f"{prefix}.w_c", reads * h, h),
            "b_c": T.parameter(np.zeros((1, h)), f"{prefix}.b_c"),
        }
        lambdas = (1, 1, 1) if trend else (0, 0, 0)
        self.trend = TrendSpec.init(n, h, lambdas, "linear_scale_b",
                                    "two_layer_fc" if trend else "none", seed,
                                    prefix=f"{prefix}.trend", emb_dim=emb_dim)

    @property
    def sample_times(self):
        return np.linspace(0.0, 1.0, self.m + 1)

    def named_parameters(self):
        out = {f"{self.prefix}.{k}": v for k, v in self.p.items()}
        out.update(self.trend.named_parameters(f"{self.prefix}.trend"))
        return out

    def diffuse(self, H_in, K, batch=1):
        """The m+1 sampled states H(t_0=0), ..., H(t_m=1) of the signed diffusion."""
        tr = self.trend
        c = tr.constant(H_in, batch)
        bvec = tr.params["b"] if tr.lambda1 else None
        stacked = graph_ode(H_in, self.p["W_h"], self.sample_times, K=K, bvec=bvec, c=c,
                            act="none", batch=batch, method="rk4", substeps=self.substeps)
        rows = H_in.shape[0]
        return [T.row_slice(stacked, k * rows, (k + 1) * rows) for k in range(self.m + 1)]

    def readout(self, samples, gate):
        """sum_m H(t_m) w_m^Q + b_Q for gate 'ru' (both gates), 'R', 'U' or 'C'."""
        used = samples[-1:] if self.only_final else samples
        Hcat = used[0] if len(used) == 1 else T.concat_cols(*used)
        h = self.hidden
        if gate == "C":
            return Hcat @ self.p["w_c"] + self.p["b_c"]
        out = Hcat @ self.p["w_ru"] + self.p["b_ru"]
        if gate == "ru":
            return out
        if gate == "R":
            return T.col_slice(out, 0, h)
        if gate == "U":
            return T.col_slice(out, h, 2 * h)
        raise ConfigError(f"unknown gate {gate!r}")

    def step(self, x, h_prev, K, batch=1):
        """GRU update h = U*h_prev + (1-U)*C with diffusion-based gates."""
        h = self.hidden
        H_ru = T.concat_cols(x, h_prev) @ self.p["P_ru"]
        ru = T.sigmoid(self.readout(self.diffuse(H_ru, K, batch), "ru"))
        r, u = T.col_slice(ru, 0, h), T.col_slice(ru, h, 2 * h)
        H_c = T.concat_cols(x, T.mul(r, h_prev)) @ self.p["P_c"]
        cand = T.tanh(self.readout(self.diffuse(H_c, K, batch), "C"))
        return T.mul(u, h_prev) + T.mul(1.0 - u, cand)


def signed_diffusion(cell, H_in, gate, K, batch=1):
    """Diffuse ``H_in`` through the cell's signed ODE and read out one gate."""
    return cell.readout(cell.diffuse(H_in, K, batch), gate)


def dcgru_step(cell, x_t, h_prev, K, batch=1):
    if x_t.shape[0] != h_prev.shape[0]:
        raise ContractError(f"input rows {x_t.shape[0]} != hidden rows {h_prev.shape[0]}")
    return cell.step(x_t, h_prev, K, batch)


def to_node_major(x):
    """(B, n, d) array -> (n*B) x d with row i*B + b."""
    B, n, d = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(n * B, d)


def from_node_major(x, B):
    n = x.shape[0] // B
    return x.reshape(n, B, -1).transpose(1, 0, 2)


class Seq2SeqForecaster:
    """Encoder-decoder of signed-diffusion GRU stacks.

    The encoder consumes ``T_in`` steps; the decoder emits ``tau`` steps, fed
    with its own previous output (or, while training, the ground truth with a
    probability that decays as an inverse sigmoid of the iteration count).
    """

    kind = "sgode-rnn"

    def __init__(self, n, d=1, hidden=64, m=2, emb_dim=10, layers=1, T_in=12, tau=12,
                 ablation=None, seed=0, cl_decay_steps=2000, scheduled_sampling=True,
                 substeps=4):
        if ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {ablation!r}; choose from {ABLATIONS[1:]}")
        if layers < 1:
            raise ConfigError("need at least one layer")
        self.n, self.d, self.hidden, self.m, self.emb_dim = n, d, hidden, m, emb_dim
        self.layers, self.T_in, self.tau = layers, T_in, tau
        self.ablation, self.seed = ablation, seed
        self.cl_decay_steps = cl_decay_steps
        self.scheduled_sampling = scheduled_sampling
        self.substeps = substeps
        variant = _K_VARIANT.get(ablation, "v3_signed_pair")
        self.K = {side: SignedCoeff.init(variant, n, emb_dim, seed, prefix=f"{side}.K")
                  for side in ("enc", "dec")}
        kw = dict(m=m, seed=seed, trend=ablation != "without-b",
                  only_final=ablation == "only-ff", substeps=substeps, emb_dim=emb_dim)
        self.cells = {
            side: [SignedDiffusionCell(n, d if i == 0 else hidden, hidden,
                                       prefix=f"{side}.l{i}", **kw) for i in range(layers)]
            for side in ("enc", "dec")
        }
        self.out = {"out.W": _linear(seed, "out.W", hidden, d),
                    "out.b": T.parameter(np.zeros((1, d)), "out.b")}
        self.iteration = 0
        self._ss_rng = rng(seed, "sgode-rnn/scheduled-sampling")

    def hyperparameters(self):
        return {"n": self.n, "d": self.d, "hidden": self.hidden, "m": self.m,
                "emb_dim": self.emb_dim, "layers": self.layers, "T_in": self.T_in,
                "tau": self.tau, "ablation": self.ablation or "none", "seed": self.seed,
                "cl_decay_steps": self.cl_decay_steps, "substeps": self.substeps,
                "scheduled_sampling": self.scheduled_sampling,
                "enc.K.variant": self.K["enc"].variant, "dec.K.variant": self.K["dec"].variant}

    @classmethod
    def from_hyperparameters(cls, hp):
        kw = {k: hp[k] for k in ("n", "d", "hidden", "m", "emb_dim", "layers", "T_in", "tau",
                                 "seed", "cl_decay_steps", "substeps", "scheduled_sampling")
              if k in hp}
        abl = hp.get("ablation", "none")
        return cls(ablation=None if abl == "none" else abl, **kw)

    def named_parameters(self):
        out = dict(self.out)
        for side in ("enc", "dec"):
            out.update(self.K[side].named_parameters(f"{side}.K"))
            for cell in self.cells[side]:
                out.update(cell.named_parameters())
        return dict(sorted(out.items()))

    def teacher_forcing_prob(self):
        k = self.cl_decay_steps
        return k / (k + math.exp(self.iteration / k))

    def _check_window(self, X):
        if X.ndim != 4 or X.shape[1] != self.T_in or X.shape[2] != self.n or X.shape[3] != self.d:
            raise ContractError(f"expected windows of shape (B, {self.T_in}, {self.n}, {self.d}), "
                                f"got {X.shape}")

    def forward_batch(self, X, targets=None, training=False):
        """Stacked predictions (tau*n*B) x d, block k holding horizon k+1 (node-major)."""
        X = np.asarray(X, dtype=np.float64)
        self._check_window(X)
        B = X.shape[0]
        rows = self.n * B
        Ke, Kd = self.K["enc"].build(), self.K["dec"].build()
        hs = [T.Tensor(np.zeros((rows, self.hidden))) for _ in range(self.layers)]
        for t in range(self.T_in):
            inp = T.Tensor(to_node_major(X[:, t]))
            for i, cell in enumerate(self.cells["enc"]):
                hs[i] = cell.step(inp, hs[i], Ke, B)
                inp = hs[i]
        use_truth = training and targets is not None and self.scheduled_sampling
        prev = T.Tensor(np.zeros((rows, self.d)))
        outs = []
        for k in range(self.tau):
            inp = prev
            for i, cell in enumerate(self.cells["dec"]):
                hs[i] = cell.step(inp, hs[i], Kd, B)
                inp = hs[i]
            y = inp @ self.out["out.W"] + self.out["out.b"]
            outs.append(y)
            prev = y
            if use_truth and self._ss_rng.random() < self.teacher_forcing_prob():
                prev = T.Tensor(to_node_major(np.asarray(targets)[:, k]))
        if training:
            self.iteration += 1
        return T.concat_rows(*outs)

    @staticmethod
    def stack_targets(Y):
        """(B, tau, n, d) -> the row layout of :meth:`forward_batch`."""
        Y = np.asarray(Y, dtype=np.float64)
        B, tau, n, d = Y.shape
        return np.ascontiguousarray(Y.transpose(1, 2, 0, 3)).reshape(tau * n * B, d)

    def forecast(self, X):
        """Predict (B, tau, n, d) from windows (B, T_in, n, d); a single (T_in, n, d) window also works."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 3
        if single:
            X = X[None]
        with T.no_grad():
            out = self.forward_batch(X).data
        B = X.shape[0]
        pred = out.reshape(self.tau, self.n, B, self.d).transpose(2, 0, 1, 3)
        return pred[0] if single else pred


def forecast(model, window):
    return model.forecast(window)


def signed_oscillators(n=20, steps=2000, seed=0, coupling=0.25, noise=0.1):
    """Noisy damped oscillators coupled through a sparse signed matrix.

    Each node carries a 2-d rotating state; its observed value is the first
    component plus a slow shared cycle. Every node receives two incoming
    links of random sign. Returns ``(series (steps x n), C)``.
    """
    g = rng(seed, "sgode-rnn/oscillators")
    omega = g.uniform(2 * np.pi / 48, 2 * np.pi / 12, size=n)
    rho = 0.95
    A = np.zeros((2 * n, 2 * n))
    for i in range(n):
        c, s = np.cos(omega[i]), np.sin(omega[i])
        A[2 * i:2 * i + 2, 2 * i:2 * i + 2] = rho * np.array([[c, -s], [s, c]])
    C = np.zeros((n, n))
    for i in range(n):
        src = g.choice(np.delete(np.arange(n), i), size=2, replace=False)
        C[i, src] = coupling * g.choice([-1.0, 1.0], size=2)
    A[0::2, 0::2] += C
    radius = np.max(np.abs(np.linalg.eigvals(A)))
    if radius >= 0.99:
        A[0::2, 0::2] -= C
        C *= (0.99 - rho) / (radius - rho) if radius > rho else 0.5
        A[0::2, 0::2] += C
    z = g.normal(0.0, 1.0, size=2 * n)
    eps = g.normal(0.0, noise, size=(steps, 2 * n))
    out = np.empty((steps, n))
    cycle = np.sin(2 * np.pi * np.arange(steps) / 288.0)
    for t in range(steps):
        z = A @ z + eps[t]
        out[t] = z[0::2] + cycle[t]
    return out, C


def sinusoids(n=20, steps=300, seed=0):
    """Noise-free sinusoids with node-specific periods (12 to 48 steps) and phases."""
    g = rng(seed, "sgode-rnn/sinusoids")
    period = g.uniform(12.0, 48.0, size=n)
    phase = g.uniform(0.0, 2 * np.pi, size=n)
    t = np.arange(steps)[:, None]
    return np.sin(2 * np.pi * t / period + phase)
