"""ODE integrators.

* :func:`integrate_fixed` - Euler / classical RK4 on tape tensors; every stage
  is recorded, so gradients are exact for the discrete forward pass.
* :func:`graph_ode` - the same RK4/Euler scheme for the graph vector field
  ``act(K (H W) + b * (H W) + c)`` as a single fused tape operation with a
  hand-written discrete adjoint. Used by the models for speed.
* :func:`integrate_dopri5` - adaptive Dormand-Prince 5(4) on plain arrays for
  ground-truth trajectories.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, IntegrationError

METHODS = ("euler", "rk4", "dopri5")


@dataclass
class SolverConfig:
    method: str = "rk4"
    rtol: float = 1e-7
    atol: float = 1e-9
    substeps: int | None = None
    max_step: float | None = None
    max_steps: int = 100_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown solver method {self.method!r}")
        if self.rtol <= 0 or self.atol <= 0:
            raise ConfigError("rtol and atol must be positive")
        if self.substeps is not None and self.substeps < 1:
            raise ConfigError("substeps must be >= 1")
        if self.max_step is not None and self.max_step <= 0:
            raise ConfigError("max_step must be positive")


def step_plan(t_grid, substeps=None, max_step=None):
    """Number of equal sub-steps for each interval of ``t_grid``."""
    t = np.asarray(t_grid, dtype=np.float64)
    if t.ndim != 1 or t.size == 0:
        raise ContractError("time grid must be a non-empty 1-D sequence")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ContractError("time grid must be strictly increasing")
    if max_step is not None:
        counts = np.maximum(1, np.ceil(dt / max_step - 1e-12)).astype(int)
    else:
        counts = np.full(dt.shape, substeps or 1, dtype=int)
    return t, counts


def integrate_fixed(rhs, x0, t_grid, method="rk4", substeps=None, max_step=None):
    """Fixed-step integration of ``dx/dt = rhs(t, x)`` recorded on the tape.

    Returns the list of states at ``t_grid`` (the first is ``x0``).
    """
    if method not in ("euler", "rk4"):
        raise ConfigError(f"integrate_fixed supports euler/rk4, got {method!r}")
    t, counts = step_plan(t_grid, substeps, max_step)
    x = x0
    out = [x0]
    step = 0
    for k in range(len(counts)):
        h = (t[k + 1] - t[k]) / counts[k]
        for s in range(counts[k]):
            tk = t[k] + s * h
            if method == "euler":
                x = x + h * rhs(tk, x)
            else:
                k1 = rhs(tk, x)
                k2 = rhs(tk + h / 2, x + (h / 2) * k1)
                k3 = rhs(tk + h / 2, x + (h / 2) * k2)
                k4 = rhs(tk + h, x + h * k3)
                x = x + (h / 6) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            step += 1
            if not np.all(np.isfinite(x.data)):
                raise IntegrationError(f"non-finite state at step {step} (t={tk + h:.6g})")
        out.append(x)
    return out


def _mix(M, Y):
    """M applied across nodes of a node-major block (rows = node * batch + b)."""
    n = M.shape[0]
    return (M @ Y.reshape(n, -1)).reshape(Y.shape)


def graph_ode(H0, W, times, K=None, bvec=None, c=None, act="relu", batch=1,
              method="rk4", substeps=None, max_step=None):
    """Integrate ``dH/dt = act(K (H W) + b * (H W) + c)`` and stack the states.

    ``K`` (n x n) mixes nodes of a node-major batch; ``None`` means identity.
    ``bvec`` (n x 1) scales each node's ``H W``; ``c`` is a constant drift of
    shape (rows x h) or (1 x h). Returns a (len(times)*rows) x h tensor whose
    block ``k`` is the state at ``times[k]`` (block 0 is ``H0``).
    """
    if act not in ("relu", "none"):
        raise ConfigError(f"act must be 'relu' or 'none', got {act!r}")
    if method not in ("euler", "rk4"):
        raise ConfigError(f"graph_ode supports euler/rk4, got {method!r}")
    t, counts = step_plan(times, substeps, max_step)
    rows, h = H0.shape
    if W.shape != (h, h):
        raise ContractError(f"W must be {h}x{h}, got {W.shape}")
    Wd = W.data
    cd = c.data if c is not None else None
    # K (H W) + b * (H W) = (K + diag b) (H W): one mixing matrix
    A = None
    if K is not None:
        A = K.data
        if K.shape[0] * batch != rows:
            raise ContractError(f"K {K.shape} does not match {rows} rows at batch {batch}")
    if bvec is not None:
        nb = bvec.shape[0]
        A = (A if A is not None else np.eye(nb)) + np.diag(bvec.data[:, 0])
    relu = act == "relu"
    rk4 = method == "rk4"

    def field(u):
        Y = u @ Wd
        P = _mix(A, Y) if A is not None else Y.copy()
        if cd is not None:
            P += cd
        if relu:
            np.maximum(P, 0.0, out=P)
        return Y, P

    y = H0.data
    blocks = [y]
    tape = []  # per step: (step size, stage inputs, stage H W, stage outputs)
    step = 0
    for k in range(len(counts)):
        hs = (t[k + 1] - t[k]) / counts[k]
        for _ in range(counts[k]):
            if rk4:
                Y1, k1 = field(y)
                u2 = k1 * (hs / 2)
                u2 += y
                Y2, k2 = field(u2)
                u3 = k2 * (hs / 2)
                u3 += y
                Y3, k3 = field(u3)
                u4 = k3 * hs
                u4 += y
                Y4, k4 = field(u4)
                acc = k2 + k3
                acc *= 2.0
                acc += k1
                acc += k4
                acc *= hs / 6
                acc += y
                tape.append((hs, (y, u2, u3, u4), (Y1, Y2, Y3, Y4), (k1, k2, k3, k4)))
                y = acc
            else:
                Y1, k1 = field(y)
                tape.append((hs, (y,), (Y1,), (k1,)))
                y = y + hs * k1
            step += 1
            if not np.isfinite(y).all():
                raise IntegrationError(f"non-finite state at step {step}")
        blocks.append(y)
    steps_per_block = np.concatenate([[0], np.cumsum(counts)])
    out_data = np.concatenate(blocks, axis=0)

    inputs = (H0, W, K, bvec, c)

    def bw(g):
        G = g.reshape(len(blocks), rows, h)
        need_A = (K is not None and K.requires_grad) or (bvec is not None and bvec.requires_grad)
        need_W = W.requires_grad
        need_c = c is not None and c.requires_grad
        AT = A.T if A is not None else None
        WT = Wd.T
        gW = np.zeros_like(Wd) if need_W else None
        gA = np.zeros_like(A) if need_A else None
        gc = np.zeros((rows, h)) if need_c else None

        def vjp(u, Y, out, gk):
            gp = gk * (out > 0) if relu else gk
            gY = _mix(AT, gp) if AT is not None else gp
            if need_W:
                gW[...] += u.T @ gY
            if need_A:
                n = A.shape[0]
                gA[...] += gp.reshape(n, -1) @ Y.reshape(n, -1).T
            if need_c:
                gc[...] += gp
            return gY @ WT

        gy = G[-1].copy()
        blk = len(blocks) - 1
        for s in range(len(tape) - 1, -1, -1):
            hs, us, Ys, ks = tape[s]
            if rk4:
                g0 = gy
                gu = vjp(us[3], Ys[3], ks[3], (hs / 6) * g0)
                gy = g0 + gu
                gk = (hs / 3) * g0
                gk += hs * gu
                gu = vjp(us[2], Ys[2], ks[2], gk)
                gy += gu
                gk = (hs / 3) * g0
                gk += (hs / 2) * gu
                gu = vjp(us[1], Ys[1], ks[1], gk)
                gy += gu
                gk = (hs / 6) * g0
                gk += (hs / 2) * gu
                gy += vjp(us[0], Ys[0], ks[0], gk)
            else:
                gy = gy + vjp(us[0], Ys[0], ks[0], hs * gy)
            if s == steps_per_block[blk - 1]:
                blk -= 1
                gy += G[blk]
        if not tape:
            gy = G[0].copy()

        grads = [gy if H0.requires_grad else None, gW, None, None, None]
        if need_A:
            if K is not None and K.requires_grad:
                grads[2] = gA
            if bvec is not None and bvec.requires_grad:
                grads[3] = np.diag(gA)[:, None].copy()
        if need_c:
            grads[4] = gc.sum(axis=0, keepdims=True) if cd.shape[0] == 1 else gc
        return tuple(grads)

    return T.record_op(out_data, inputs, bw)


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# 5th order minus embedded 4th order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension (Hairer, Norsett & Wanner)
_D = np.array([-12715105075 / 11282082432, 0.0, 87487479700 / 32700410799,
               -10690763975 / 1880347072, 701980252875 / 199316789632,
               -1453857185 / 822651844, 69997945 / 29380423])


@dataclass
class Dopri5Stats:
    accepted: int = 0
    rejected: int = 0
    rhs_evals: int = 0
    max_accepted_error: float = 0.0


def _rms(v):
    return math.sqrt(float(np.mean(v * v)))


def _initial_step(rhs, t0, y0, f0, rtol, atol):
    sc = atol + rtol * np.abs(y0)
    d0 = _rms(y0 / sc)
    d1 = _rms(f0 / sc)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = rhs(t0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / sc) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def integrate_dopri5(rhs, x0, t_eval, rtol=1e-7, atol=1e-9, t0=0.0, max_steps=100_000,
                     return_stats=False):
    """Adaptive Dormand-Prince integration of ``dx/dt = rhs(t, x)`` on arrays.

    States at ``t_eval`` come from the 4th-order dense output. ``t_eval`` must
    be strictly increasing and lie in ``[t0, inf)``.
    """
    t_eval = np.asarray(t_eval, dtype=np.float64)
    if t_eval.ndim != 1 or t_eval.size == 0:
        raise ContractError("t_eval must be a non-empty 1-D sequence")
    if np.any(np.diff(t_eval) <= 0):
        raise ContractError("t_eval must be strictly increasing")
    if t_eval[0] < t0:
        raise IntegrationError(f"t_eval starts at {t_eval[0]} before the initial time {t0}")
    if rtol <= 0 or atol <= 0:
        raise ConfigError("rtol and atol must be positive")
    y = np.array(x0, dtype=np.float64)
    t = float(t0)
    t_end = float(t_eval[-1])
    stats = Dopri5Stats()
    out = np.empty((t_eval.size,) + y.shape)
    idx = 0
    while idx < t_eval.size and t_eval[idx] == t:
        out[idx] = y
        idx += 1

    def f(tt, yy):
        stats.rhs_evals += 1
        return rhs(tt, yy)

    k1 = f(t, y)
    h = _initial_step(f, t, y, k1, rtol, atol) if idx < t_eval.size else 0.0
    err_prev = 1e-4
    while idx < t_eval.size:
        if stats.accepted + stats.rejected >= max_steps:
            raise IntegrationError(f"max_steps ({max_steps}) exceeded at t={t:.6g}")
        last = h >= t_end - t
        if last:
            h = t_end - t
        if h <= 16 * np.finfo(float).eps * max(abs(t), 1.0):
            raise IntegrationError(f"step size underflow at t={t:.6g}")
        ks = [k1]
        for s in range(1, 7):
            ys = y + h * sum(a * ks[j] for j, a in enumerate(_A[s]) if a != 0.0)
            ks.append(f(t + _C[s] * h, ys))
        y_new = y + h * sum(b * ks[j] for j, b in enumerate(_B5) if b != 0.0)
        err_vec = h * sum(e * ks[j] for j, e in enumerate(_E) if e != 0.0)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _rms(err_vec / sc)
        if not np.isfinite(err):
            stats.rejected += 1
            h *= 0.2
            continue
        if err <= 1.0:
            t_new = t_end if last else t + h
            while idx < t_eval.size and t_eval[idx] <= t_new:
                theta = (t_eval[idx] - t) / h
                out[idx] = _dense(y, y_new, ks, h, theta)
                idx += 1
            stats.accepted += 1
            stats.max_accepted_error = max(stats.max_accepted_error, err)
            t, y, k1 = t_new, y_new, ks[6]
            # PI controller
            fac = 0.9 * max(err, 1e-10) ** -0.17 * err_prev ** 0.04
            h *= min(10.0, max(0.2, fac))
            err_prev = max(err, 1e-4)
        else:
            stats.rejected += 1
            h *= max(0.2, 0.9 * err ** -0.2)
    return (out, stats) if return_stats else out


def _dense(y0, y1, ks, h, theta):
    r2 = y1 - y0
    r3 = h * ks[0] - r2
    r4 = r2 - h * ks[6] - r3
    r5 = h * sum(d * ks[j] for j, d in enumerate(_D) if d != 0.0)
    th1 = 1.0 - theta
    return y0 + theta * (r2 + th1 * (r3 + theta * (r4 + th1 * r5)))
