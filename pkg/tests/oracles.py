"""Reference implementations used to check the package.

Everything here is written directly from the defining formulas with plain
loops or dense linear algebra, and shares no code with ``sgode``.
"""
import math

import numpy as np


def central_diff(f, x, eps=1e-6):
    """Gradient of the scalar function ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f(x.copy())
        x[i] = old - eps
        fm = f(x.copy())
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def heat_dense(x, adj, k=1.0):
    """-k L x with the combinatorial Laplacian L = D - A."""
    lap = np.diag(adj.sum(axis=1)) - adj
    return -k * lap @ x


def mutualistic_loop(x, adj, b, kcap, c, d, e, h):
    n = len(x)
    out = np.zeros(n)
    for i in range(n):
        out[i] = b + x[i] * (1 - x[i] / kcap) * (x[i] / c - 1)
        for j in range(n):
            if adj[i, j]:
                out[i] += adj[i, j] * x[i] * x[j] / (d + e * x[i] + h * x[j])
    return out


def gene_loop(x, adj, b, f, hill):
    n = len(x)
    out = np.zeros(n)
    for i in range(n):
        out[i] = -b * x[i] ** f
        for j in range(n):
            if adj[i, j]:
                out[i] += adj[i, j] * x[j] ** hill / (x[j] ** hill + 1)
    return out


def rk4(f, y0, t0, t1, steps):
    """Classical fourth-order Runge-Kutta with ``steps`` equal steps."""
    y = np.array(y0, dtype=np.float64)
    h = (t1 - t0) / steps
    t = t0
    for _ in range(steps):
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def linear_matrix_ode(K, W, H0, C, t):
    """Exact H(t) for dH/dt = K H W + C via the matrix exponential of the Kronecker system."""
    from scipy.linalg import expm

    n, h = H0.shape
    # column-major vec: vec(K H W) = (W^T kron K) vec(H)
    M = np.kron(W.T, K)
    N = M.shape[0]
    aug = np.zeros((N + 1, N + 1))
    aug[:N, :N] = M
    aug[:N, N] = np.broadcast_to(C, (n, h)).reshape(-1, order="F")
    z = np.concatenate([H0.reshape(-1, order="F"), [1.0]])
    out = expm(aug * t) @ z
    return out[:N].reshape((n, h), order="F")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def top_k_brute(K, k):
    """Keep the k largest |K[i, j]| per row; ties go to the smaller column index."""
    n, m = K.shape
    out = np.zeros_like(K)
    for i in range(n):
        chosen = []
        for _ in range(k):
            best = None
            for j in range(m):
                if j in chosen:
                    continue
                if best is None or abs(K[i, j]) > abs(K[i, best]):
                    best = j
            chosen.append(best)
        for j in chosen:
            out[i, j] = K[i, j]
    return out


def mape_loop(pred, truth, mask=None, guard=1e-3):
    """Mean of |pred - truth| / |truth| over observed entries with |truth| > guard."""
    pred, truth = np.ravel(pred), np.ravel(truth)
    mask = np.ones_like(truth) if mask is None else np.ravel(mask)
    total, count = 0.0, 0
    for p, y, m in zip(pred, truth, mask):
        if m and abs(y) > guard:
            total += abs(p - y) / abs(y)
            count += 1
    return total / count


def mae_rmse_loop(pred, truth, mask=None):
    pred, truth = np.ravel(pred), np.ravel(truth)
    mask = np.ones_like(truth) if mask is None else np.ravel(mask)
    abs_sum = sq_sum = 0.0
    count = 0
    for p, y, m in zip(pred, truth, mask):
        if m:
            abs_sum += abs(p - y)
            sq_sum += (p - y) ** 2
            count += 1
    return abs_sum / count, math.sqrt(sq_sum / count)


def adam_reference(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    """Run Adam over a list of gradients (callables of p or fixed arrays)."""
    p = np.array(p, dtype=np.float64)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        g = (g(p) if callable(g) else np.asarray(g)) + wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        p = p - lr * mh / (np.sqrt(vh) + eps)
    return p


def gru_cell_reference(x, h_prev, K, params, m, substeps):
    """One signed-diffusion GRU step, with every ODE solved exactly.

    ``params`` holds P_ru, P_c, W_h, w_ru, b_ru, w_c, b_c and trend arrays
    b (n x 1), fc1.W, fc1.b, fc2.W, fc2.b, B0. The trend makes the field
    dH/dt = (K + diag b) H W_h + FC(H_in) + B0, which is linear in H.
    """
    hdim = h_prev.shape[1]

    def diffuse(H_in):
        z = np.maximum(H_in @ params["fc1.W"] + params["fc1.b"], 0)
        C = z @ params["fc2.W"] + params["fc2.b"] + params["B0"]
        A = K + np.diag(params["b"][:, 0])
        return [linear_matrix_ode(A, params["W_h"], H_in, C, t)
                for t in np.linspace(0, 1, m + 1)]

    H_ru = np.concatenate([x, h_prev], axis=1) @ params["P_ru"]
    ru = sigmoid(np.concatenate(diffuse(H_ru), axis=1) @ params["w_ru"] + params["b_ru"])
    r, u = ru[:, :hdim], ru[:, hdim:]
    H_c = np.concatenate([x, r * h_prev], axis=1) @ params["P_c"]
    c = np.tanh(np.concatenate(diffuse(H_c), axis=1) @ params["w_c"] + params["b_c"])
    return u * h_prev + (1 - u) * c
