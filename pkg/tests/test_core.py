import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgode import tensor as T
from sgode.core import (DynModel, MODEL_KINDS, SignedCoeff, TrendSpec, adaptive_adjacency,
                        build_K, dyn_forward, ndcn_rhs, sgode_rhs, trend_B)
from sgode.errors import ConfigError, ContractError
from sgode.graphs import Graph, gen_random, normalize_ndcn

from oracles import central_diff, rel_err


def coeff(variant, **arrays):
    return SignedCoeff(variant, {k: T.parameter(v) for k, v in arrays.items()})


def test_v3_identical_embeddings_cancel():
    E = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(build_K(coeff("v3_signed_pair", E1=E, E2=E, E3=E, E4=E)).data,
                          np.zeros((4, 4)))


def test_v3_hand_example():
    I2 = np.eye(2)
    sc = coeff("v3_signed_pair", E1=np.array([[1.0, -2], [-3, 4]]), E2=I2,
               E3=np.diag([2.0, 1.0]), E4=I2)
    assert np.array_equal(build_K(sc).data, [[-1, 0], [0, 3]])


def test_v1_v2_definitions():
    r = np.random.default_rng(1)
    K = r.normal(size=(3, 3))
    assert np.array_equal(build_K(coeff("v1_dense", K_raw=K)).data, K)
    E1, E2 = r.normal(size=(3, 2)), r.normal(size=(3, 2))
    assert np.allclose(build_K(coeff("v2_factored", E1=E1, E2=E2)).data, E1 @ E2.T)


def test_masked_all_zero_mask_annihilates():
    r = np.random.default_rng(2)
    E = {f"E{i}": r.normal(size=(4, 3)) for i in (1, 2, 3)}
    sc = coeff("masked_signed", EM1=-10 * np.ones((4, 3)), EM2=np.ones((4, 3)), **E)
    assert np.array_equal(build_K(sc).data, np.zeros((4, 4)))


def test_positive_variants_are_nonnegative():
    for v in ("positive1", "positive2", "adaptive"):
        K = build_K(SignedCoeff.init(v, 6, 4, seed=3)).data
        assert K.min() >= 0


def test_unknown_variant():
    with pytest.raises(ConfigError):
        SignedCoeff.init("v9", 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**63))
def test_signed_parts_and_mask_zeros(seed):
    v3 = SignedCoeff.init("v3_signed_pair", 8, 4, seed=seed)
    pos, neg = v3.parts()
    assert pos.min() >= 0 and neg.max() <= 0
    assert np.allclose(build_K(v3).data, pos + neg, atol=1e-15)
    m = SignedCoeff.init("masked_signed", 8, 4, seed=seed, alpha=3.0)
    mask = m.mask().data
    K = build_K(m).data
    assert np.all(K[mask == 0] == 0)
    p, q = m.parts()
    assert p.min() >= 0 and q.max() <= 0


def test_mask_zeros_survive_gradient_updates():
    from sgode.optim import Adam
    m = SignedCoeff.init("masked_signed", 6, 3, seed=4, alpha=2.0)
    opt = Adam(m.named_parameters(), lr=0.05)
    target = T.Tensor(np.random.default_rng(0).normal(size=(6, 6)))
    for _ in range(10):
        opt.zero_grad()
        K = build_K(m)
        T.backward(T.sum_squares(K - target))
        opt.step()
        with T.no_grad():
            mask, Kd = m.mask().data, build_K(m).data
        assert np.all(Kd[mask == 0] == 0)


def trend(lambdas, n=3, h=3, **over):
    spec = TrendSpec.init(n, h, lambdas, g2_kind="two_layer_fc" if lambdas[1] else "none", seed=0)
    for k, v in over.items():
        spec.params[k] = T.parameter(v)
    return spec


def test_trend_examples():
    B0 = np.arange(9.0).reshape(3, 3)
    H = T.Tensor(np.eye(3))
    assert np.array_equal(trend_B(trend((0, 0, 1), B0=B0), H, H, H).data, B0)
    assert np.array_equal(trend_B(trend((0, 0, 0)), H, H, H).data, np.zeros((3, 3)))
    assert np.array_equal(trend_B(trend((1, 0, 0), b=np.ones((3, 1))), H, H, H).data, np.eye(3))


def test_trend_fc_branch():
    spec = trend((0, 1, 0))
    H0 = np.random.default_rng(0).normal(size=(3, 3))
    p = {k: v.data for k, v in spec.params.items()}
    expected = np.maximum(H0 @ p["fc1.W"] + p["fc1.b"], 0) @ p["fc2.W"] + p["fc2.b"]
    got = trend_B(spec, T.Tensor(np.zeros((3, 3))), T.Tensor(H0), T.Tensor(np.eye(3))).data
    assert np.allclose(got, expected)


def test_trend_config_errors():
    with pytest.raises(ConfigError):
        TrendSpec(2, 0, 0)
    with pytest.raises(ConfigError):
        TrendSpec.init(3, 3, (0, 1, 0), g2_kind="none")
    with pytest.raises(ContractError):
        s = TrendSpec.init(3, 3, (1, 0, 0), g1_kind="weightpool")
        trend_B(s, T.Tensor(np.ones((3, 3))), None, T.Tensor(np.eye(3)))


def test_sgode_rhs_examples():
    z = T.Tensor(np.zeros((2, 1)))
    H = T.Tensor([[1.0], [0.0]])
    I1 = T.Tensor([[1.0]])
    assert np.array_equal(sgode_rhs(T.Tensor(np.zeros((2, 2))), H, I1, T.Tensor([[0.0]]), z).data,
                          np.zeros((2, 1)))
    neg = sgode_rhs(T.Tensor(np.eye(2)), H, T.Tensor([[-1.0]]), T.Tensor([[-1.0]]), z)
    assert np.array_equal(neg.data, np.zeros((2, 1)))
    swap = T.Tensor([[0.0, 1], [1, 0]])
    assert np.array_equal(sgode_rhs(swap, H, I1, T.Tensor([[0.0]]), z).data, [[0], [1]])


def test_ndcn_rhs_examples():
    A = normalize_ndcn(Graph(2, np.array([[0.0, 1], [1, 0]])))
    H = T.Tensor([[1.0], [0.0]])
    I1, zb = T.Tensor([[1.0]]), T.Tensor([[0.0]])
    assert np.array_equal(ndcn_rhs(A, H, I1, zb).data, [[1], [0]])
    assert np.array_equal(ndcn_rhs(A, T.Tensor(np.zeros((2, 1))), I1, zb).data, np.zeros((2, 1)))
    empty = normalize_ndcn(Graph(3, np.zeros((3, 3))))
    b = T.Tensor([[0.5, -1.0]])
    out = ndcn_rhs(empty, T.Tensor(np.ones((3, 2))), T.Tensor(np.eye(2)), b).data
    assert np.array_equal(out, np.tile([[0.5, 0.0]], (3, 1)))


def test_adaptive_adjacency_examples():
    E = T.Tensor(np.random.default_rng(0).normal(size=(5, 3)))
    phi = adaptive_adjacency(E, identity=False).data
    assert np.allclose(phi.sum(axis=1), 1) and phi.min() >= 0
    full = adaptive_adjacency(E).data
    assert np.allclose(full - np.eye(5), phi)
    zero = adaptive_adjacency(T.Tensor(np.zeros((4, 2))), identity=False).data
    assert np.allclose(zero, 0.25)


def test_dyn_forward_zero_field_keeps_decoded_x0():
    m = DynModel("sgodev2", 4, hidden=5, seed=0)
    m.layers["ode.W"].data[:] = 0.0
    x0 = np.random.default_rng(0).uniform(0, 1, size=(4, 1))
    with T.no_grad():
        recon = m.decode(m.encode(x0)).data
    out = m.predict(x0, [0.0, 0.5, 2.0])
    for k in range(3):
        assert np.allclose(out[k], recon, atol=1e-15)
    assert dyn_forward(m, x0, [0.0]).shape == (4, 1)


def test_model_equals_ndcn_when_k_is_normalized_adjacency():
    g = gen_random(6, 0.5, seed=1)
    sg = DynModel("sgodev1", 6, hidden=4, seed=2, lambdas=(0, 0, 0))
    nd = DynModel("ndcn", 6, hidden=4, seed=2, graph=g)
    sg.coeff.params["K_raw"].data[:] = normalize_ndcn(g)
    x0 = np.random.default_rng(0).uniform(0, 5, size=(6, 1))
    assert np.array_equal(sg.predict(x0, [0, 0.3, 1.0]), nd.predict(x0, [0, 0.3, 1.0]))


@pytest.mark.parametrize("kind", [k for k in MODEL_KINDS])
def test_fused_and_generic_forward_agree(kind):
    g = gen_random(5, 0.5, seed=0)
    lam = (1, 1, 1) if kind in ("sgodev2", "sgodev3") else None
    m = DynModel(kind, 5, hidden=4, seed=1, lambdas=lam, graph=g)
    for p in m.named_parameters().values():
        p.data += 0.05 * np.random.default_rng(3).normal(size=p.shape)
    x0 = np.random.default_rng(0).uniform(0, 2, size=(5, 1))

    def run(fused):
        out = m.forward(x0, [0, 0.4, 1.0], fused=fused)
        T.backward(T.sum_squares(out))
        g = {k: p.grad.copy() for k, p in m.named_parameters().items()}
        for p in m.named_parameters().values():
            p.zero_grad()
        return out.data, g

    o1, g1 = run(True)
    o2, g2 = run(False)
    assert np.allclose(o1, o2, rtol=1e-12, atol=1e-13)
    for k in g1:
        assert np.allclose(g1[k], g2[k], rtol=1e-9, atol=1e-12), k


@pytest.mark.parametrize("kind,g1", [("sgodev3", "linear_scale_b"), ("sgodev3", "weightpool"),
                                     ("sgode-masked", "linear_scale_b")])
def test_training_loss_gradients_match_finite_differences(kind, g1):
    m = DynModel(kind, 3, hidden=3, emb_dim=2, seed=5, lambdas=(1, 1, 1), g1_kind=g1, alpha=1.0)
    r = np.random.default_rng(1)
    for name, p in m.named_parameters().items():
        p.data[:] = r.normal(scale=0.5, size=p.shape)
    x0 = r.uniform(0, 1, size=(3, 1))
    truth = r.uniform(0, 1, size=(9, 1))
    times = [0.0, 0.5, 1.0]

    def loss():
        return T.sum_squares(m.forward(x0, times) - T.Tensor(truth))

    T.backward(loss())
    names = [k for k in m.named_parameters() if k.split(".")[-1] in
             ("E1", "E2", "E3", "E4", "b", "B0", "W_pool")]
    assert names
    for name in names:
        p = m.named_parameters()[name]
        analytic = p.grad.copy()

        def f(v, p=p):
            old = p.data.copy()
            p.data[:] = v
            with T.no_grad():
                val = loss().item()
            p.data[:] = old
            return val

        assert rel_err(analytic, central_diff(f, p.data.copy(), 1e-6)) < 1e-3, name


def test_hyperparameter_round_trip():
    m = DynModel("sgodev3", 7, hidden=6, emb_dim=3, seed=4, x_scale=2.5, t_scale=3.0)
    back = DynModel.from_hyperparameters(m.hyperparameters())
    assert back.hyperparameters() == m.hyperparameters()
    for k, p in m.named_parameters().items():
        assert np.array_equal(back.named_parameters()[k].data, p.data)


def test_model_config_errors():
    with pytest.raises(ConfigError):
        DynModel("gcn", 3)
    with pytest.raises(ConfigError):
        DynModel("ndcn", 3)
    with pytest.raises(ConfigError):
        DynModel("nograph", 3, lambdas=(1, 0, 0), g1_kind="weightpool")
