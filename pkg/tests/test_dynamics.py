import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sgode import dynamics as D
from sgode import graphs as G
from sgode import kernels
from sgode._kernels_py import gene as py_gene, heat as py_heat, mutualistic as py_mut
from sgode.errors import ConfigError, DomainError, NumericError, ParameterError, ParseError

from oracles import gene_loop, heat_dense, mutualistic_loop

PAIR = G.Graph(2, np.array([[0.0, 1], [1, 0]]))
LONE = G.Graph(1, np.zeros((1, 1)))


def test_heat_examples():
    assert np.array_equal(D.heat_rhs(np.full((2, 1), 3.0), PAIR), np.zeros((2, 1)))
    assert np.array_equal(D.heat_rhs(np.array([[1.0], [0.0]]), PAIR), [[-1.0], [1.0]])


def test_heat_matches_dense_laplacian_per_column():
    g = G.gen_random(25, 0.2, seed=3)
    x = np.random.default_rng(0).uniform(0, 25, size=(25, 3))
    got = D.heat_rhs(x, g, k_heat=0.7)
    assert np.allclose(got, heat_dense(x, g.adjacency, 0.7), atol=1e-12)
    assert np.allclose(got.sum(axis=0), 0, atol=1e-10)


def test_mutualistic_examples():
    p = D.DynamicsParams("mutualistic")
    assert np.allclose(D.mutualistic_rhs(np.zeros((2, 1)), PAIR, p), 0.1)
    p0 = D.DynamicsParams("mutualistic", b=0.0)
    assert D.mutualistic_rhs(np.array([[5.0]]), LONE, p0)[0, 0] == 0.0
    assert D.mutualistic_rhs(np.array([[1.0]]), LONE, p0)[0, 0] == 0.0


def test_mutualistic_matches_loop():
    g = G.gen_powerlaw(20, 2, seed=1)
    x = np.random.default_rng(1).uniform(0, 10, size=20)
    got = D.mutualistic_rhs(x[:, None], g, D.DynamicsParams("mutualistic"))[:, 0]
    assert np.allclose(got, mutualistic_loop(x, g.adjacency, 0.1, 5.0, 1.0, 5.0, 0.9, 0.1))


def test_mutualistic_vanishing_denominator_names_edge():
    p = D.DynamicsParams("mutualistic", d=0.0)
    with pytest.raises(NumericError, match=r"\(0, 1\)"):
        D.mutualistic_rhs(np.zeros((2, 1)), PAIR, p)


def test_gene_examples():
    p = D.DynamicsParams("gene")
    assert np.array_equal(D.gene_rhs(np.zeros((1, 1)), LONE, p), [[0.0]])
    p1 = D.DynamicsParams("gene", f_exp=1)
    assert D.gene_rhs(np.array([[2.0]]), LONE, p1)[0, 0] == -2.0
    # edge j -> i with x_j = 1 and x_i = 0 gives only the Hill term A_ij * 0.5
    g = G.Graph(2, np.array([[0.0, 3.0], [0, 0]]), directed=True)
    assert D.gene_rhs(np.array([[0.0], [1.0]]), g, p)[0, 0] == 1.5


def test_gene_matches_loop_and_rejects_negative():
    g = G.gen_smallworld(20, 4, 0.2, seed=2)
    x = np.random.default_rng(2).uniform(0, 5, size=20)
    got = D.gene_rhs(x[:, None], g, D.DynamicsParams("gene"))[:, 0]
    assert np.allclose(got, gene_loop(x, g.adjacency, 1.0, 2, 2.0))
    with pytest.raises(DomainError):
        D.gene_rhs(-np.ones((20, 1)), g, D.DynamicsParams("gene"))


def test_params_validation():
    with pytest.raises(ConfigError):
        D.DynamicsParams("wave")
    with pytest.raises(ConfigError):
        D.DynamicsParams("gene", f_exp=3)
    with pytest.raises(ConfigError):
        D.DynamicsParams("mutualistic", k_cap=0.0)
    with pytest.raises(ConfigError):
        D.DynamicsParams("heat", k_heat=np.inf)


state = arrays(np.float64, (12, 2), elements=st.floats(0, 20))


@settings(max_examples=25, deadline=None)
@given(state, st.integers(0, 10**6))
def test_compiled_and_python_kernels_agree(x, seed):
    g = G.gen_random(12, 0.3, seed=seed)
    r, c, w = g.edge_list()
    x = np.ascontiguousarray(x)
    n1 = np.full(12, 0.1), np.full(12, 5.0), np.ones(12), np.full(12, 5.0), np.full(12, 0.9), np.full(12, 0.1)
    assert np.allclose(kernels.heat(x, r, c, w, 1.3), py_heat(x, r, c, w, 1.3), rtol=1e-13, atol=1e-12)
    a, ia = kernels.mutualistic(x, r, c, w, *n1)
    b, ib = py_mut(x, r, c, w, *n1)
    assert ia == ib == -1
    assert np.allclose(a, b, rtol=1e-13, atol=1e-12)
    assert np.allclose(kernels.gene(x, r, c, w, np.ones(12), 2.0, 2.0),
                       py_gene(x, r, c, w, np.ones(12), 2.0, 2.0), rtol=1e-13, atol=1e-12)


def test_backend_reports_choice():
    assert kernels.BACKEND in ("cython", "python")


def test_split_counts_and_time_ordering():
    g = G.gen_grid(4)
    traj, sp = D.generate_trajectory(g, D.DynamicsParams("heat"), t_end=5.0, seed=3)
    assert len(traj.times) == 121
    assert (len(sp.train), len(sp.interp), len(sp.extrap)) == (80, 20, 20)
    t = traj.times
    assert t[sp.extrap].min() > t[sp.train].max()
    assert t[sp.train].min() < t[sp.interp].min() and t[sp.interp].max() < t[sp.train].max()
    assert t[sp.interp].max() < t[sp.extrap].min()
    assert sorted(np.concatenate([sp.train, sp.interp, sp.extrap])) == list(range(1, 121))


def test_regular_sampling():
    traj, sp = D.generate_trajectory(G.gen_grid(3), D.DynamicsParams("heat"), t_end=1.0,
                                     sampler=D.SplitSpec.regular(), seed=0)
    assert len(traj.times) == 101
    assert np.allclose(np.diff(traj.times[1:]), 0.01)
    assert (len(sp.train), len(sp.interp), len(sp.extrap)) == (80, 0, 20)


def test_evolution_time_table():
    assert D.EVOLUTION_TIME["heat"]["grid"] == 5.0
    assert D.EVOLUTION_TIME["mutualistic"]["random"] == 2.0


def test_generation_is_deterministic():
    g = G.gen_powerlaw(30, 2, seed=1)
    a, sa = D.generate_trajectory(g, D.DynamicsParams("gene"), t_end=1.5, seed=9)
    b, sb = D.generate_trajectory(g, D.DynamicsParams("gene"), t_end=1.5, seed=9)
    assert a.states.tobytes() == b.states.tobytes()
    assert a.times.tobytes() == b.times.tobytes()
    assert np.array_equal(sa.train, sb.train)


def test_initial_state_range():
    x0 = D.initial_state(500, seed=1)
    assert x0.shape == (500, 1) and x0.min() >= 0 and x0.max() <= 25


def test_trajectory_rejects_bad_inputs():
    with pytest.raises(ParameterError):
        D.Trajectory(np.array([0.0, 0.0]), np.zeros((2, 3)))
    with pytest.raises(ParameterError):
        D.Trajectory(np.array([0.0, 1.0]), np.zeros((3, 3)))
    with pytest.raises(ParameterError):
        D.generate_trajectory(PAIR, D.DynamicsParams("heat"), t_end=0.0)


def test_trajectory_file_round_trip(tmp_path):
    traj, _ = D.generate_trajectory(G.gen_grid(3), D.DynamicsParams("heat"), t_end=1.0, seed=0)
    text = D.format_trajectory(traj)
    assert text.startswith("SGODE-TRAJ v1 n=9 d=1 T=121\n")
    back = D.parse_trajectory(text)
    assert back.states.tobytes() == traj.states.tobytes()
    D.save_trajectory(traj, tmp_path / "t.txt")
    assert D.load_trajectory(tmp_path / "t.txt").times.tobytes() == traj.times.tobytes()


def test_trajectory_parse_errors():
    with pytest.raises(ParseError):
        D.parse_trajectory("SGODE-TRAJ v2 n=1 d=1 T=1\n0 1\n")
    with pytest.raises(ParseError) as exc:
        D.parse_trajectory("SGODE-TRAJ v1 n=2 d=1 T=1\n0 1\n")
    assert exc.value.line == 2
    with pytest.raises(ParseError):
        D.parse_trajectory("SGODE-TRAJ v1 n=1 d=1 T=2\n0 1\n")


def test_splits_round_trip(tmp_path):
    _, sp = D.generate_trajectory(PAIR, D.DynamicsParams("heat"), t_end=1.0, seed=4)
    D.save_splits(sp, tmp_path / "s.txt")
    back = D.load_splits(tmp_path / "s.txt")
    for k in ("train", "interp", "extrap"):
        assert np.array_equal(back.as_dict()[k], sp.as_dict()[k])
