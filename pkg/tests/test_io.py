import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sgode import io
from sgode.core import DynModel
from sgode.errors import ConfigError, ContractError, ParseError
from sgode.rnn import Seq2SeqForecaster

from oracles import top_k_brute

SVG = "{http://www.w3.org/2000/svg}"


def test_config_parsing_types_and_comments():
    cfg = io.parse_config("# header\nseed = 7\nlr = 0.01  # step\nname = heat\nflag = true\n"
                          "quoted = '12'\n\n")
    assert cfg == {"seed": 7, "lr": 0.01, "name": "heat", "flag": True, "quoted": "12"}
    assert isinstance(cfg["seed"], int) and isinstance(cfg["lr"], float)


def test_config_rejects_unknown_and_duplicate_keys():
    with pytest.raises(ConfigError, match="unknown key 'bogus'"):
        io.parse_config("seed = 1\nbogus = 2\n", allowed={"seed"})
    with pytest.raises(ParseError) as exc:
        io.parse_config("seed = 1\nseed = 2\n")
    assert exc.value.line == 2
    with pytest.raises(ParseError) as exc:
        io.parse_config("seed 1\n")
    assert exc.value.line == 1


def test_config_format_round_trip():
    cfg = {"a": 1, "b": 0.1, "c": "grid", "d": False, "e": 1e-7}
    assert io.parse_config(io.format_config(cfg)) == cfg


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    m = DynModel("sgode-masked", 6, hidden=5, emb_dim=3, seed=2, x_scale=1 / 3, t_scale=5.0)
    r = np.random.default_rng(0)
    for p in m.named_parameters().values():
        p.data[:] = r.normal(size=p.shape) * 10.0 ** r.integers(-300, 300, size=p.shape)
    io.save_checkpoint(m, tmp_path / "m.ckpt")
    ck = io.load_checkpoint(tmp_path / "m.ckpt")
    assert ck.kind == "sgode-masked" and ck.hyperparameters == m.hyperparameters()
    back = io.restore_parameters(DynModel.from_hyperparameters(ck.hyperparameters), ck)
    for k, p in m.named_parameters().items():
        assert back.named_parameters()[k].data.tobytes() == p.data.tobytes(), k
    assert io.format_checkpoint(m.kind, m.hyperparameters(),
                                {k: p.data for k, p in back.named_parameters().items()}) == \
        (tmp_path / "m.ckpt").read_text()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(allow_nan=False, allow_infinity=True, width=64)))
def test_checkpoint_values_survive_hex_encoding(a):
    ck = io.parse_checkpoint(io.format_checkpoint("x", {"f": 0.1, "i": 3, "s": "v", "b": True},
                                                  {"t": a}))
    assert ck.tensors["t"].tobytes() == a.tobytes()
    assert ck.hyperparameters == {"f": 0.1, "i": 3, "s": "v", "b": True}


def test_checkpoint_parse_errors():
    with pytest.raises(ParseError):
        io.parse_checkpoint("not a checkpoint\n")
    with pytest.raises(ParseError) as exc:
        io.parse_checkpoint(f"{io.CHECKPOINT_MAGIC}\nkind x\ntensor t 2 2\n0x1p+0 0x1p+0\n0x1p+0\n")
    assert exc.value.line == 3


def test_restore_rejects_mismatched_model():
    a = DynModel("sgodev2", 4, hidden=3, seed=0)
    ck = io.parse_checkpoint(io.format_checkpoint(
        a.kind, a.hyperparameters(), {k: p.data for k, p in a.named_parameters().items()}))
    with pytest.raises(ContractError):
        io.restore_parameters(DynModel("sgodev2", 5, hidden=3, seed=0), ck)


def test_traffic_csv_wide_examples():
    vals, mask = io.parse_traffic_csv("1,2\n3,4\n5,6")
    assert vals.shape == (3, 2) and np.array_equal(vals, [[1, 2], [3, 4], [5, 6]])
    assert mask.all()
    v2, _ = io.parse_traffic_csv("a,b\n1,2\n3,4\n5,6\n", io.TrafficLayout(header=True))
    assert np.array_equal(v2, vals)
    v3, _ = io.parse_traffic_csv("time,a,b\n2012-03-01 00:00,1,2\n2012-03-01 00:05,3,4\n",
                                 io.TrafficLayout(header=True, index_col=True))
    assert np.array_equal(v3, [[1, 2], [3, 4]])


def test_traffic_csv_nan_goes_to_mask():
    vals, mask = io.parse_traffic_csv("1,NaN\n,4\n")
    assert np.array_equal(mask, [[1, 0], [0, 1]])
    assert np.array_equal(vals, [[1, 0], [0, 4]])


def test_traffic_csv_errors_carry_line_numbers():
    with pytest.raises(ParseError) as exc:
        io.parse_traffic_csv("1,2\n3,4,5\n")
    assert exc.value.line == 2 and "line 2" in str(exc.value)
    with pytest.raises(ParseError) as exc:
        io.parse_traffic_csv("h1,h2\n1,2\n3,x\n", io.TrafficLayout(header=True))
    assert exc.value.line == 3
    with pytest.raises(ConfigError):
        io.TrafficLayout("hdf")


def test_traffic_csv_long_layout(tmp_path):
    text = "t,sensor,v\n0,s1,1\n0,s2,2\n1,s1,3\n1,s2,4\n2,s1,5\n"
    path = tmp_path / "long.csv"
    path.write_text(text)
    vals, mask = io.load_traffic_csv(path, io.TrafficLayout("long", header=True))
    assert np.array_equal(vals, [[1, 2], [3, 4], [5, 0]])
    assert np.array_equal(mask, [[1, 1], [1, 1], [1, 0]])


def test_results_csv_columns(tmp_path):
    row = {"experiment": "e", "dynamics": "heat", "graph": "grid", "model": "sgodev2",
           "split": "interp", "horizon": "", "mae": 0.1, "rmse": 0.2, "mape": 3.5, "seed": 0}
    io.write_results([row], tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "experiment,dynamics,graph,model,split,horizon,mae,rmse,mape,seed"
    back = io.read_results(tmp_path / "r.csv")
    assert float(back[0]["mape"]) == 3.5 and back[0]["model"] == "sgodev2"
    with pytest.raises(ContractError):
        io.format_results([{"mae": 1.0}])


def test_top_k_examples():
    D = np.diag(np.arange(1.0, 7.0))
    assert np.array_equal(io.top_k_per_row(D, 5), D)
    K = np.array([[0, 2, -3], [1, 0, 0], [-1, 1, 0]], dtype=float)
    expected = np.zeros((3, 3))
    expected[0, 2], expected[1, 0], expected[2, 0] = -3, 1, -1
    assert np.array_equal(io.top_k_per_row(K, 1), expected)
    with pytest.raises(ConfigError):
        io.top_k_per_row(K, 0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.sampled_from([-2.0, -1.0, 0.0, 1.0, 2.0, 0.5])),
       st.integers(1, 6))
def test_top_k_matches_brute_force(K, k):
    assert np.array_equal(io.top_k_per_row(K, k), top_k_brute(K, k))


def test_important_nodes():
    assert [a.size for a in io.important_nodes(np.zeros((5, 5)))] == [0, 0]
    K = np.zeros((4, 4))
    K[:, 1] = 1.0
    K[:3, 2] = -1.0
    pos, neg = io.important_nodes(K)
    assert list(pos) == [1] and list(neg) == [2]
    assert list(io.important_nodes(K, threshold=3)[1]) == []
    text = io.format_important_nodes(pos, neg)
    assert text == "node,sign,color\n1,+,red\n2,-,blue\n"


def _ckpt(model):
    return io.parse_checkpoint(io.format_checkpoint(
        model.kind, model.hyperparameters(),
        {k: p.data for k, p in model.named_parameters().items()}))


def test_export_k_dynamics_and_forecaster():
    m = DynModel("sgodev3", 5, hidden=3, emb_dim=2, seed=0)
    K, K_top, pos, neg = io.export_k(_ckpt(m), top_k=2, which="K")
    assert np.allclose(K, m.coeff.build().data)
    assert ((K_top != 0).sum(axis=1) <= 2).all()
    f = Seq2SeqForecaster(4, hidden=3, emb_dim=2, T_in=3, tau=2, seed=0)
    out = io.export_k(_ckpt(f), top_k=1)
    assert sorted(out) == ["dec.K", "enc.K"]


def test_export_k_without_coefficients_is_contract_error():
    with pytest.raises(ContractError):
        io.export_k(_ckpt(DynModel("nograph", 4, hidden=3, seed=0)))


def test_heatmap_svg_is_well_formed_and_deterministic():
    K = np.array([[0, 2, -3], [1, 0, 0], [-1, 1, 0]], dtype=float)
    a = io.heatmap_svg(K, title="K <top>")
    assert a == io.heatmap_svg(K, title="K <top>")
    root = ET.fromstring(a)
    rects = root.findall(f"{SVG}rect")
    assert len(rects) == 5
    fill = {(r.get("x"), r.get("y")): r.get("fill") for r in rects}
    # |-3| is the scale: full blue there, 2/3 red for the entry 2
    assert fill[("12", "16")] == "#0000ff"
    assert fill[("6", "16")] == "#ff5555"


def test_plot_one_node_two_points():
    svg = io.plot_trajectory([0.0, 1.0], [[1.0], [2.0]], [[1.5], [1.8]], nodes=[0], split_time=0.5)
    root = ET.fromstring(svg)
    lines = root.findall(f".//{SVG}polyline")
    assert len(lines) == 2
    assert lines[0].get("stroke-dasharray") is None and lines[1].get("stroke-dasharray")
    assert root.findall(f"{SVG}line[@class='split']")
    assert svg == io.plot_trajectory([0.0, 1.0], [[1.0], [2.0]], [[1.5], [1.8]], nodes=[0],
                                     split_time=0.5)


def test_plot_errors():
    with pytest.raises(ContractError):
        io.plot_trajectory([0, 1], [[1.0], [2.0]], nodes=[])
    with pytest.raises(ContractError):
        io.plot_trajectory([0, 1, 2], [[1.0], [2.0]])
    with pytest.raises(ContractError):
        io.plot_trajectory([0, 1], [[1.0], [2.0]], nodes=[3])


def test_atomic_write_leaves_no_temp_files(tmp_path):
    io.atomic_write_text(tmp_path / "sub" / "x.txt", "hello\n")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["x.txt"]
