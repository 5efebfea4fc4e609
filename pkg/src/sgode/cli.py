"""Command-line entry point: ``sgode <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import core, dynamics as D, graphs, io, rnn, train
from .errors import ConfigError, ContractError, SGODEError

log = logging.getLogger("sgode")

# schema per subcommand: key -> (type, default); None default means required
_GRAPH_KEYS = {
    "family": (str, "grid"),
    "n": (int, 400),
    "side": (int, 20),
    "p": (float, graphs.DEFAULTS["random"]["p"]),
    "m_attach": (int, graphs.DEFAULTS["powerlaw"]["m_attach"]),
    "k_ring": (int, graphs.DEFAULTS["smallworld"]["k_ring"]),
    "p_rewire": (float, graphs.DEFAULTS["smallworld"]["p_rewire"]),
    "blocks": (int, graphs.DEFAULTS["community"]["blocks"]),
    "p_in": (float, graphs.DEFAULTS["community"]["p_in"]),
    "p_out": (float, graphs.DEFAULTS["community"]["p_out"]),
}
_DYN_KEYS = {
    "dynamics": (str, "heat"),
    "t_end": (float, 0.0),  # 0 selects the horizon for (dynamics, family)
    "sampling": (str, "irregular"),
    "x0_low": (float, 0.0),
    "x0_high": (float, 25.0),
    "k_heat": (float, 1.0),
    "mut_b": (float, 0.1),
    "mut_k": (float, 5.0),
    "mut_c": (float, 1.0),
    "mut_d": (float, 5.0),
    "mut_e": (float, 0.9),
    "mut_h": (float, 0.1),
    "gene_b": (float, 1.0),
    "gene_f": (int, 2),
    "gene_h": (float, 2.0),
    "rtol": (float, 1e-7),
    "atol": (float, 1e-9),
}
SCHEMAS = {
    "train-dynamics": {
        "experiment": (str, "dynamics"),
        "seed": (int, 0),
        "out": (str, "runs/dynamics"),
        **_GRAPH_KEYS,
        **_DYN_KEYS,
        "graph_file": (str, ""),
        "trajectory_file": (str, ""),
        "model": (str, "sgodev2"),
        "hidden": (int, 20),
        "emb_dim": (int, 10),
        "lambda1": (int, -1),  # -1 selects the per-model default
        "lambda2": (int, -1),
        "lambda3": (int, -1),
        "g1_kind": (str, "linear_scale_b"),
        "alpha": (float, 1.0),
        "method": (str, "rk4"),
        "max_step": (float, 0.125),
        "lr": (float, 0.01),
        "weight_decay": (float, 1e-3),
        "epochs": (int, 2000),
        "missing_rate": (float, 0.0),
        "x_scale": (float, 0.0),  # 0 derives it from the training data
    },
    "train-forecast": {
        "experiment": (str, "forecast"),
        "seed": (int, 0),
        "out": (str, "runs/forecast"),
        "data": (str, ""),
        "layout": (str, "wide"),
        "header": (bool, False),
        "index_col": (bool, False),
        "synthetic": (str, "oscillators"),
        "synthetic_n": (int, 20),
        "synthetic_steps": (int, 2000),
        "T_in": (int, 12),
        "tau": (int, 12),
        "train_frac": (float, 0.7),
        "val_frac": (float, 0.1),
        "hidden": (int, 64),
        "m": (int, 2),
        "emb_dim": (int, 10),
        "layers": (int, 1),
        "substeps": (int, 4),
        "ablation": (str, "none"),
        "cl_decay_steps": (int, 2000),
        "scheduled_sampling": (bool, True),
        "lr": (float, 0.005),
        "weight_decay": (float, 0.0),
        "epochs": (int, 100),
        "batch_size": (int, 64),
        "patience": (int, 15),
        "max_batches": (int, 0),
        "missing_rate": (float, 0.0),
    },
}


def _coerce(key, typ, value):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ is str and not isinstance(value, str):
        return str(value)
    if not isinstance(value, typ) or (typ is int and isinstance(value, bool)):
        raise ConfigError(f"config key {key!r} must be {typ.__name__}, got {value!r}")
    return value


def resolve_config(command, path=None, overrides=None):
    """Defaults, then the config file, then command-line overrides."""
    schema = SCHEMAS[command]
    cfg = {k: d for k, (_, d) in schema.items()}
    if path:
        for k, v in io.load_config(path, allowed=schema).items():
            cfg[k] = _coerce(k, schema[k][0], v)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = _coerce(k, schema[k][0], v)
    return cfg


def _graph_from(cfg, seed):
    fam = cfg["family"]
    params = {k: cfg[k] for k in ("p", "m_attach", "k_ring", "p_rewire", "blocks", "p_in", "p_out")}
    return graphs.generate(fam, seed=seed, n=cfg["n"], side=cfg["side"], **params)


def _dyn_params(cfg):
    return D.DynamicsParams(cfg["dynamics"], k_heat=cfg["k_heat"], b=cfg["mut_b"],
                            k_cap=cfg["mut_k"], c=cfg["mut_c"], d=cfg["mut_d"], e=cfg["mut_e"],
                            h_sat=cfg["mut_h"], b_gene=cfg["gene_b"], f_exp=cfg["gene_f"],
                            h_hill=cfg["gene_h"])


def _t_end(cfg):
    if cfg["t_end"] > 0:
        return cfg["t_end"]
    try:
        return D.EVOLUTION_TIME[cfg["dynamics"]][cfg["family"]]
    except KeyError:
        raise ConfigError("set t_end: no default horizon for "
                          f"{cfg['dynamics']!r} on {cfg['family']!r}") from None


def _sampler(mode):
    return D.SplitSpec() if mode == "irregular" else D.SplitSpec.regular()


def make_dataset(cfg):
    """Graph, trajectory and splits for a dynamics config (all from ``seed``)."""
    seed = cfg["seed"]
    g = graphs.load_graph(cfg["graph_file"]) if cfg["graph_file"] else _graph_from(cfg, seed)
    sampler = _sampler(cfg["sampling"])
    if cfg["trajectory_file"]:
        traj = D.load_trajectory(cfg["trajectory_file"])
        splits = D.make_splits(sampler, seed)
        if traj.n != g.n:
            raise ConfigError(f"trajectory has {traj.n} nodes but the graph has {g.n}")
        if len(traj.times) != sampler.total + 1:
            raise ConfigError(f"trajectory has {len(traj.times)} snapshots, "
                              f"expected {sampler.total + 1}")
        return g, traj, splits
    x0 = D.initial_state(g.n, seed, cfg["x0_low"], cfg["x0_high"])
    traj, splits = D.generate_trajectory(g, _dyn_params(cfg), x0, _t_end(cfg), sampler, seed,
                                         rtol=cfg["rtol"], atol=cfg["atol"])
    return g, traj, splits


def build_dyn_model(cfg, graph, traj, splits, mask=None):
    lam = tuple(cfg[f"lambda{i}"] for i in (1, 2, 3))
    lambdas = None if any(v < 0 for v in lam) else lam
    x_scale = cfg["x_scale"] or train.data_scale(traj, splits, mask)
    return core.DynModel(cfg["model"], graph.n, d_in=traj.d, hidden=cfg["hidden"],
                         emb_dim=cfg["emb_dim"], lambdas=lambdas, g1_kind=cfg["g1_kind"],
                         graph=graph, seed=cfg["seed"], alpha=cfg["alpha"], x_scale=x_scale,
                         t_scale=float(traj.times[-1]), max_step=cfg["max_step"],
                         method=cfg["method"])


def dynamics_rows(cfg, reports):
    return [{"experiment": cfg["experiment"], "dynamics": cfg["dynamics"],
             "graph": cfg["family"], "model": cfg["model"], "split": name, "horizon": "",
             "mae": r.mae, "rmse": r.rmse, "mape": r.mape, "seed": cfg["seed"]}
            for name, r in reports.items()]


def run_train_dynamics(cfg):
    if cfg["model"] not in core.MODEL_KINDS:
        raise ConfigError(f"train-dynamics model must be one of {core.MODEL_KINDS}")
    out = cfg["out"]
    g, traj, splits = make_dataset(cfg)
    mask = None
    if cfg["missing_rate"] > 0:
        traj, mask = train.corrupt_trajectory(traj, cfg["missing_rate"], cfg["seed"])
    model = build_dyn_model(cfg, g, traj, splits, mask)
    tcfg = train.TrainConfig(lr=cfg["lr"], weight_decay=cfg["weight_decay"],
                             epochs=cfg["epochs"], seed=cfg["seed"], max_step=cfg["max_step"])
    _, reports, history = train.train_dynamics(model, traj, splits, tcfg, mask)
    graphs.save_graph(g, os.path.join(out, "graph.txt"))
    D.save_trajectory(traj, os.path.join(out, "trajectory.txt"))
    D.save_splits(splits, os.path.join(out, "splits.txt"))
    io.save_checkpoint(model, os.path.join(out, "model.ckpt"))
    io.write_results(dynamics_rows(cfg, reports), os.path.join(out, "results.csv"))
    io.atomic_write_text(os.path.join(out, "config.cfg"), io.format_config(cfg), "utf-8")
    for name, r in reports.items():
        log.info("%s: MAE %.4g RMSE %.4g MAPE %.3f%%", name, r.mae, r.rmse, r.mape)
    return reports


def _forecast_series(cfg):
    if cfg["data"]:
        layout = io.TrafficLayout(cfg["layout"], cfg["header"], cfg["index_col"])
        return io.load_traffic_csv(cfg["data"], layout)
    n, steps, seed = cfg["synthetic_n"], cfg["synthetic_steps"], cfg["seed"]
    if cfg["synthetic"] == "oscillators":
        series, _ = rnn.signed_oscillators(n, steps, seed)
    elif cfg["synthetic"] == "sinusoids":
        series = rnn.sinusoids(n, steps, seed)
    else:
        raise ConfigError(f"synthetic must be 'oscillators' or 'sinusoids', got {cfg['synthetic']!r}")
    return series, np.ones(series.shape)


def _fractions(cfg):
    tr, va = cfg["train_frac"], cfg["val_frac"]
    te = 1.0 - tr - va
    if tr <= 0 or va < 0 or te < -1e-12:
        raise ConfigError(f"invalid split fractions train={tr}, val={va}")
    return tr, va, max(te, 0.0)


def build_forecaster(cfg, n, d=1):
    abl = None if cfg["ablation"] == "none" else cfg["ablation"]
    return rnn.Seq2SeqForecaster(n, d, hidden=cfg["hidden"], m=cfg["m"], emb_dim=cfg["emb_dim"],
                                 layers=cfg["layers"], T_in=cfg["T_in"], tau=cfg["tau"],
                                 ablation=abl, seed=cfg["seed"],
                                 cl_decay_steps=cfg["cl_decay_steps"],
                                 scheduled_sampling=cfg["scheduled_sampling"],
                                 substeps=cfg["substeps"])


def forecast_rows(cfg, reports, model_name):
    rows = []
    source = os.path.basename(cfg["data"]) if cfg["data"] else cfg["synthetic"]
    for name, r in reports.items():
        for rep in [r] + r.per_horizon:
            rows.append({"experiment": cfg["experiment"], "dynamics": "", "graph": source,
                         "model": model_name, "split": name,
                         "horizon": "avg" if rep.horizon is None else rep.horizon,
                         "mae": rep.mae, "rmse": rep.rmse, "mape": rep.mape, "seed": cfg["seed"]})
    return rows


def run_train_forecast(cfg):
    series, mask = _forecast_series(cfg)
    if cfg["missing_rate"] > 0:
        series, drop = train.corrupt_dataset(np.where(mask > 0, series, 0.0), cfg["missing_rate"],
                                             cfg["seed"])
        mask = mask * drop
    data = train.prepare_forecast_data(series, cfg["T_in"], cfg["tau"], _fractions(cfg), mask)
    model = build_forecaster(cfg, series.shape[1])
    tcfg = train.TrainConfig(lr=cfg["lr"], weight_decay=cfg["weight_decay"], epochs=cfg["epochs"],
                             seed=cfg["seed"], batch_size=cfg["batch_size"],
                             patience=cfg["patience"])
    _, reports, _ = train.train_forecaster(model, data, tcfg, cfg["max_batches"] or None)
    out = cfg["out"]
    name = "sgode-rnn" + ("" if cfg["ablation"] == "none" else f"/{cfg['ablation']}")
    io.save_checkpoint(model, os.path.join(out, "model.ckpt"))
    io.write_results(forecast_rows(cfg, reports, name), os.path.join(out, "results.csv"))
    io.atomic_write_text(os.path.join(out, "config.cfg"), io.format_config(cfg), "utf-8")
    for split, r in reports.items():
        log.info("%s: MAE %.4g RMSE %.4g MAPE %.3f%%", split, r.mae, r.rmse, r.mape)
    return reports


def load_model(ckpt, graph=None):
    if ckpt.kind == rnn.Seq2SeqForecaster.kind:
        model = rnn.Seq2SeqForecaster.from_hyperparameters(ckpt.hyperparameters)
    else:
        if ckpt.kind == "ndcn" and graph is None:
            raise ConfigError("an ndcn checkpoint needs --graph")
        model = core.DynModel.from_hyperparameters(ckpt.hyperparameters, graph)
    return io.restore_parameters(model, ckpt)


# subcommands ----------------------------------------------------------------

def cmd_gen_graph(a):
    cfg = {k: d for k, (_, d) in _GRAPH_KEYS.items()}
    if a.config:
        cfg.update(io.load_config(a.config, allowed=_GRAPH_KEYS))
    for k in _GRAPH_KEYS:
        v = getattr(a, k, None)
        if v is not None:
            cfg[k] = v
    if a.side is None and a.n is not None and cfg["family"] == "grid":
        cfg["side"] = int(round(np.sqrt(a.n)))
    g = _graph_from(cfg, a.seed)
    graphs.save_graph(g, a.out)
    log.info("wrote %s graph: n=%d, %d edges", cfg["family"], g.n, g.num_edges)


def cmd_gen_dynamics(a):
    g = graphs.load_graph(a.graph)
    cfg = {k: d for k, (_, d) in _DYN_KEYS.items()}
    cfg.update({"family": a.family, "dynamics": a.dynamics, "sampling": a.sampling})
    if a.t_end is not None:
        cfg["t_end"] = a.t_end
    x0 = D.initial_state(g.n, a.seed, cfg["x0_low"], cfg["x0_high"])
    traj, splits = D.generate_trajectory(g, _dyn_params(cfg), x0, _t_end(cfg),
                                         _sampler(a.sampling), a.seed)
    D.save_trajectory(traj, a.out)
    D.save_splits(splits, a.out + ".splits")


def cmd_train_dynamics(a):
    cfg = resolve_config("train-dynamics", a.config,
                         {"seed": a.seed, "out": a.out, "model": a.model,
                          "missing_rate": a.missing_rate, "epochs": a.epochs})
    run_train_dynamics(cfg)


def cmd_train_forecast(a):
    cfg = resolve_config("train-forecast", a.config,
                         {"seed": a.seed, "out": a.out, "ablation": a.ablation,
                          "missing_rate": a.missing_rate, "epochs": a.epochs, "data": a.data})
    if a.model not in (None, "sgode-rnn"):
        raise ConfigError("train-forecast only trains --model sgode-rnn")
    run_train_forecast(cfg)


def cmd_eval(a):
    ckpt = io.load_checkpoint(a.checkpoint)
    graph = graphs.load_graph(a.graph) if a.graph else None
    model = load_model(ckpt, graph)
    rows = []
    if isinstance(model, core.DynModel):
        if not a.trajectory:
            raise ConfigError("eval of a dynamics model needs --trajectory")
        traj = D.load_trajectory(a.trajectory)
        splits = D.load_splits(a.splits or a.trajectory + ".splits")
        reports = train.evaluate_dynamics(model, traj, splits)
        cfg = {"experiment": "eval", "dynamics": "", "family": "", "model": ckpt.kind,
               "seed": int(ckpt.hyperparameters.get("seed", 0))}
        rows = dynamics_rows(cfg, reports)
    else:
        if not a.data:
            raise ConfigError("eval of a forecaster needs --data")
        cfg = resolve_config("train-forecast", a.config, {"data": a.data})
        series, mask = _forecast_series(cfg)
        data = train.prepare_forecast_data(series, model.T_in, model.tau, _fractions(cfg), mask)
        reports = {}
        for name in ("val", "test"):
            part = getattr(data, name)
            if len(part[0]):
                reports[name] = train.evaluate_forecaster(model, part, data.normalizer, name)
        cfg["experiment"] = "eval"
        cfg["seed"] = int(ckpt.hyperparameters.get("seed", 0))
        rows = forecast_rows(cfg, reports, ckpt.kind)
    io.write_results(rows, os.path.join(a.out, "results.csv"))


def cmd_export_k(a):
    ckpt = io.load_checkpoint(a.checkpoint)
    out = io.export_k(ckpt, a.top_k, a.threshold)
    for prefix, (K, K_top, pos, neg) in out.items():
        tag = prefix.replace(".", "_")
        io.atomic_write_text(os.path.join(a.out, f"{tag}.csv"), io.format_matrix_csv(K))
        io.atomic_write_text(os.path.join(a.out, f"{tag}_top{a.top_k}.svg"),
                             io.heatmap_svg(K_top, title=f"{prefix} top-{a.top_k}"))
        io.atomic_write_text(os.path.join(a.out, f"{tag}_important.csv"),
                             io.format_important_nodes(pos, neg))


def cmd_plot(a):
    traj = D.load_trajectory(a.trajectory)
    pred = None
    split_time = None
    if a.checkpoint:
        graph = graphs.load_graph(a.graph) if a.graph else None
        model = load_model(io.load_checkpoint(a.checkpoint), graph)
        if not isinstance(model, core.DynModel):
            raise ContractError("plot draws dynamics trajectories; got a forecaster checkpoint")
        pred = model.predict(traj.states[0], traj.times)
    splits_path = a.splits or a.trajectory + ".splits"
    if os.path.exists(splits_path):
        split_time = float(traj.times[np.max(D.load_splits(splits_path).train)])
    nodes = [int(v) for v in a.nodes.split(",") if v.strip()]
    svg = io.plot_trajectory(traj.times, traj.states, pred, nodes, split_time)
    io.atomic_write_text(a.out, svg)


def build_parser():
    p = argparse.ArgumentParser(prog="sgode", description="Signed graph neural ODE toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-graph", help="generate a benchmark graph")
    s.add_argument("--config")
    s.add_argument("--family", choices=sorted(graphs.FAMILIES))
    s.add_argument("--side", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--p", type=float)
    s.add_argument("--m-attach", dest="m_attach", type=int)
    s.add_argument("--k-ring", dest="k_ring", type=int)
    s.add_argument("--p-rewire", dest="p_rewire", type=float)
    s.add_argument("--blocks", type=int)
    s.add_argument("--p-in", dest="p_in", type=float)
    s.add_argument("--p-out", dest="p_out", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_graph)

    s = sub.add_parser("gen-dynamics", help="integrate ground-truth dynamics on a graph")
    s.add_argument("--graph", required=True)
    s.add_argument("--dynamics", choices=D.KINDS, default="heat")
    s.add_argument("--family", default="grid", help="graph family, selects the default horizon")
    s.add_argument("--t-end", dest="t_end", type=float)
    s.add_argument("--sampling", choices=("irregular", "regular"), default="irregular")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_dynamics)

    models = core.MODEL_KINDS + ("sgode-rnn",)
    for name, func, helptext in (("train-dynamics", cmd_train_dynamics, "fit a dynamics model"),
                                 ("train-forecast", cmd_train_forecast, "fit the forecaster")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config")
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--model", choices=models)
        s.add_argument("--ablation", choices=[a for a in rnn.ABLATIONS if a])
        s.add_argument("--missing-rate", dest="missing_rate", type=float)
        s.add_argument("--epochs", type=int)
        if name == "train-forecast":
            s.add_argument("--data")
        s.set_defaults(func=func)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--trajectory")
    s.add_argument("--splits")
    s.add_argument("--graph")
    s.add_argument("--data")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export-k", help="export learned coefficient matrices")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--top-k", dest="top_k", type=int, default=5)
    s.add_argument("--threshold", type=float, help="column-degree threshold (default n/2)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_k)

    s = sub.add_parser("plot", help="plot true and predicted trajectories as SVG")
    s.add_argument("--trajectory", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--graph")
    s.add_argument("--splits")
    s.add_argument("--nodes", default="0")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train-dynamics" and args.ablation:
        parser.error("--ablation applies to train-forecast")
    if args.command == "train-dynamics" and args.model == "sgode-rnn":
        parser.error("sgode-rnn is trained with train-forecast")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (SGODEError, OSError) as exc:
        print(f"sgode {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
