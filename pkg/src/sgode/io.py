"""Config files, checkpoints, traffic CSV ingestion, results tables and SVG output."""
from __future__ import annotations

import csv
import io as _io
import math
import os
import tempfile
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .errors import ConfigError, ContractError, ParseError


def atomic_write_text(path, text, encoding="ascii"):
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding=encoding, newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# config -------------------------------------------------------------------

def _parse_value(raw):
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    return raw


def parse_config(text, allowed=None):
    """Parse flat ``key = value`` lines; ``#`` starts a comment.

    Values become bool, int, float or str. Keys outside ``allowed`` (when
    given) and duplicate keys are rejected.
    """
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError("empty key", lineno)
        if allowed is not None and key not in allowed:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ParseError(f"duplicate key {key!r}", lineno)
        out[key] = _parse_value(raw)
    return out


def load_config(path, allowed=None):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), allowed)


def format_config(cfg):
    lines = []
    for k in sorted(cfg):
        v = cfg[k]
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = "SGODE-CKPT v1"


@dataclass
class Checkpoint:
    kind: str
    hyperparameters: dict
    tensors: dict

    def tensor(self, name):
        try:
            return self.tensors[name]
        except KeyError:
            raise ContractError(f"checkpoint has no tensor {name!r}") from None


def format_checkpoint(kind, hyperparameters, tensors):
    """Text checkpoint; every value is written with ``float.hex`` so loading is bitwise exact."""
    lines = [CHECKPOINT_MAGIC, f"kind {kind}"]
    for k in sorted(hyperparameters):
        v = hyperparameters[k]
        if isinstance(v, float):
            v = v.hex()
            k = f"{k}:f"
        elif isinstance(v, bool):
            v = int(v)
            k = f"{k}:b"
        elif isinstance(v, int):
            k = f"{k}:i"
        else:
            k = f"{k}:s"
        lines.append(f"hp {k} {v}")
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        if arr.ndim != 2:
            arr = arr.reshape(arr.shape[0] if arr.ndim else 1, -1)
        lines.append(f"tensor {name} {arr.shape[0]} {arr.shape[1]}")
        for row in arr:
            lines.append(" ".join(float(x).hex() for x in row))
    return "\n".join(lines) + "\n"


def parse_checkpoint(text):
    lines = text.split("\n")
    if lines[0] != CHECKPOINT_MAGIC:
        raise ParseError(f"missing '{CHECKPOINT_MAGIC}' header", 1)
    kind = None
    hp, tensors = {}, {}
    i = 1
    while i < len(lines):
        line = lines[i]
        lineno = i + 1
        i += 1
        if not line:
            continue
        head, _, rest = line.partition(" ")
        if head == "kind":
            kind = rest
        elif head == "hp":
            key, _, val = rest.partition(" ")
            name, _, typ = key.rpartition(":")
            try:
                hp[name] = {"f": float.fromhex, "i": int, "b": lambda s: bool(int(s)),
                            "s": str}[typ](val)
            except (KeyError, ValueError):
                raise ParseError(f"bad hyperparameter entry {line!r}", lineno) from None
        elif head == "tensor":
            try:
                name, r, c = rest.split(" ")
                r, c = int(r), int(c)
                rows = [[float.fromhex(v) for v in lines[i + k].split()] for k in range(r)]
            except (ValueError, IndexError):
                raise ParseError(f"bad tensor block {line!r}", lineno) from None
            if any(len(row) != c for row in rows):
                raise ParseError(f"tensor {name} rows do not have {c} values", lineno)
            tensors[name] = np.array(rows, dtype=np.float64).reshape(r, c)
            i += r
        else:
            raise ParseError(f"unknown record {head!r}", lineno)
    if kind is None:
        raise ParseError("checkpoint has no 'kind' line")
    return Checkpoint(kind, hp, tensors)


def save_checkpoint(model, path):
    tensors = {k: p.data for k, p in model.named_parameters().items()}
    atomic_write_text(path, format_checkpoint(model.kind, model.hyperparameters(), tensors))


def load_checkpoint(path):
    with open(path, "r", encoding="ascii") as fh:
        return parse_checkpoint(fh.read())


def restore_parameters(model, ckpt):
    """Copy checkpoint tensors into ``model``; names and shapes must match."""
    params = model.named_parameters()
    if set(params) != set(ckpt.tensors):
        missing = sorted(set(params) ^ set(ckpt.tensors))
        raise ContractError(f"checkpoint/model parameter mismatch: {missing}")
    for k, p in params.items():
        if p.data.shape != ckpt.tensors[k].shape:
            raise ContractError(f"shape mismatch for {k}: {p.data.shape} vs {ckpt.tensors[k].shape}")
        p.data[...] = ckpt.tensors[k]
    return model


# traffic CSV --------------------------------------------------------------

@dataclass
class TrafficLayout:
    """``wide``: one row per time step, one column per sensor.

    ``long``: rows of (time, sensor, value), as exported from HDF tables.
    """

    form: str = "wide"
    header: bool = False
    index_col: bool = False

    def __post_init__(self):
        if self.form not in ("wide", "long"):
            raise ConfigError(f"traffic layout must be 'wide' or 'long', got {self.form!r}")


def _cell(text, lineno):
    s = text.strip()
    if s == "" or s.lower() in ("nan", "na"):
        return math.nan
    try:
        return float(s)
    except ValueError:
        raise ParseError(f"non-numeric cell {text!r}", lineno) from None


def parse_traffic_csv(text, layout=None):
    """Return ``(values, mask)`` as time x sensors arrays; missing cells are 0 with mask 0."""
    layout = layout or TrafficLayout()
    rows = list(csv.reader(_io.StringIO(text)))
    start = 1 if layout.header else 0
    if layout.form == "long":
        return _parse_long(rows, start)
    data = []
    width = None
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if not row or all(not c.strip() for c in row):
            continue
        if layout.index_col:
            row = row[1:]
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"ragged row: expected {width} cells, got {len(row)}", lineno)
        data.append([_cell(c, lineno) for c in row])
    if not data:
        raise ParseError("no data rows")
    arr = np.array(data, dtype=np.float64)
    mask = np.isfinite(arr).astype(np.float64)
    return np.where(mask > 0, arr, 0.0), mask


def _parse_long(rows, start):
    times, sensors, entries = {}, {}, []
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ParseError(f"long layout needs 3 cells (time, sensor, value), got {len(row)}", lineno)
        t, s = row[0].strip(), row[1].strip()
        times.setdefault(t, len(times))
        sensors.setdefault(s, len(sensors))
        entries.append((times[t], sensors[s], _cell(row[2], lineno)))
    if not entries:
        raise ParseError("no data rows")
    arr = np.full((len(times), len(sensors)), math.nan)
    for ti, si, v in entries:
        arr[ti, si] = v
    mask = np.isfinite(arr).astype(np.float64)
    return np.where(mask > 0, arr, 0.0), mask


def load_traffic_csv(path, layout=None):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_traffic_csv(fh.read(), layout)


# results ------------------------------------------------------------------

RESULT_COLUMNS = ("experiment", "dynamics", "graph", "model", "split", "horizon",
                  "mae", "rmse", "mape", "seed")


def format_results(rows):
    """CSV text with the fixed column order; floats use repr for exact round-trip."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        missing = [c for c in RESULT_COLUMNS if c not in r]
        if missing:
            raise ContractError(f"result row lacks {missing}")
        w.writerow([repr(r[c]) if isinstance(r[c], float) else ("" if r[c] is None else r[c])
                    for c in RESULT_COLUMNS])
    return buf.getvalue()


def write_results(rows, path):
    atomic_write_text(path, format_results(rows))


def read_results(path):
    with open(path, "r", encoding="ascii") as fh:
        return list(csv.DictReader(fh))


# K export -----------------------------------------------------------------

def top_k_per_row(K, k):
    """Keep the k largest |K_ij| in each row; ties go to the lower column index."""
    K = np.asarray(K, dtype=np.float64)
    if k < 1:
        raise ConfigError(f"top_k must be >= 1, got {k}")
    out = np.zeros_like(K)
    # stable sort on -|K| keeps ascending column order among equal magnitudes
    order = np.argsort(-np.abs(K), axis=1, kind="stable")[:, :k]
    rows = np.arange(K.shape[0])[:, None]
    out[rows, order] = K[rows, order]
    return out


def important_nodes(K_top, threshold=None):
    """Nodes whose positive (negative) column degree of sign(K_top) exceeds ``threshold``.

    Returns ``(positive, negative)`` index arrays; the threshold defaults to n/2.
    """
    s = np.sign(K_top)
    n = s.shape[0]
    thr = n / 2 if threshold is None else threshold
    pos = (s > 0).sum(axis=0)
    neg = (s < 0).sum(axis=0)
    return np.flatnonzero(pos > thr), np.flatnonzero(neg > thr)


def format_matrix_csv(K):
    return "\n".join(",".join(repr(float(v)) for v in row) for row in np.asarray(K)) + "\n"


def _color(v, vmax):
    if vmax == 0 or v == 0:
        return "#ffffff"
    a = min(abs(v) / vmax, 1.0)
    fade = int(round(255 * (1 - a)))
    return f"#ff{fade:02x}{fade:02x}" if v > 0 else f"#{fade:02x}{fade:02x}ff"


def heatmap_svg(K, cell=6, title="K"):
    """Signed heatmap: red for positive, blue for negative, white for zero."""
    K = np.asarray(K, dtype=np.float64)
    n, m = K.shape
    vmax = float(np.max(np.abs(K))) if K.size else 0.0
    w, h = m * cell, n * cell + 16
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
             f'viewBox="0 0 {w} {h}">',
             f'<title>{escape(title)}</title>',
             f'<text x="0" y="12" font-size="12">{escape(title)}</text>']
    for i in range(n):
        for j in range(m):
            if K[i, j] != 0:
                parts.append(f'<rect x="{j * cell}" y="{16 + i * cell}" width="{cell}" '
                             f'height="{cell}" fill="{_color(K[i, j], vmax)}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def export_k(ckpt, top_k=5, threshold=None, which=None):
    """Materialize K from a checkpoint and derive its top-k view and important nodes.

    Returns a dict of name -> (K, K_top, positive_nodes, negative_nodes); one
    entry per coefficient matrix in the checkpoint (``K`` for dynamics models,
    ``enc.K`` / ``dec.K`` for the forecaster).
    """
    from .core import SignedCoeff
    from . import tensor as T

    groups = {}
    for name, arr in ckpt.tensors.items():
        prefix, _, leaf = name.rpartition(".")
        if leaf in ("K_raw", "E1", "E2", "E3", "E4", "EM1", "EM2") and prefix.endswith("K"):
            groups.setdefault(prefix, {})[leaf] = arr
    if not groups:
        raise ContractError(f"model kind {ckpt.kind!r} has no learnable coefficient matrix")
    variant_of = {"sgodev1": "v1_dense", "sgodev2": "v2_factored", "sgodev3": "v3_signed_pair",
                  "sgode-masked": "masked_signed", "adaptive": "adaptive"}
    out = {}
    for prefix in sorted(groups):
        leaves = groups[prefix]
        variant = ckpt.hyperparameters.get(f"{prefix}.variant") or variant_of.get(ckpt.kind)
        if variant is None:
            raise ContractError(f"cannot infer the coefficient variant for {prefix!r}")
        alpha = float(ckpt.hyperparameters.get("alpha", 1.0))
        sc = SignedCoeff(variant, {k: T.Tensor(v) for k, v in leaves.items()}, alpha)
        with T.no_grad():
            K = sc.build().data.copy()
        K_top = top_k_per_row(K, top_k)
        pos, neg = important_nodes(K_top, threshold)
        out[prefix] = (K, K_top, pos, neg)
    if which is not None:
        return out[which]
    return out


def format_important_nodes(pos, neg):
    lines = ["node,sign,color"]
    lines += [f"{i},+,red" for i in pos]
    lines += [f"{i},-,blue" for i in neg]
    return "\n".join(lines) + "\n"


# trajectory plot ----------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def plot_trajectory(times, truth, pred=None, nodes=(0,), split_time=None,
                    width=640, height=360, feature=0):
    """SVG of selected node trajectories: truth solid, prediction dashed.

    ``truth``/``pred`` are (T, n) or (T, n, d) arrays over ``times``.
    ``split_time`` draws a vertical marker at the train/test boundary.
    """
    nodes = list(nodes)
    if not nodes:
        raise ContractError("plot needs at least one node")
    times = np.asarray(times, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if truth.ndim == 3:
        truth = truth[:, :, feature]
    if pred is not None:
        pred = np.asarray(pred, dtype=np.float64)
        if pred.ndim == 3:
            pred = pred[:, :, feature]
        if pred.shape != truth.shape:
            raise ContractError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if len(times) != len(truth):
        raise ContractError("time axis does not match the trajectory length")
    if any(not 0 <= i < truth.shape[1] for i in nodes):
        raise ContractError(f"node index out of range 0..{truth.shape[1] - 1}")
    series = [truth[:, nodes]] + ([pred[:, nodes]] if pred is not None else [])
    lo = min(float(s.min()) for s in series)
    hi = max(float(s.max()) for s in series)
    if hi == lo:
        hi = lo + 1.0
    t0, t1 = float(times[0]), float(times[-1])
    if t1 == t0:
        t1 = t0 + 1.0
    pad = 40

    def sx(t):
        return pad + (t - t0) / (t1 - t0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - lo) / (hi - lo) * (height - 2 * pad)

    def poly(vals, color, dashed):
        pts = " ".join(f"{sx(t):.3f},{sy(v):.3f}" for t, v in zip(times, vals))
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>'

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="#000000"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="#000000"/>',
             f'<text x="{pad}" y="{height - 10}" font-size="11">t={t0:.4g}</text>',
             f'<text x="{width - pad}" y="{height - 10}" font-size="11" text-anchor="end">t={t1:.4g}</text>',
             f'<text x="4" y="{pad}" font-size="11">{hi:.4g}</text>',
             f'<text x="4" y="{height - pad}" font-size="11">{lo:.4g}</text>']
    for k, node in enumerate(nodes):
        color = _PALETTE[k % len(_PALETTE)]
        parts.append(f'<g class="node" data-node="{node}">')
        parts.append(poly(truth[:, node], color, False))
        if pred is not None:
            parts.append(poly(pred[:, node], color, True))
        parts.append("</g>")
    if split_time is not None:
        x = sx(float(split_time))
        parts.append(f'<line class="split" x1="{x:.3f}" y1="{pad}" x2="{x:.3f}" '
                     f'y2="{height - pad}" stroke="#555555" stroke-dasharray="2,2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
