"""Flat binary checkpoints and versioned CSV record streams.

Checkpoint layout (all integers little-endian):

    magic       8 bytes  b"ADDCKPT\\0"
    version     uint32
    count       uint32   number of tensors
    table       per tensor: uint16 name length, UTF-8 name, uint8 ndim,
                ndim x uint64 dims
    data        per tensor, in table order: row-major float64 little-endian

Scalars (flags, sizes, harness settings) are stored as 0-d tensors.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import DIFFICULTIES
from .harness import CLASSES, HarnessConfig, StandInModel
from .losses import LOSS_TERMS
from .tensor_core import MlpParams

MAGIC = b"ADDCKPT\0"
VERSION = 1
_ACTIVATIONS = ("identity", "relu")
_TASK_LOSSES = ("zero", "box")


def write_tensors(path, tensors: dict):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    arrays = []
    for name, value in tensors.items():
        a = np.asarray(value, dtype="<f8")
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        arrays.append(a)
    for a in arrays:
        buf.write(a.tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def read_tensors(path) -> dict:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if data[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    try:
        version, count = struct.unpack_from("<II", data, 8)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        pos, table = 16, []
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + n].decode()
            pos += 2 + n
            (ndim,) = struct.unpack_from("<B", data, pos)
            shape = struct.unpack_from(f"<{ndim}Q", data, pos + 1)
            pos += 1 + 8 * ndim
            table.append((name, shape))
        out = {}
        for name, shape in table:
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(data):
                raise FormatError(f"{path}: truncated data for {name}")
            out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except (struct.error, UnicodeDecodeError):
        raise FormatError(f"{path}: truncated or corrupt tensor table") from None
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return out


def model_tensors(model: StandInModel) -> dict:
    t = {
        "meta.uses_gt_depth": float(model.uses_gt_depth),
        "meta.n_levels": float(model.n_levels),
        "meta.n_layers": float(len(model.generator.weights)),
    }
    for f in fields(HarnessConfig):
        v = getattr(model.cfg, f.name)
        t[f"cfg.{f.name}"] = float(_TASK_LOSSES.index(v)) if f.name == "task_loss" else float(v)
    for i, (w, b, act) in enumerate(zip(model.generator.weights, model.generator.biases, model.generator.activations)):
        t[f"generator.w{i}"] = w
        t[f"generator.b{i}"] = b
        t[f"generator.act{i}"] = float(_ACTIVATIONS.index(act))
    for k, r in enumerate(model.decoder):
        t[f"decoder.{k}"] = r
    return t


def save_model(path, model: StandInModel):
    write_tensors(path, model_tensors(model))


def load_model(path) -> StandInModel:
    t = read_tensors(path)
    try:
        kw = {}
        for f in fields(HarnessConfig):
            v = float(t[f"cfg.{f.name}"])
            default = getattr(HarnessConfig(), f.name)
            if f.name == "task_loss":
                kw[f.name] = _TASK_LOSSES[int(v)]
            else:
                kw[f.name] = type(default)(v)
        cfg = HarnessConfig(**kw)
        n_layers = int(t["meta.n_layers"])
        gen = MlpParams(
            [t[f"generator.w{i}"] for i in range(n_layers)],
            [t[f"generator.b{i}"] for i in range(n_layers)],
            tuple(_ACTIVATIONS[int(t[f"generator.act{i}"])] for i in range(n_layers)),
        )
        decoder = []
        while f"decoder.{len(decoder)}" in t:
            decoder.append(t[f"decoder.{len(decoder)}"])
        return StandInModel(gen, tuple(decoder), bool(t["meta.uses_gt_depth"]), cfg, int(t["meta.n_levels"]))
    except KeyError as exc:
        raise FormatError(f"{path}: missing tensor {exc.args[0]}") from None


# -- CSV streams ---------------------------------------------------------------

RECORDS_VERSION = 1
RECORD_COLUMNS = ("version", "seed", "step") + LOSS_TERMS + ("feat_distance", "ap_bev")
AP_COLUMNS = ("version", "metric", "class", "difficulty", "ap")


def _num(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def records_csv(records) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        losses = r.losses.as_dict()
        w.writerow([RECORDS_VERSION, r.seed, r.step] + [_num(losses[k]) for k in LOSS_TERMS]
                   + [_num(r.feat_distance), _num(r.ap_bev)])
    return out.getvalue()


def read_records_csv(path) -> list:
    """Rows as dicts of floats (seed and step as ints)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read records {path}: {exc.strerror}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != RECORD_COLUMNS:
        raise FormatError(f"{path}: header does not match records version {RECORDS_VERSION}")
    out = []
    for n, row in enumerate(rows[1:], 2):
        if len(row) != len(RECORD_COLUMNS) or row[0] != str(RECORDS_VERSION):
            raise FormatError(f"{path}:{n}: malformed row")
        try:
            d = dict(zip(RECORD_COLUMNS[1:], row[1:]))
            out.append({k: int(v) if k in ("seed", "step") else float(v) for k, v in d.items()})
        except ValueError:
            raise FormatError(f"{path}:{n}: non-numeric field") from None
    return out


def ordered_entries(table: dict) -> list:
    """AP table items in class order, then easy -> hard."""
    return sorted(table.items(), key=lambda kv: (CLASSES.index(kv[0][0]), DIFFICULTIES.index(kv[0][1])))


def ap_csv(report: dict) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(AP_COLUMNS)
    for metric in ("bev", "3d"):
        for (label, diff), ap in ordered_entries(report[metric]):
            w.writerow([RECORDS_VERSION, metric, label, diff, _num(ap)])
    return out.getvalue()
