"""Reading and writing the ``sfield v1`` interchange format.

A file is one ASCII header line::

    sfield v1 d=<d> k=<k> h=<decimal> dtype=<i64|f64>

followed by the row-major, little-endian values of the ``(2k+1)^d`` box.
"""
from __future__ import annotations

import io
import os
import re

import numpy as np

from .lattice import ChipGrid, LatticeBox, Odometer, RealField

_HEADER = re.compile(
    rb"^sfield v1 d=(?P<d>\d+) k=(?P<k>\d+) h=(?P<h>[0-9eE.+-]+) dtype=(?P<dtype>i64|f64)$"
)
_DTYPES = {"i64": np.dtype("<i8"), "f64": np.dtype("<f8")}


def dumps(field) -> bytes:
    if isinstance(field, RealField):
        tag, h, values = "f64", field.h, field.values
    elif isinstance(field, (ChipGrid, Odometer)):
        tag, h, values = "i64", 1.0, field.values
    else:
        raise TypeError(f"cannot serialise {type(field).__name__}")
    header = f"sfield v1 d={field.d} k={field.box.k} h={h!r} dtype={tag}\n"
    body = np.ascontiguousarray(values, dtype=_DTYPES[tag]).tobytes(order="C")
    return header.encode("ascii") + body


def loads(data: bytes, kind: str = "chips"):
    """Parse bytes; integer payloads become ``ChipGrid`` or, with
    ``kind="odometer"``, ``Odometer``."""
    newline = data.find(b"\n")
    if newline < 0:
        raise ValueError("sfield header is missing its newline")
    match = _HEADER.match(data[:newline])
    if match is None:
        raise ValueError(f"malformed sfield header: {data[:newline][:80]!r}")
    d, k = int(match["d"]), int(match["k"])
    h = float(match["h"])
    tag = match["dtype"].decode()
    box = LatticeBox(d, k)
    payload = data[newline + 1:]
    expected = box.size * 8
    if len(payload) != expected:
        raise ValueError(f"sfield payload has {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype=_DTYPES[tag]).reshape(box.shape)
    if tag == "f64":
        return RealField(box, h, values)
    if kind == "odometer":
        return Odometer(box, values)
    if kind != "chips":
        raise ValueError(f"unknown integer field kind {kind!r}")
    return ChipGrid(box, values)


def write(path: str | os.PathLike | io.IOBase, field) -> None:
    data = dumps(field)
    if hasattr(path, "write"):
        path.write(data)
        return
    with open(path, "wb") as fh:
        fh.write(data)


def read(path: str | os.PathLike, kind: str = "chips"):
    with open(path, "rb") as fh:
        return loads(fh.read(), kind=kind)
