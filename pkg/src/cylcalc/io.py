"""Kernel and report serialisation.

JSON reports keep key insertion order and use the shortest round-trip
float repr, so equal inputs give byte-identical files. Non-finite floats
become the strings ``"nan"``, ``"inf"`` and ``"-inf"``.
"""
from __future__ import annotations

import csv
import json
import math
import struct

import numpy as np

MAGIC = b"CYLK"
FLAG_REAL = 0
FLAG_COMPLEX = 1


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def _kernel_values(op) -> np.ndarray:
    return op.mat / op.weight


def write_kernel_csv(path, op, drop_zeros: bool = True) -> int:
    """Write ``row, col, re, im`` lines of the kernel; returns the number of entries."""
    K = _kernel_values(op)
    rows, cols = np.nonzero(K) if drop_zeros else np.indices(K.shape).reshape(2, -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "re", "im"])
        for r, c in zip(rows, cols):
            v = complex(K[r, c])
            w.writerow([int(r), int(c), _fmt(v.real), _fmt(v.imag)])
    return int(len(rows))


def write_kernel_binary(path, op) -> None:
    """16-byte header (``CYLK``, u32 rows, u32 cols, u32 flags) then LE float64, row-major.

    ``flags`` is 0 for real data and 1 for complex data stored as
    interleaved ``(re, im)`` pairs.
    """
    K = _kernel_values(op)
    cplx = np.iscomplexobj(K) and np.any(K.imag != 0)
    rows, cols = K.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<III", rows, cols, FLAG_COMPLEX if cplx else FLAG_REAL))
        data = K.astype("<c16") if cplx else np.ascontiguousarray(K.real, dtype="<f8")
        fh.write(data.tobytes(order="C"))


def read_kernel_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if head[:4] != MAGIC:
            raise ValueError("not a kernel file (bad magic)")
        rows, cols, flags = struct.unpack("<III", head[4:])
        raw = fh.read()
    dt = "<c16" if flags == FLAG_COMPLEX else "<f8"
    arr = np.frombuffer(raw, dtype=dt)
    if arr.size != rows * cols:
        raise ValueError("kernel file is truncated")
    return arr.reshape(rows, cols).copy()


def write_indicial_csv(path, taus, mats) -> None:
    """``tau, row, col, re, im`` for every entry of every ``T^(tau)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "row", "col", "re", "im"])
        for tau, M in zip(taus, mats):
            M = np.asarray(M)
            for r in range(M.shape[0]):
                for c in range(M.shape[1]):
                    v = complex(M[r, c])
                    w.writerow([_fmt(float(tau)), r, c, _fmt(v.real), _fmt(v.imag)])


def write_limit_csv(path, T, taus) -> None:
    """Indicial family of a limit operator on ``taus``."""
    write_indicial_csv(path, taus, T.hat(taus))


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def _plain(obj):
    """Numpy scalars and arrays to Python objects; non-finite floats to strings."""
    if obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else _fmt(x)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _plain(obj.real), "im": _plain(obj.imag)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON text (trailing newline included)."""
    return json.dumps(_plain(obj), indent=indent, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))
