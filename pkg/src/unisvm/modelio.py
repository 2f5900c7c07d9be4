"""Model files.

Binary layout (all little-endian)::

    8 bytes   magic  b"UNISVM\\x00M"
    uint32    format version
    uint32    header length in bytes
    ...       UTF-8 JSON header (task, kernel, loss, lambda, shapes, info)
    int64[n+1]   CSR row pointers of the support matrix
    int64[nnz]   CSR column indices (0-based)
    float64[nnz] CSR values
    float64[n]   coefficients

The text variant is a single JSON document carrying the same fields, with
support vectors as ``[[index, value], ...]`` lists (1-based indices). Both
round-trip every float exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np
import scipy.sparse as sp

from .data import _dense_to_csr
from .errors import InputError
from .kernels import KernelSpec
from .losses import make_loss
from .solver import Model

MAGIC = b"UNISVM\x00M"
FORMAT_VERSION = 1
_TEXT_TAG = "unisvm-model"


def _support_csr(model: Model) -> sp.csr_matrix:
    S = model.support
    if sp.issparse(S):
        S = S.tocsr()
        S.sort_indices()
        return S
    return _dense_to_csr(np.atleast_2d(np.asarray(S, dtype=float)))


def _header(model: Model, S) -> dict:
    loss = model.loss
    return {
        "task": model.task,
        "kernel": {"kind": model.kernel.kind, "gamma": model.kernel.gamma},
        "loss": None if loss is None else {"kind": loss.kind, "params": loss.params, "A": loss.A},
        "lambda": model.lam,
        "strategy": model.strategy,
        "dim": int(S.shape[1]),
        "n_support": int(S.shape[0]),
        "nnz": int(S.nnz),
        "info": {k: v for k, v in model.info.items() if isinstance(v, (int, float, str, bool))},
    }


def _from_header(h: dict, S, coef) -> Model:
    loss = None
    if h.get("loss"):
        spec = h["loss"]
        loss = make_loss(spec["kind"], h["task"], A=spec["A"], **spec["params"])
    return Model(
        task=h["task"],
        kernel=KernelSpec(gamma=h["kernel"]["gamma"], kind=h["kernel"]["kind"]),
        support=S,
        coefficients=coef,
        loss=loss,
        lam=h.get("lambda"),
        strategy=h.get("strategy"),
        info=h.get("info", {}),
    )


def dumps_binary(model: Model) -> bytes:
    S = _support_csr(model)
    header = json.dumps(_header(model, S), sort_keys=True).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, len(header)),
        header,
        np.asarray(S.indptr, dtype="<i8").tobytes(),
        np.asarray(S.indices, dtype="<i8").tobytes(),
        np.asarray(S.data, dtype="<f8").tobytes(),
        np.asarray(model.coefficients, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def loads_binary(blob: bytes) -> Model:
    if blob[:8] != MAGIC:
        raise InputError("not a UniSVM model file (bad magic)")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != FORMAT_VERSION:
        raise InputError(f"unsupported model format version {version}")
    pos = 16
    h = json.loads(blob[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    n, nnz, dim = h["n_support"], h["nnz"], h["dim"]

    def take(dtype, count):
        nonlocal pos
        size = np.dtype(dtype).itemsize * count
        if pos + size > len(blob):
            raise InputError("model file is truncated")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos).astype(dtype[1:])
        pos += size
        return arr

    indptr = take("<i8", n + 1)
    indices = take("<i8", nnz)
    data = take("<f8", nnz)
    coef = take("<f8", n)
    if pos != len(blob):
        raise InputError("trailing bytes after model payload")
    S = sp.csr_matrix((data, indices, indptr), shape=(n, dim))
    return _from_header(h, S, coef)


def dumps_text(model: Model) -> str:
    S = _support_csr(model)
    doc = {"format": _TEXT_TAG, "format_version": FORMAT_VERSION}
    doc.update(_header(model, S))
    doc["support"] = [
        [[int(j) + 1, float(v)] for j, v in zip(S.indices[S.indptr[i]:S.indptr[i + 1]],
                                                 S.data[S.indptr[i]:S.indptr[i + 1]])]
        for i in range(S.shape[0])
    ]
    doc["coefficients"] = [float(c) for c in model.coefficients]
    return json.dumps(doc, indent=1) + "\n"


def loads_text(text: str) -> Model:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"model file is not valid JSON: {exc}") from None
    if doc.get("format") != _TEXT_TAG:
        raise InputError("not a UniSVM text model")
    if doc.get("format_version") != FORMAT_VERSION:
        raise InputError(f"unsupported model format version {doc.get('format_version')}")
    rows = doc["support"]
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r in rows])
    indices = np.array([j - 1 for r in rows for j, _ in r], dtype=np.int64)
    data = np.array([v for r in rows for _, v in r], dtype=float)
    S = sp.csr_matrix((data, indices, indptr), shape=(len(rows), doc["dim"]))
    return _from_header(doc, S, np.array(doc["coefficients"], dtype=float))


def save_model(model: Model, path, fmt: str = "binary") -> None:
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(dumps_binary(model))
    elif fmt == "text":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(dumps_text(model))
    else:
        raise InputError(f"unknown model format {fmt!r}; use 'binary' or 'text'")


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] == MAGIC:
        return loads_binary(blob)
    return loads_text(blob.decode("utf-8"))
