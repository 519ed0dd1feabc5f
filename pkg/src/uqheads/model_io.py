"""Chunked binary model files for the three heads.

Layout (all integers little-endian):

    magic            8 bytes  b"UQHEADv1"
    head kind        u8       0 = dnn, 1 = bnn, 2 = sngp
    finalized flag   u8       1 when an sngp covariance is stored
    train seed       u64      seed the model was trained with
    head config      u32 x4   input_dim, hidden, rff_dim, k_samples
                     f64 x4   spectral_bound, ridge, mean_field_lambda, prior_std
    tensor count     u32
    tensors          repeated: name length u32, name bytes (utf-8),
                     rank u32, dims u64 x rank, values f64 x prod(dims)

Writing the same parameters twice produces byte-identical files.
"""

from __future__ import annotations

import struct

import numpy as np

from .heads import BNN, DNN, SNGP, BnnParams, DnnParams, HeadConfig, Params, SngpParams
from .numerics import require_finite

MAGIC = b"UQHEADv1"
_KIND_CODES = {DNN: 0, BNN: 1, SNGP: 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


class ModelFormatError(ValueError):
    """The model file is corrupt, truncated, or not a model file at all."""


def _tensor_dict(params: Params) -> dict[str, np.ndarray]:
    if isinstance(params, DnnParams):
        return params.trainable()
    if isinstance(params, BnnParams):
        return params.trainable()
    if isinstance(params, SngpParams):
        out = dict(params.trainable())
        out["w_rff"] = params.w_rff
        out["b_rff"] = params.b_rff
        out["precision"] = params.precision
        if params.u is not None:
            out["u"] = params.u
            out["v"] = params.v
        if params.finalized:
            out["covariance"] = params.covariance
        return out
    raise TypeError(f"unsupported params type {type(params).__name__}")


def save_model(path, head_kind: str, cfg: HeadConfig, params: Params,
               train_seed: int) -> None:
    if head_kind not in _KIND_CODES:
        raise ValueError(f"unknown head kind {head_kind!r}")
    tensors = _tensor_dict(params)
    finalized = isinstance(params, SngpParams) and params.finalized
    chunks = [MAGIC, struct.pack("<BBQ", _KIND_CODES[head_kind], int(finalized),
                                 train_seed & (2**64 - 1))]
    chunks.append(struct.pack("<IIII", cfg.input_dim, cfg.hidden,
                              cfg.rff_dim, cfg.k_samples))
    chunks.append(struct.pack("<dddd", cfg.spectral_bound, cfg.ridge,
                              cfg.mean_field_lambda, cfg.prior_std))
    chunks.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = require_finite(arr, what=f"tensor {name!r}")
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError(
                f"{self.path}: truncated while reading {what}: expected "
                f"{n} bytes at offset {self.pos}, only {len(self.data) - self.pos} left"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_model(path) -> tuple[str, HeadConfig, Params, int]:
    """Read a model file back into (head_kind, config, params, train_seed)."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise ModelFormatError(f"{path}: bad magic, not a model file")
    kind_code, finalized, train_seed = reader.unpack("<BBQ", "header")
    if kind_code not in _KIND_NAMES:
        raise ModelFormatError(f"{path}: unknown head kind code {kind_code}")
    head_kind = _KIND_NAMES[kind_code]
    input_dim, hidden, rff_dim, k_samples = reader.unpack("<IIII", "config")
    spectral_bound, ridge, lam, prior_std = reader.unpack("<dddd", "config")
    cfg = HeadConfig(
        input_dim=input_dim, hidden=hidden, rff_dim=rff_dim,
        spectral_bound=spectral_bound, ridge=ridge, mean_field_lambda=lam,
        k_samples=k_samples, prior_std=prior_std,
    )
    (n_tensors,) = reader.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = reader.unpack("<I", "tensor name length")
        name = reader.take(name_len, "tensor name").decode("utf-8")
        (rank,) = reader.unpack("<I", f"rank of {name!r}")
        dims = reader.unpack(f"<{rank}Q", f"dims of {name!r}") if rank else ()
        count = 1
        for d in dims:
            count *= d
        raw = reader.take(8 * count, f"values of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    if reader.pos != len(reader.data):
        raise ModelFormatError(
            f"{path}: {len(reader.data) - reader.pos} trailing bytes after last tensor"
        )
    params = _params_from_tensors(head_kind, tensors, bool(finalized), path)
    return head_kind, cfg, params, train_seed


def _need(tensors: dict[str, np.ndarray], name: str, path) -> np.ndarray:
    if name not in tensors:
        raise ModelFormatError(f"{path}: missing tensor {name!r}")
    return tensors[name]


def _params_from_tensors(head_kind, tensors, finalized, path) -> Params:
    if head_kind == DNN:
        return DnnParams(*(_need(tensors, n, path) for n in ("w1", "b1", "w2", "b2")))
    if head_kind == BNN:
        names = ("w1_mu", "w1_rho", "b1_mu", "b1_rho",
                 "w2_mu", "w2_rho", "b2_mu", "b2_rho")
        return BnnParams(*(_need(tensors, n, path) for n in names))
    return SngpParams(
        w_hid=_need(tensors, "w_hid", path),
        b_hid=_need(tensors, "b_hid", path),
        w_rff=_need(tensors, "w_rff", path),
        b_rff=_need(tensors, "b_rff", path),
        beta=_need(tensors, "beta", path),
        precision=_need(tensors, "precision", path),
        covariance=_need(tensors, "covariance", path) if finalized else None,
        u=tensors.get("u"),
        v=tensors.get("v"),
        finalized=finalized,
    )
