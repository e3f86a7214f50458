"""On-disk formats: checksummed embedding matrices and two-tower model archives.

Embedding file layout (little endian)::

    b"CADC" | version u32 | n_rows u32 | n_cols u32 | n_rows*n_cols float32 | FNV-1a-64 u64

The checksum covers the float payload only.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nncore import MLP, LinearLayer

MAGIC = b"CADC"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
_FOOTER = struct.Struct("<Q")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


class EmbeddingFileError(ValueError):
    pass


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK
    return h


def save_matrix(matrix: np.ndarray, path) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError("embedding matrix must be 2-D")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("embedding matrix has non-finite entries")
    payload = np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, matrix.shape[0], matrix.shape[1]))
        fh.write(payload)
        fh.write(_FOOTER.pack(fnv1a_64(payload)))


def load_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size or data[:4] != MAGIC:
        raise EmbeddingFileError(f"{path}: not an embedding file")
    _, version, rows, cols = _HEADER.unpack_from(data)
    if version != VERSION:
        raise EmbeddingFileError(f"{path}: unsupported format version {version}")
    size = 4 * rows * cols
    if len(data) != _HEADER.size + size + _FOOTER.size:
        raise EmbeddingFileError(f"{path}: truncated or oversized file")
    payload = data[_HEADER.size:_HEADER.size + size]
    (checksum,) = _FOOTER.unpack_from(data, _HEADER.size + size)
    if fnv1a_64(payload) != checksum:
        raise EmbeddingFileError(f"{path}: checksum mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)


def embedding_paths(prefix) -> tuple[Path, Path]:
    prefix = Path(prefix)
    return prefix.with_name(prefix.name + ".user.emb"), prefix.with_name(prefix.name + ".item.emb")


def save_embeddings(tables, prefix) -> tuple[Path, Path]:
    """Write the (user, item) table pair to ``<prefix>.user.emb`` and ``<prefix>.item.emb``."""
    user_path, item_path = embedding_paths(prefix)
    user_path.parent.mkdir(parents=True, exist_ok=True)
    save_matrix(tables[0], user_path)
    save_matrix(tables[1], item_path)
    return user_path, item_path


def load_embeddings(prefix) -> tuple[np.ndarray, np.ndarray]:
    user_path, item_path = embedding_paths(prefix)
    return load_matrix(user_path), load_matrix(item_path)


# ---------------------------------------------------------------------------
# two-tower archives (npz)

def save_ttnn(model, path) -> None:
    arrays = {"strategy": np.array(model.strategy)}
    for name, side in (("user", model.user), ("item", model.item)):
        if side.frozen is not None:
            arrays[f"{name}.frozen"] = side.frozen
        if side.free is not None:
            arrays[f"{name}.free"] = side.free
        for part, mlp in (("tower", side.tower), ("adapter", side.adapter)):
            if mlp is None:
                continue
            for k, layer in enumerate(mlp.layers):
                arrays[f"{name}.{part}.{k}.weight"] = layer.weight
                arrays[f"{name}.{part}.{k}.bias"] = layer.bias
    np.savez(path, **arrays)


def _load_mlp(arrays, prefix):
    layers = []
    k = 0
    while f"{prefix}.{k}.weight" in arrays:
        layers.append(LinearLayer(arrays[f"{prefix}.{k}.weight"], arrays[f"{prefix}.{k}.bias"]))
        k += 1
    return MLP(layers) if layers else None


def load_ttnn(path, dataset):
    from .ttnn import TtnnModel, _Side

    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    sides = []
    for name, feats in (("user", dataset.user_features), ("item", dataset.item_features)):
        sides.append(_Side(arrays.get(f"{name}.frozen"), arrays.get(f"{name}.free"),
                           _load_mlp(arrays, f"{name}.adapter"), _load_mlp(arrays, f"{name}.tower"),
                           np.asarray(feats, dtype=np.float32)))
    return TtnnModel(sides[0], sides[1], str(arrays["strategy"]))
