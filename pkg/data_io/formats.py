"""
data_io/formats.py
==================
Binary file formats.

Token file (.tokb), little-endian:
    "TOKB" | u8 version=1 | u32 N | u32 d | u32 h | u32 w | u8 has_global
    | N*d float32 tokens (row-major) | [d float32 global embedding]

Mask / anomaly map (.pgm): binary PGM "P5", maxval 255.
    masks: anomalous = 255, normal = 0
    maps : score s in [0, 1] stored as floor(s * 255 + 0.5)

Checkpoint (.tkcp), little-endian:
    "TKCP" | u8 version=1 | u32 len | config text (utf-8, key = value)
    | u32 d | u32 Q | every SubspaceModel group as float64, in field order
"""

from __future__ import annotations

import os
import struct
from typing import BinaryIO

import numpy as np

from alignment_engine.config import TrainConfig, config_to_text, parse_config_text
from alignment_engine.semantics import CLASSES, PARAMETER_GROUPS, SubspaceModel
from data_io.samples import TokenGrid
from middleware.guards import (
    BadMagicError,
    DimensionMismatchError,
    FormatError,
    PGMFormatError,
    TruncatedFileError,
    VersionMismatchError,
)

TOKEN_MAGIC = b"TOKB"
TOKEN_VERSION = 1
CHECKPOINT_MAGIC = b"TKCP"
CHECKPOINT_VERSION = 1
PGM_MAXVAL = 255

_TOKEN_HEADER = struct.Struct("<4sBIIIIB")
_CKPT_PREFIX = struct.Struct("<4sBI")
_CKPT_DIMS = struct.Struct("<II")


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"{what}: expected {n} bytes, found {len(data)}.")
    return data


def _check_magic(found: bytes, expected: bytes, path) -> None:
    if found != expected:
        raise BadMagicError(f"{os.fspath(path)}: bad magic {found!r}, expected {expected!r}.")


# ── Token grids ───────────────────────────────────────────────────────────────

def save_token_file(path: str | os.PathLike, grid: TokenGrid) -> None:
    n, d = grid.tokens.shape
    has_global = grid.global_embedding is not None
    with open(path, "wb") as f:
        f.write(_TOKEN_HEADER.pack(TOKEN_MAGIC, TOKEN_VERSION, n, d, grid.h, grid.w, int(has_global)))
        f.write(np.ascontiguousarray(grid.tokens, dtype="<f4").tobytes())
        if has_global:
            f.write(np.ascontiguousarray(grid.global_embedding, dtype="<f4").tobytes())


def load_token_file(path: str | os.PathLike) -> TokenGrid:
    with open(path, "rb") as f:
        header = _read_exact(f, _TOKEN_HEADER.size, "token file header")
        magic, version, n, d, h, w, has_global = _TOKEN_HEADER.unpack(header)
        _check_magic(magic, TOKEN_MAGIC, path)
        if version != TOKEN_VERSION:
            raise VersionMismatchError(f"token file version {version}, expected {TOKEN_VERSION}.")
        if h * w != n:
            raise DimensionMismatchError(f"token file header: h*w = {h * w} but N = {n}.")
        tokens = np.frombuffer(_read_exact(f, 4 * n * d, "token payload"), dtype="<f4")
        global_embedding = None
        if has_global:
            global_embedding = np.frombuffer(_read_exact(f, 4 * d, "global embedding"), dtype="<f4")
            global_embedding = global_embedding.astype(np.float64)
    return TokenGrid(tokens=tokens.reshape(n, d).astype(np.float64), h=h, w=w, global_embedding=global_embedding)


# ── PGM ───────────────────────────────────────────────────────────────────────

def _write_pgm(path, pixels: np.ndarray) -> None:
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii"))
        f.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def _read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.find(b"\n", pos)
            if pos < 0:
                break
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            break
        fields.append(data[start:pos])
    if len(fields) < 4 or fields[0] != b"P5":
        raise PGMFormatError(f"{os.fspath(path)}: not a binary (P5) PGM file.")
    try:
        w, h, maxval = (int(x) for x in fields[1:])
    except ValueError:
        raise PGMFormatError(f"{os.fspath(path)}: malformed PGM header.") from None
    if maxval != PGM_MAXVAL:
        raise PGMFormatError(f"{os.fspath(path)}: maxval {maxval}, expected {PGM_MAXVAL}.")
    body = data[pos + 1:pos + 1 + w * h]
    if len(body) != w * h:
        raise TruncatedFileError(f"{os.fspath(path)}: expected {w * h} pixels, found {len(body)}.")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def save_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    _write_pgm(path, np.where(np.asarray(mask) > 0, PGM_MAXVAL, 0))


def load_mask(path: str | os.PathLike) -> np.ndarray:
    pixels = _read_pgm(path)
    if not np.all((pixels == 0) | (pixels == PGM_MAXVAL)):
        raise PGMFormatError(f"{os.fspath(path)}: mask pixels must be 0 or {PGM_MAXVAL}.")
    return (pixels == PGM_MAXVAL).astype(np.uint8)


def quantize_scores(scores: np.ndarray) -> np.ndarray:
    """Scores in [0, 1] to bytes, rounding half-up."""
    scaled = np.floor(np.clip(np.asarray(scores, dtype=float), 0.0, 1.0) * PGM_MAXVAL + 0.5)
    return scaled.astype(np.uint8)


def save_anomaly_map(path: str | os.PathLike, scores: np.ndarray) -> None:
    _write_pgm(path, quantize_scores(scores))


def load_anomaly_map(path: str | os.PathLike) -> np.ndarray:
    return _read_pgm(path).astype(np.float64) / PGM_MAXVAL


# ── Checkpoints ───────────────────────────────────────────────────────────────

def _group_shapes(d: int, q: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for c in CLASSES:
        shapes[f"l_{c}"] = shapes[f"g_{c}"] = shapes[f"fuse_{c}_b"] = (d,)
        shapes[f"heads_{c}_w"] = (q, d, d)
        shapes[f"heads_{c}_b"] = (q, d)
        shapes[f"fuse_{c}_w"] = (d, 2 * d)
    return {name: shapes[name] for name in PARAMETER_GROUPS}


def save_checkpoint(path: str | os.PathLike, model: SubspaceModel, cfg: TrainConfig) -> None:
    text = config_to_text(cfg).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(text)))
        f.write(text)
        f.write(_CKPT_DIMS.pack(model.d, model.n_subspaces))
        for value in model.parameters().values():
            f.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path: str | os.PathLike) -> tuple[SubspaceModel, TrainConfig]:
    with open(path, "rb") as f:
        magic, version, text_len = _CKPT_PREFIX.unpack(_read_exact(f, _CKPT_PREFIX.size, "checkpoint header"))
        _check_magic(magic, CHECKPOINT_MAGIC, path)
        if version != CHECKPOINT_VERSION:
            raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}.")
        try:
            text = _read_exact(f, text_len, "checkpoint config").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{os.fspath(path)}: checkpoint config is not utf-8.") from None
        cfg = parse_config_text(text, TrainConfig)
        d, q = _CKPT_DIMS.unpack(_read_exact(f, _CKPT_DIMS.size, "checkpoint dimensions"))
        params = {}
        for name, shape in _group_shapes(d, q).items():
            count = int(np.prod(shape))
            raw = _read_exact(f, 8 * count, f"checkpoint group '{name}'")
            params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        if f.read(1):
            raise FormatError(f"{os.fspath(path)}: trailing bytes after the last parameter group.")
    return SubspaceModel(**params), cfg
