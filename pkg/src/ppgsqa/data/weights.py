"""Binary weight files.

Layout::

    ppgsqa-weights\\n
    header-bytes <n>\\n
    <n bytes of JSON header>
    <body: little-endian float32 parameters in header order, then buffers>

The header is serialised with sorted keys and fixed separators so that
``save(load(f))`` reproduces ``f`` byte for byte.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import IoFailure, MalformedFile, ShapeMismatch, TruncatedBody, VersionMismatch
from ..nn.model import ModelConfig, init_parameters
from ..nn.params import ParameterStore

MAGIC = b"ppgsqa-weights\n"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


class _ZeroRng:
    """Stand-in rng so a shape template can be built without drawing numbers."""

    def uniform(self, low, high, shape):
        return np.zeros(shape)


def _header(store: ParameterStore, config: ModelConfig, seed: int | None, extra: dict | None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "byte_order": "little",
        "scalar_bits": 32,
        "model_config": config.to_dict(),
        "creation_seed": seed,
        "parameters": [[n, list(s)] for n, s in store.shapes()],
        "buffers": [[n, list(s)] for n, s in store.buffer_shapes()],
        "extra": extra or {},
    }


def encode_weights(store: ParameterStore, config: ModelConfig, seed: int | None = None,
                   extra: dict | None = None) -> bytes:
    header = json.dumps(_header(store, config, seed, extra), sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype=_DTYPE).tobytes()
                    for a in list(store.params.values()) + list(store.buffers.values()))
    return MAGIC + f"header-bytes {len(header)}\n".encode() + header + body


def save_weights(store: ParameterStore, config: ModelConfig, path, seed: int | None = None,
                 extra: dict | None = None) -> None:
    try:
        Path(path).write_bytes(encode_weights(store, config, seed, extra))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def decode_weights(blob: bytes, source="<bytes>") -> tuple[ParameterStore, ModelConfig, dict]:
    if not blob.startswith(MAGIC):
        raise MalformedFile(source, 1, "not a ppgsqa weight file")
    rest = blob[len(MAGIC):]
    nl = rest.find(b"\n")
    line = rest[:nl].decode("ascii", "replace") if nl >= 0 else ""
    if not line.startswith("header-bytes "):
        raise MalformedFile(source, 2, "missing header-bytes line")
    try:
        n = int(line.split()[1])
    except (IndexError, ValueError):
        raise MalformedFile(source, 2, "bad header length") from None
    raw = rest[nl + 1:nl + 1 + n]
    if len(raw) != n:
        raise TruncatedBody(f"{source}: header cut short")
    try:
        header = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedFile(source, 3, f"header is not JSON: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"{source}: format version {header.get('format_version')}, "
                              f"expected {FORMAT_VERSION}")
    if header.get("byte_order") != "little" or header.get("scalar_bits") != 32:
        raise VersionMismatch(f"{source}: unsupported scalar layout")

    try:
        config = ModelConfig.from_dict(header["model_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ShapeMismatch(f"{source}: invalid model_config: {exc}") from None
    template = init_parameters(config, _ZeroRng())
    listed_p = [(n, tuple(s)) for n, s in header["parameters"]]
    listed_b = [(n, tuple(s)) for n, s in header["buffers"]]
    if listed_p != template.shapes() or listed_b != template.buffer_shapes():
        expected = dict(template.shapes() + template.buffer_shapes())
        bad = [n for n, s in listed_p + listed_b if expected.get(n) != s]
        raise ShapeMismatch(f"{source}: header tensors do not match model_config "
                            f"(first mismatch: {bad[0] if bad else 'name list'})")

    body = rest[nl + 1 + n:]
    sizes = [int(np.prod(s)) for _, s in listed_p + listed_b]
    need = 4 * sum(sizes)
    if len(body) < need:
        raise TruncatedBody(f"{source}: body has {len(body)} bytes, expected {need}")
    if len(body) > need:
        raise MalformedFile(source, 0, f"{len(body) - need} trailing bytes after body")
    flat = np.frombuffer(body, dtype=_DTYPE)
    store = ParameterStore(np.float32)
    pos = 0
    for (name, shape), size in zip(listed_p, sizes):
        store.add_param(name, flat[pos:pos + size].reshape(shape))
        pos += size
    for (name, shape), size in zip(listed_b, sizes[len(listed_p):]):
        store.add_buffer(name, flat[pos:pos + size].reshape(shape))
        pos += size
    return store, config, header


def load_weights(path) -> tuple[ParameterStore, ModelConfig]:
    store, config, _ = load_weights_with_header(path)
    return store, config


def load_weights_with_header(path) -> tuple[ParameterStore, ModelConfig, dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode_weights(blob, source=path)
