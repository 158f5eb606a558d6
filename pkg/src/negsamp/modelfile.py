"""Binary model serialization.

A single tagged format holds either a trained factor pair for a joint
distribution or a full language model:

    magic "NEGF" | version u32 | mode u8 | vocab_size u32 | d u32
    | encoder spec | alpha f64 | k u32 | seed i64 | nce_log_z f64
    | vocabulary block | parameter blocks | metadata json | crc32 u32

All integers are little-endian; all float payloads are row-major 64-bit.
The trailing CRC32 covers every preceding byte and is validated on load,
so load(save(m)) either reproduces m bit-exactly or fails loudly.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .corpus import Vocabulary
from .distlab import FactorPair
from .encoder import EncoderSpec
from .lm import LanguageModel
from .sampling import build_noise

__all__ = ["FactorModel", "save_model", "load_model", "ModelFormatError"]

MAGIC = b"NEGF"
VERSION = 1

MODE_TAGS = {"factors": 0, "nce": 1, "neg": 2, "neglm": 3, "neglm_b": 4}
TAG_MODES = {v: k for k, v in MODE_TAGS.items()}
ENC_KINDS = {None: 0, "window": 1, "lstm": 2}
KIND_ENCS = {v: k for k, v in ENC_KINDS.items()}


class ModelFormatError(ValueError):
    """Raised for bad magic, version, structure, or checksum mismatch."""


@dataclass
class FactorModel:
    """Embedding tables for a joint distribution over two label alphabets."""

    x_labels: list[str]
    y_labels: list[str]
    factors: FactorPair
    k: int
    alpha: float = 1.0
    seed: int = 0
    metadata: dict = field(default_factory=dict)


def _w(fh, fmt, *values):
    fh.write(struct.pack("<" + fmt, *values))


def _write_str(fh, text: str):
    raw = text.encode("utf-8")
    _w(fh, "H", len(raw))
    fh.write(raw)


def _write_array(fh, name: str, arr: np.ndarray):
    _write_str(fh, name)
    arr = np.ascontiguousarray(arr, dtype="<f8")
    _w(fh, "B", arr.ndim)
    for dim in arr.shape:
        _w(fh, "I", dim)
    fh.write(arr.tobytes())


def save_model(path, model: "FactorModel | LanguageModel") -> None:
    fh = io.BytesIO()
    fh.write(MAGIC)
    _w(fh, "I", VERSION)
    if isinstance(model, FactorModel):
        _save_factors(fh, model)
    elif isinstance(model, LanguageModel):
        _save_lm(fh, model)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    payload = fh.getvalue()
    with open(path, "wb") as out:
        out.write(payload)
        out.write(struct.pack("<I", zlib.crc32(payload)))


def _save_factors(fh, model: FactorModel):
    _w(fh, "B", MODE_TAGS["factors"])
    _w(fh, "I", len(model.x_labels))
    _w(fh, "I", model.factors.d)
    _w(fh, "B", ENC_KINDS[None])
    _w(fh, "IIII", 0, 0, 0, 0)
    _w(fh, "d", 0.0)
    _w(fh, "d", model.alpha)
    _w(fh, "I", model.k)
    _w(fh, "q", model.seed)
    _w(fh, "d", 0.0)  # nce_log_z, unused for factor models
    _w(fh, "B", 0)    # vocabulary block tag: label pair
    _w(fh, "I", len(model.x_labels))
    for label in model.x_labels:
        _write_str(fh, label)
    _w(fh, "I", len(model.y_labels))
    for label in model.y_labels:
        _write_str(fh, label)
    _w(fh, "I", 2)
    _write_array(fh, "x_table", model.factors.x_table)
    _write_array(fh, "y_table", model.factors.y_table)
    _write_json(fh, model.metadata)


def _save_lm(fh, model: LanguageModel):
    spec = model.enc_spec
    _w(fh, "B", MODE_TAGS[model.mode])
    _w(fh, "I", model.size)
    _w(fh, "I", spec.hidden_dim)
    _w(fh, "B", ENC_KINDS[spec.kind])
    _w(fh, "IIII", spec.input_dim, spec.hidden_dim, spec.layers, spec.window_size)
    _w(fh, "d", spec.dropout)
    _w(fh, "d", model.noise.alpha)
    _w(fh, "I", model.k)
    _w(fh, "q", int(model.metadata.get("seed", 0)))
    _w(fh, "d", model.nce_log_z)
    _w(fh, "B", 1)  # vocabulary block tag: token + count
    _w(fh, "I", model.size)
    for token, count in zip(model.vocab.itos, model.vocab.counts):
        _write_str(fh, token)
        _w(fh, "Q", int(count))
    blocks = [("input_embed", model.input_embed), ("word_table", model.word_table)]
    if model.bias is not None:
        blocks.append(("bias", model.bias))
    blocks.extend((f"enc.{name}", arr) for name, arr in model.enc_params.items())
    _w(fh, "I", len(blocks))
    for name, arr in blocks:
        _write_array(fh, name, arr)
    _write_json(fh, model.metadata)


def _write_json(fh, obj: dict):
    raw = json.dumps(obj, sort_keys=True).encode("utf-8")
    _w(fh, "I", len(raw))
    fh.write(raw)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize("<" + fmt)
        if self.pos + size > len(self.data):
            raise ModelFormatError("truncated model file")
        values = struct.unpack_from("<" + fmt, self.data, self.pos)
        self.pos += size
        return values if len(values) > 1 else values[0]

    def take_str(self) -> str:
        length = self.take("H")
        raw = self.data[self.pos : self.pos + length]
        if len(raw) != length:
            raise ModelFormatError("truncated string")
        self.pos += length
        return raw.decode("utf-8")

    def take_array(self) -> tuple[str, np.ndarray]:
        name = self.take_str()
        ndim = self.take("B")
        shape = tuple(self.take("I") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        size = count * 8
        raw = self.data[self.pos : self.pos + size]
        if len(raw) != size:
            raise ModelFormatError("truncated array payload")
        self.pos += size
        return name, np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    def take_json(self) -> dict:
        length = self.take("I")
        raw = self.data[self.pos : self.pos + length]
        if len(raw) != length:
            raise ModelFormatError("truncated metadata")
        self.pos += length
        return json.loads(raw.decode("utf-8"))


def load_model(path) -> "FactorModel | LanguageModel":
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8:
        raise ModelFormatError("file too short to be a model")
    payload, stored = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(payload) != stored:
        raise ModelFormatError("checksum mismatch; file corrupted")
    reader = _Reader(payload)
    if reader.data[:4] != MAGIC:
        raise ModelFormatError(f"bad magic {reader.data[:4]!r}")
    reader.pos = 4
    version = reader.take("I")
    if version != VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    mode_tag = reader.take("B")
    mode = TAG_MODES.get(mode_tag)
    if mode is None:
        raise ModelFormatError(f"unknown mode tag {mode_tag}")
    vocab_size = reader.take("I")
    d = reader.take("I")
    enc_kind = KIND_ENCS.get(reader.take("B"))
    input_dim, hidden_dim, layers, window_size = reader.take("IIII")
    dropout = reader.take("d")
    alpha = reader.take("d")
    k = reader.take("I")
    seed = reader.take("q")
    nce_log_z = reader.take("d")
    vocab_tag = reader.take("B")

    if mode == "factors":
        if vocab_tag != 0:
            raise ModelFormatError("factor model requires a label-pair vocabulary block")
        x_labels = [reader.take_str() for _ in range(reader.take("I"))]
        y_labels = [reader.take_str() for _ in range(reader.take("I"))]
        arrays = dict(reader.take_array() for _ in range(reader.take("I")))
        metadata = reader.take_json()
        return FactorModel(
            x_labels=x_labels,
            y_labels=y_labels,
            factors=FactorPair(x_table=arrays["x_table"], y_table=arrays["y_table"]),
            k=k,
            alpha=alpha,
            seed=seed,
            metadata=metadata,
        )

    if vocab_tag != 1:
        raise ModelFormatError("language model requires a token-count vocabulary block")
    n_tokens = reader.take("I")
    if n_tokens != vocab_size:
        raise ModelFormatError("vocabulary block size disagrees with header")
    itos, counts = [], []
    for _ in range(n_tokens):
        itos.append(reader.take_str())
        counts.append(reader.take("Q"))
    vocab = Vocabulary(itos=itos, counts=np.asarray(counts, dtype=np.int64))
    arrays = dict(reader.take_array() for _ in range(reader.take("I")))
    metadata = reader.take_json()
    spec = EncoderSpec(
        kind=enc_kind,
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        layers=layers,
        window_size=window_size,
        dropout=dropout,
    )
    enc_params = {
        name[len("enc."):]: arr for name, arr in arrays.items() if name.startswith("enc.")
    }
    model = LanguageModel(
        mode=mode,
        vocab=vocab,
        noise=build_noise(vocab.counts, alpha),
        k=k,
        enc_spec=spec,
        input_embed=arrays["input_embed"],
        enc_params=enc_params,
        word_table=arrays["word_table"],
        bias=arrays.get("bias"),
        nce_log_z=nce_log_z,
        metadata=metadata,
    )
    if model.word_table.shape != (vocab_size, d):
        raise ModelFormatError("word table shape disagrees with header")
    return model
