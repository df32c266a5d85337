"""Binary checkpoints for model parameters, optimizer state, and metadata.

Layout (little-endian throughout):

    bytes 0..4    magic "FCQC"
    bytes 4..8    format version, u32
    bytes 8..16   header length in bytes, u64
    header        UTF-8 JSON: kind, configs, vocabulary, class catalog,
                  iteration, Adam step count, rng state, tensor manifest
    payload       float32 tensors, contiguous at their manifest offsets

The manifest lists (name, shape, offset-in-payload-bytes) per tensor, sorted
by name. Offsets must be non-overlapping and in-bounds; violations raise
distinct error types so callers can tell a wrong file from a damaged one.
Optimizer and rng state ride along so a resumed run is bit-identical to an
uninterrupted one.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ClassCatalog, Vocab
from .factorcell import FactorCellParams, ModelConfig
from .instances import ENC_PREFIX, HeadConfig, InstanceHeadParams
from .tensors import Rng
from .training import AdamState

MAGIC = b"FCQC"
VERSION = 1
KIND_LM = "lm"
KIND_HEAD = "instance_head"


class CheckpointError(RuntimeError):
    """Base class for unreadable or inconsistent checkpoint files."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class CorruptManifestError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


def _pack_arrays(arrays: dict[str, np.ndarray]):
    manifest, blobs, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    return manifest, b"".join(blobs)


def _write(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    manifest, payload = _pack_arrays(arrays)
    header = dict(meta)
    header["kind"] = kind
    header["manifest"] = manifest
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def _read(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint file (bad magic)")
    if len(data) < 16:
        raise TruncatedPayloadError(f"{path}: file ends inside the fixed header")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise VersionMismatchError(
            f"{path}: format version {version}, this build reads {VERSION}"
        )
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise TruncatedPayloadError(f"{path}: file ends inside the JSON header")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptManifestError(f"{path}: unparseable header ({exc})") from exc
    manifest = header.get("manifest")
    if not isinstance(manifest, list):
        raise CorruptManifestError(f"{path}: header carries no tensor manifest")

    payload_start = 16 + hlen
    payload_len = len(data) - payload_start
    spans = []
    for entry in manifest:
        try:
            name, shape, offset = entry["name"], entry["shape"], entry["offset"]
        except (TypeError, KeyError) as exc:
            raise CorruptManifestError(f"{path}: manifest entry missing fields") from exc
        size = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if offset < 0:
            raise CorruptManifestError(f"{path}: tensor {name!r} has negative offset")
        spans.append((offset, offset + size, name, tuple(shape)))
    spans.sort()
    for (_, end_a, name_a, _), (start_b, _, name_b, _) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise CorruptManifestError(
                f"{path}: tensors {name_a!r} and {name_b!r} overlap in the payload"
            )
    arrays = {}
    for offset, end, name, shape in spans:
        if end > payload_len:
            raise TruncatedPayloadError(
                f"{path}: tensor {name!r} extends past end of file"
            )
        flat = np.frombuffer(data, dtype="<f4", count=(end - offset) // 4,
                             offset=payload_start + offset)
        arrays[name] = flat.reshape(shape).astype(np.float32)
    return header, arrays


def _adam_arrays(state: AdamState | None) -> dict[str, np.ndarray]:
    if state is None:
        return {}
    out = {f"adam.m.{k}": v for k, v in state.m.items()}
    out.update({f"adam.v.{k}": v for k, v in state.v.items()})
    return out


def _adam_from(header: dict, arrays: dict[str, np.ndarray]) -> AdamState | None:
    if header.get("adam_t") is None:
        return None
    m = {k[len("adam.m.") :]: v for k, v in arrays.items() if k.startswith("adam.m.")}
    v = {k[len("adam.v.") :]: v for k, v in arrays.items() if k.startswith("adam.v.")}
    return AdamState(t=int(header["adam_t"]), m=m, v=v)


def _meta(model_cfg, train_cfg, vocab, catalog, iteration, adam_state, rng) -> dict:
    return {
        "model_config": model_cfg.to_dict(),
        "train_config": train_cfg.to_dict() if train_cfg is not None else None,
        "vocab": list(vocab.tokens),
        "catalog": list(catalog.classes) if catalog is not None else None,
        "iteration": int(iteration),
        "adam_t": None if adam_state is None else int(adam_state.t),
        "rng_state": rng.get_state() if rng is not None else None,
    }


@dataclass
class LmCheckpoint:
    params: FactorCellParams
    vocab: Vocab
    catalog: ClassCatalog | None
    train_config: dict | None
    adam_state: AdamState | None
    rng_state: dict | None
    iteration: int

    def restore_rng(self) -> Rng:
        if self.rng_state is None:
            raise CheckpointError("checkpoint carries no rng state")
        rng = Rng(0)
        rng.set_state(self.rng_state)
        return rng


@dataclass
class HeadCheckpoint:
    params: InstanceHeadParams
    vocab: Vocab
    catalog: ClassCatalog | None
    train_config: dict | None
    adam_state: AdamState | None
    rng_state: dict | None
    iteration: int

    def restore_rng(self) -> Rng:
        if self.rng_state is None:
            raise CheckpointError("checkpoint carries no rng state")
        rng = Rng(0)
        rng.set_state(self.rng_state)
        return rng


def save_lm(
    path,
    params: FactorCellParams,
    vocab: Vocab,
    *,
    catalog: ClassCatalog | None = None,
    train_cfg=None,
    adam_state: AdamState | None = None,
    rng: Rng | None = None,
    iteration: int = 0,
) -> None:
    arrays = {f"params.{k}": v for k, v in params.to_dict().items()}
    arrays.update(_adam_arrays(adam_state))
    _write(path, KIND_LM, _meta(params.cfg, train_cfg, vocab, catalog,
                                iteration, adam_state, rng), arrays)


def load_lm(path) -> LmCheckpoint:
    header, arrays = _read(path)
    if header.get("kind") != KIND_LM:
        raise CheckpointError(
            f"{path}: expected a {KIND_LM!r} checkpoint, found {header.get('kind')!r}"
        )
    cfg = ModelConfig(**header["model_config"])
    fields = {k: arrays[f"params.{k}"] for k in FactorCellParams.FIELDS}
    params = FactorCellParams(cfg=cfg, **fields)
    return LmCheckpoint(
        params=params,
        vocab=Vocab(tuple(header["vocab"])),
        catalog=ClassCatalog(tuple(header["catalog"])) if header.get("catalog") else None,
        train_config=header.get("train_config"),
        adam_state=_adam_from(header, arrays),
        rng_state=header.get("rng_state"),
        iteration=int(header.get("iteration", 0)),
    )


def save_head(
    path,
    params: InstanceHeadParams,
    vocab: Vocab,
    catalog: ClassCatalog,
    *,
    train_cfg=None,
    adam_state: AdamState | None = None,
    rng: Rng | None = None,
    iteration: int = 0,
) -> None:
    arrays = {f"params.{k}": v for k, v in params.to_dict().items()}
    arrays.update(_adam_arrays(adam_state))
    _write(path, KIND_HEAD, _meta(params.cfg, train_cfg, vocab, catalog,
                                  iteration, adam_state, rng), arrays)


def load_head(path) -> HeadCheckpoint:
    header, arrays = _read(path)
    if header.get("kind") != KIND_HEAD:
        raise CheckpointError(
            f"{path}: expected a {KIND_HEAD!r} checkpoint, found {header.get('kind')!r}"
        )
    cfg = HeadConfig(**header["model_config"])
    enc_cfg = ModelConfig(
        e=cfg.e, h=cfg.h, r=1, m=1, feat_dim=1,
        vocab_size=cfg.vocab_size, max_len=cfg.max_len,
    )
    enc_fields = {
        k: arrays[f"params.{ENC_PREFIX}{k}"] for k in FactorCellParams.FIELDS
    }
    params = InstanceHeadParams(
        cfg=cfg,
        encoder=FactorCellParams(cfg=enc_cfg, **enc_fields),
        dense_W=arrays["params.dense_W"],
        dense_b=arrays["params.dense_b"],
    )
    return HeadCheckpoint(
        params=params,
        vocab=Vocab(tuple(header["vocab"])),
        catalog=ClassCatalog(tuple(header["catalog"])) if header.get("catalog") else None,
        train_config=header.get("train_config"),
        adam_state=_adam_from(header, arrays),
        rng_state=header.get("rng_state"),
        iteration=int(header.get("iteration", 0)),
    )
