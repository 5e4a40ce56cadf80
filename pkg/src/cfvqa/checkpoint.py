"""Checkpoint format: a text manifest plus a binary payload.

<prefix>.manifest starts with the magic line, then one line per tensor
(`tensor <name> <d0xd1x...> <byte offset>`), then a single `meta <json>` line
carrying vocabularies, dimensions, and fusion wiring.
<prefix>.bin is the concatenated row-major little-endian float32 payload.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import Vocab
from .encoders import EncoderDims, EncoderParams
from .model import Model, ModelParams

MAGIC = "CFVQA-CKPT-1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: Model, prefix) -> tuple[Path, Path]:
    prefix = Path(prefix)
    named = model.params.named()
    lines = [MAGIC]
    payload = bytearray()
    for name in sorted(named):
        t = named[name]
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        shape = "x".join(str(d) for d in arr.shape)
        lines.append(f"tensor {name} {shape} {len(payload)}")
        payload.extend(arr.tobytes())
    meta = {
        "dims": model.dims.to_dict(),
        "fusion": model.fusion,
        "bias_mode": model.bias_mode,
        "n_answers": model.n_answers,
        "q_vocab": model.q_vocab.index_to_token,
        "a_vocab": model.a_vocab.index_to_token,
    }
    lines.append("meta " + json.dumps(meta, sort_keys=True, ensure_ascii=False))

    from .config import atomic_write_bytes, atomic_write_text

    manifest_path = prefix.with_suffix(".manifest")
    payload_path = prefix.with_suffix(".bin")
    atomic_write_text(manifest_path, "\n".join(lines) + "\n")
    atomic_write_bytes(payload_path, bytes(payload))
    return manifest_path, payload_path


def load_checkpoint(prefix) -> Model:
    prefix = Path(prefix)
    manifest_path = prefix.with_suffix(".manifest")
    payload_path = prefix.with_suffix(".bin")
    if not manifest_path.exists() or not payload_path.exists():
        raise CheckpointError(f"missing checkpoint pair at {prefix}(.manifest/.bin)")
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise CheckpointError(f"{manifest_path}: bad magic, expected {MAGIC!r}")
    payload = payload_path.read_bytes()

    tensors: dict[str, T.Tensor] = {}
    meta = None
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        if line.startswith("tensor "):
            _, name, shape_s, offset_s = line.split(" ", 3)
            shape = tuple(int(d) for d in shape_s.split("x")) if shape_s else ()
            count = int(np.prod(shape)) if shape else 1
            offset = int(offset_s)
            arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
            # copy: frombuffer views are read-only, parameters must be writable
            tensors[name] = T.Tensor(arr.reshape(shape).copy(), requires_grad=True, name=name)
        elif line.startswith("meta "):
            meta = json.loads(line[len("meta "):])
        else:
            raise CheckpointError(f"{manifest_path}: unrecognized line {line[:40]!r}")
    if meta is None:
        raise CheckpointError(f"{manifest_path}: missing meta line")

    dims = EncoderDims.from_dict(meta["dims"])
    need = ["enc.embedding", "enc.question.w", "enc.question.b", "enc.image.w",
            "enc.image.b", "enc.fuse.w", "enc.fuse.b", "head_q.w", "head_q.b",
            "head_v.w", "head_v.b", "head_k.w", "head_k.b", "q_star", "v_star"]
    missing = [n for n in need if n not in tensors]
    if missing:
        raise CheckpointError(f"{manifest_path}: missing tensors {missing}")
    enc = EncoderParams(tensors["enc.embedding"], tensors["enc.question.w"],
                        tensors["enc.question.b"], tensors["enc.image.w"],
                        tensors["enc.image.b"], tensors["enc.fuse.w"],
                        tensors["enc.fuse.b"], dims)
    params = ModelParams(enc, tensors["head_q.w"], tensors["head_q.b"],
                         tensors["head_v.w"], tensors["head_v.b"],
                         tensors["head_k.w"], tensors["head_k.b"],
                         tensors["q_star"], tensors["v_star"])
    q_vocab = Vocab({t: i for i, t in enumerate(meta["q_vocab"])}, list(meta["q_vocab"]))
    a_vocab = Vocab({t: i for i, t in enumerate(meta["a_vocab"])}, list(meta["a_vocab"]))
    return Model(params=params, q_vocab=q_vocab, a_vocab=a_vocab,
                 fusion=meta["fusion"], bias_mode=meta.get("bias_mode", "question"))
