"""Question, image, and fused-knowledge encoders.

The question encoder is a bag of embeddings (mean-pooled) through one relu
layer; the image encoder takes either a precomputed feature vector or a
32x32 grayscale grid through one relu layer; fusion concatenates both
encodings through one relu layer. Weights are seeded uniform in
[-1/sqrt(fan_in), 1/sqrt(fan_in)].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import Vocab
from .rng import Splitmix64


class ImageInputError(ValueError):
    pass


@dataclass
class EncoderDims:
    d_e: int = 64
    d_q: int = 128
    d_v: int = 128
    d_k: int = 128
    image_input_dim: int = 1024  # 32*32 pixels; set to a feature length when using feature files

    def to_dict(self) -> dict:
        return {"d_e": self.d_e, "d_q": self.d_q, "d_v": self.d_v,
                "d_k": self.d_k, "image_input_dim": self.image_input_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderDims":
        return cls(**d)


def linear_init(rng: Splitmix64, out_dim: int, in_dim: int, name: str) -> tuple[T.Tensor, T.Tensor]:
    bound = 1.0 / np.sqrt(in_dim)
    w = T.Tensor(rng.uniform(-bound, bound, out_dim * in_dim).reshape(out_dim, in_dim),
                 requires_grad=True, name=f"{name}.w")
    b = T.Tensor(rng.uniform(-bound, bound, out_dim), requires_grad=True, name=f"{name}.b")
    return w, b


@dataclass
class EncoderParams:
    embedding: T.Tensor       # |V_q| x d_e
    w_q: T.Tensor
    b_q: T.Tensor
    w_v: T.Tensor
    b_v: T.Tensor
    w_f: T.Tensor
    b_f: T.Tensor
    dims: EncoderDims

    def named(self) -> dict[str, T.Tensor]:
        return {
            "enc.embedding": self.embedding,
            "enc.question.w": self.w_q, "enc.question.b": self.b_q,
            "enc.image.w": self.w_v, "enc.image.b": self.b_v,
            "enc.fuse.w": self.w_f, "enc.fuse.b": self.b_f,
        }


def init_encoder_params(q_vocab_size: int, dims: EncoderDims, rng: Splitmix64) -> EncoderParams:
    bound = 1.0 / np.sqrt(dims.d_e)
    embedding = T.Tensor(
        rng.uniform(-bound, bound, q_vocab_size * dims.d_e).reshape(q_vocab_size, dims.d_e),
        requires_grad=True, name="enc.embedding")
    w_q, b_q = linear_init(rng, dims.d_q, dims.d_e, "enc.question")
    w_v, b_v = linear_init(rng, dims.d_v, dims.image_input_dim, "enc.image")
    w_f, b_f = linear_init(rng, dims.d_k, dims.d_q + dims.d_v, "enc.fuse")
    return EncoderParams(embedding, w_q, b_q, w_v, b_v, w_f, b_f, dims)


def encode_question(token_ids, params: EncoderParams) -> T.Tensor:
    """Mean of token embeddings through one relu layer; order-invariant."""
    pooled = T.embed_mean(params.embedding, token_ids)
    return T.relu(T.add(T.matmul(params.w_q, pooled), params.b_q))


def encode_image(x, params: EncoderParams) -> T.Tensor:
    """One relu layer over a flat image vector (pixels or features)."""
    vec = x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x, dtype=np.float32).reshape(-1))
    if vec.shape != (params.dims.image_input_dim,):
        raise T.ShapeError(
            f"image input has shape {vec.shape}, expected ({params.dims.image_input_dim},)")
    return T.relu(T.add(T.matmul(params.w_v, vec), params.b_v))


def fuse(q: T.Tensor, v: T.Tensor, params: EncoderParams) -> T.Tensor:
    """Multimodal knowledge: relu layer over the concatenated encodings."""
    return T.relu(T.add(T.matmul(params.w_f, T.concat(q, v)), params.b_f))


def tokens_to_ids(tokens, vocab: Vocab) -> list[int]:
    return [vocab.index(t) for t in tokens]


# --- image sources -----------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Binary 8-bit PGM (P5) reader; returns floats in [0, 1], shape (H, W)."""
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    i = 0
    while len(fields) < 4:
        while i < len(raw) and raw[i:i + 1].isspace():
            i += 1
        if i < len(raw) and raw[i:i + 1] == b"#":
            while i < len(raw) and raw[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j:j + 1].isspace():
            j += 1
        fields.append(raw[i:j])
        i = j
    if fields[0] != b"P5":
        raise ImageInputError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval > 255:
        raise ImageInputError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    i += 1  # single whitespace byte after maxval
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=i)
    return (pixels.reshape(height, width).astype(np.float32) / np.float32(maxval))


def downscale_area(img: np.ndarray, out_h: int = 32, out_w: int = 32) -> np.ndarray:
    """Exact area-average downscale, handling fractional bin overlap."""
    def weights(n_in: int, n_out: int) -> np.ndarray:
        w = np.zeros((n_out, n_in), dtype=np.float64)
        step = n_in / n_out
        for o in range(n_out):
            lo, hi = o * step, (o + 1) * step
            for p in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
                overlap = min(hi, p + 1) - max(lo, p)
                if overlap > 0:
                    w[o, p] = overlap / step
        return w

    wh = weights(img.shape[0], out_h)
    ww = weights(img.shape[1], out_w)
    return (wh @ img.astype(np.float64) @ ww.T).astype(np.float32)


def load_features(path) -> dict[str, np.ndarray]:
    """Feature file: JSONL of {image_ref, vector}."""
    feats: dict[str, np.ndarray] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        feats[rec["image_ref"]] = np.asarray(rec["vector"], dtype=np.float32)
    return feats


def write_features(feats: dict[str, np.ndarray], path) -> None:
    from .config import atomic_write_text

    lines = []
    for ref in feats:
        vec = [float(x) for x in np.asarray(feats[ref], dtype=np.float32)]
        lines.append(json.dumps({"image_ref": ref, "vector": vec}))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


@dataclass
class ImageProvider:
    """Resolves an image_ref to a flat float32 vector.

    Feature vectors win when present; otherwise the ref is read as a PGM file
    under pixel_root, downscaled to 32x32, and flattened.
    """

    features: dict[str, np.ndarray] = field(default_factory=dict)
    pixel_root: str | None = None

    def get(self, image_ref: str) -> np.ndarray:
        if image_ref in self.features:
            return self.features[image_ref]
        if self.pixel_root is not None:
            path = Path(self.pixel_root) / image_ref
            if path.exists():
                return downscale_area(read_pgm(path)).reshape(-1)
        raise ImageInputError(f"no feature vector or image file for image_ref {image_ref!r}")
