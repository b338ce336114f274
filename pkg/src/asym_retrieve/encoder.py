"""Bag-of-tokens encoders: tokenization, forward pass, gradients, MRL truncation.

An encoder is a hashing bag-of-tokens model: token ids index an embedding
table, token embeddings are mean-pooled, pushed through a small MLP with tanh
between layers, and the output is L2-normalized. Everything runs in float64.
The per-batch arithmetic lives in :mod:`asym_retrieve._kernels`; this module
owns parameter layout, checkpoints, and the layer orchestration.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, fileio
from .errors import DegenerateEmbeddingError, ShapeMismatchError

PAD_ID = 0

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


def tokenize(text: str, vocab_size: int) -> np.ndarray:
    """Hash whitespace-split lowercase tokens into ids below ``vocab_size``.

    Empty or whitespace-only text maps to the single reserved pad id. The
    hash is FNV-1a (64-bit) over the UTF-8 token bytes, reduced modulo the
    vocabulary size, so ids are stable across processes and platforms.
    """
    if vocab_size < 2:
        raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
    tokens = text.lower().split()
    if not tokens:
        return np.array([PAD_ID], dtype=np.int64)
    ids = [_fnv1a64(tok.encode("utf-8")) % vocab_size for tok in tokens]
    return np.array(ids, dtype=np.int64)


class TokenBatch:
    """Ragged batch of token-id sequences as flat ids plus row offsets."""

    __slots__ = ("flat_ids", "offsets")

    def __init__(self, flat_ids: np.ndarray, offsets: np.ndarray):
        self.flat_ids = np.ascontiguousarray(flat_ids, dtype=np.int64)
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)

    @classmethod
    def from_seqs(cls, seqs) -> "TokenBatch":
        if len(seqs) == 0:
            raise ValueError("empty batch")
        lengths = [len(s) for s in seqs]
        if min(lengths) == 0:
            raise ValueError("token sequences must be non-empty")
        offsets = np.zeros(len(seqs) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        flat = np.concatenate([np.asarray(s, dtype=np.int64) for s in seqs])
        return cls(flat, offsets)

    def __len__(self) -> int:
        return len(self.offsets) - 1


@dataclass
class EncoderParams:
    """Trainable weights of one encoder (student or teacher)."""

    role: str
    vocab_size: int
    embed_table: np.ndarray
    mlp_layers: list  # [(weight (din, dout), bias (dout,)), ...]
    seed: int = 0
    stage_tag: str = "init"

    def __post_init__(self):
        self.validate()

    @property
    def hidden_dim(self) -> int:
        return self.embed_table.shape[1]

    @property
    def out_dim(self) -> int:
        return self.mlp_layers[-1][0].shape[1]

    @property
    def dims(self) -> list:
        return [self.hidden_dim] + [w.shape[1] for w, _ in self.mlp_layers]

    def validate(self) -> None:
        if self.role not in ("student", "teacher"):
            raise ValueError(f"role must be student or teacher, got {self.role!r}")
        if self.embed_table.ndim != 2 or self.embed_table.shape[0] != self.vocab_size:
            raise ShapeMismatchError(
                f"embed_table shape {self.embed_table.shape} does not match "
                f"vocab_size {self.vocab_size}"
            )
        if not self.mlp_layers:
            raise ShapeMismatchError("encoder needs at least one MLP layer")
        prev = self.hidden_dim
        for i, (w, b) in enumerate(self.mlp_layers):
            if w.ndim != 2 or w.shape[0] != prev:
                raise ShapeMismatchError(
                    f"layer {i} weight shape {w.shape} does not compose with "
                    f"input width {prev}"
                )
            if b.shape != (w.shape[1],):
                raise ShapeMismatchError(
                    f"layer {i} bias shape {b.shape} does not match width {w.shape[1]}"
                )
            prev = w.shape[1]

    def arrays(self) -> list:
        """All parameter arrays in declaration order."""
        out = [self.embed_table]
        for w, b in self.mlp_layers:
            out.extend((w, b))
        return out

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            role=self.role,
            vocab_size=self.vocab_size,
            embed_table=self.embed_table.copy(),
            mlp_layers=[(w.copy(), b.copy()) for w, b in self.mlp_layers],
            seed=self.seed,
            stage_tag=self.stage_tag,
        )

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass
class GradientBundle:
    """Per-parameter gradients, shape-congruent with an EncoderParams."""

    embed_table: np.ndarray
    mlp_layers: list

    def arrays(self) -> list:
        out = [self.embed_table]
        for gw, gb in self.mlp_layers:
            out.extend((gw, gb))
        return out


def init_encoder(role: str, vocab_size: int, hidden_dim: int, out_dim: int,
                 seed: int, stage_tag: str = "init") -> EncoderParams:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init of a 2-layer MLP encoder."""
    rng = np.random.default_rng(seed)

    def draw(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    embed = draw(hidden_dim, (vocab_size, hidden_dim))
    w1 = draw(hidden_dim, (hidden_dim, hidden_dim))
    b1 = draw(hidden_dim, (hidden_dim,))
    w2 = draw(hidden_dim, (hidden_dim, out_dim))
    b2 = draw(hidden_dim, (out_dim,))
    return EncoderParams(
        role=role,
        vocab_size=vocab_size,
        embed_table=embed,
        mlp_layers=[(w1, b1), (w2, b2)],
        seed=seed,
        stage_tag=stage_tag,
    )


def save_checkpoint(params: EncoderParams, path) -> None:
    header = {
        "role": params.role,
        "vocab_size": params.vocab_size,
        "dims": params.dims,
        "seed": params.seed,
        "stage_tag": params.stage_tag,
    }
    fileio.write_framed(path, header, params.arrays())


def load_checkpoint(path) -> EncoderParams:
    header, flat = fileio.read_framed(path)
    dims = header["dims"]
    vocab = header["vocab_size"]
    shapes = [(vocab, dims[0])]
    for din, dout in zip(dims[:-1], dims[1:]):
        shapes.extend(((din, dout), (dout,)))
    need = sum(int(np.prod(s)) for s in shapes)
    if flat.size != need:
        raise ValueError(f"{path}: blob holds {flat.size} floats, header implies {need}")
    arrays, pos = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(np.ascontiguousarray(flat[pos:pos + size].reshape(shape)))
        pos += size
    layers = [(arrays[i], arrays[i + 1]) for i in range(1, len(arrays), 2)]
    return EncoderParams(
        role=header["role"],
        vocab_size=vocab,
        embed_table=arrays[0],
        mlp_layers=layers,
        seed=header["seed"],
        stage_tag=header["stage_tag"],
    )


def params_digest(params: EncoderParams) -> str:
    """SHA-256 over the checkpoint serialization; identifies exact weights."""
    h = hashlib.sha256()
    h.update(repr((params.role, params.vocab_size, params.dims)).encode())
    for a in params.arrays():
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def _check_ids(params: EncoderParams, batch: TokenBatch) -> None:
    if batch.flat_ids.size and (
        batch.flat_ids.min() < 0 or batch.flat_ids.max() >= params.vocab_size
    ):
        raise ValueError("token ids out of range for vocab_size")


def forward_batch(params: EncoderParams, batch: TokenBatch):
    """Encode a batch; returns (unit-row embeddings (B, out_dim), cache).

    The cache holds the per-layer activations needed by ``backward_batch``.
    """
    params.validate()
    _check_ids(params, batch)
    k = _kernels.get_backend()
    acts = [k.mean_pool(params.embed_table, batch.flat_ids, batch.offsets)]
    x = acts[0]
    last = len(params.mlp_layers) - 1
    for i, (w, b) in enumerate(params.mlp_layers):
        x = k.affine(x, w, b)
        if i < last:
            x = k.tanh(x)
            acts.append(x)
    out, norms = k.normalize_rows(x)
    if np.any(norms == 0.0):
        raise DegenerateEmbeddingError(
            "encoder produced an exactly-zero vector before normalization"
        )
    return out, (acts, out, norms)


def backward_batch(params: EncoderParams, batch: TokenBatch,
                   upstream: np.ndarray, cache=None) -> GradientBundle:
    """Gradient of sum_b upstream[b] . encode(params, batch[b]) w.r.t. params."""
    if cache is None:
        _, cache = forward_batch(params, batch)
    acts, out, norms = cache
    upstream = np.ascontiguousarray(upstream, dtype=np.float64)
    if upstream.shape != out.shape:
        raise ShapeMismatchError(
            f"upstream shape {upstream.shape} does not match output {out.shape}"
        )
    if not np.all(np.isfinite(upstream)):
        raise ValueError("upstream gradient has non-finite entries")
    k = _kernels.get_backend()
    g = k.normalize_backward(out, norms, upstream)
    layer_grads = [None] * len(params.mlp_layers)
    last = len(params.mlp_layers) - 1
    for i in range(last, -1, -1):
        if i < last:
            g = k.tanh_backward(acts[i + 1], g)
        w, _ = params.mlp_layers[i]
        g, gw, gb = k.affine_backward(acts[i], w, g)
        layer_grads[i] = (gw, gb)
    gtable = k.mean_pool_backward(g, batch.flat_ids, batch.offsets, params.vocab_size)
    return GradientBundle(embed_table=gtable, mlp_layers=layer_grads)


def encode(params: EncoderParams, ids) -> np.ndarray:
    """Deterministic unit-norm embedding of one token sequence."""
    out, _ = forward_batch(params, TokenBatch.from_seqs([ids]))
    return out[0]


def encode_batch(params: EncoderParams, inputs) -> np.ndarray:
    """Embeddings for a list of token sequences, one per row."""
    out, _ = forward_batch(params, TokenBatch.from_seqs(inputs))
    return out


def backward(params: EncoderParams, ids, upstream: np.ndarray) -> GradientBundle:
    """Gradient of upstream . encode(params, ids) w.r.t. every parameter."""
    batch = TokenBatch.from_seqs([ids])
    return backward_batch(params, batch, np.asarray(upstream, dtype=np.float64)[None, :])


def encode_text(params: EncoderParams, text: str) -> np.ndarray:
    return encode(params, tokenize(text, params.vocab_size))


def mrl_truncate(e: np.ndarray, m: int) -> np.ndarray:
    """Keep the first m components and re-normalize to unit length."""
    e = np.asarray(e, dtype=np.float64)
    if m < 1 or m > e.shape[-1]:
        raise ValueError(f"truncation dim {m} outside [1, {e.shape[-1]}]")
    head = e[:m]
    norm = np.linalg.norm(head)
    if norm == 0.0:
        raise DegenerateEmbeddingError(f"zero vector after truncation to {m} dims")
    return head / norm


def mrl_truncate_rows(x: np.ndarray, m: int):
    """Row-wise truncate+renormalize; returns (rows (B, m), prefix norms (B,))."""
    if m < 1 or m > x.shape[1]:
        raise ValueError(f"truncation dim {m} outside [1, {x.shape[1]}]")
    head = np.ascontiguousarray(x[:, :m])
    out, norms = _kernels.get_backend().normalize_rows(head)
    if np.any(norms == 0.0):
        raise DegenerateEmbeddingError(f"zero vector after truncation to {m} dims")
    return out, norms


def mrl_backward(trunc_out: np.ndarray, prefix_norms: np.ndarray,
                 upstream: np.ndarray, full_dim: int) -> np.ndarray:
    """Chain upstream grads on truncated rows back to the full-width rows."""
    g_head = _kernels.get_backend().normalize_backward(
        trunc_out, prefix_norms, np.ascontiguousarray(upstream, dtype=np.float64)
    )
    if trunc_out.shape[1] == full_dim:
        return g_head
    g_full = np.zeros((trunc_out.shape[0], full_dim), dtype=np.float64)
    g_full[:, : trunc_out.shape[1]] = g_head
    return g_full
