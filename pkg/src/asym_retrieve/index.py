"""Offline document index: exact brute-force search, persistence, latency bench.

Search is exact by design: approximate structures would add nondeterminism
that contaminates ablation measurements, and desk-scale corpora stay small
enough for a full similarity scan. Ties break by ascending doc id.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .encoder import (
    EncoderParams,
    TokenBatch,
    encode,
    forward_batch,
    mrl_truncate_rows,
    params_digest,
    tokenize,
)
from .errors import ShapeMismatchError
from .fileio import read_framed, write_framed

_BUILD_CHUNK = 1024


@dataclass
class VectorIndex:
    doc_ids: list
    matrix: np.ndarray  # (n_docs, dim), unit rows
    dim: int
    builder_tag: str
    _tie_rank: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.matrix.shape != (len(self.doc_ids), self.dim):
            raise ShapeMismatchError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{len(self.doc_ids)} ids x dim {self.dim}"
            )
        order = np.argsort(np.asarray(self.doc_ids), kind="stable")
        rank = np.empty(len(self.doc_ids), dtype=np.int64)
        rank[order] = np.arange(len(self.doc_ids))
        self._tie_rank = rank

    def __len__(self) -> int:
        return len(self.doc_ids)


def build_index(teacher: EncoderParams, docs, mrl_dim: int) -> VectorIndex:
    """Embed every document offline with the teacher, truncated to mrl_dim."""
    if not docs:
        raise ValueError("empty corpus")
    if mrl_dim > teacher.out_dim:
        raise ValueError(f"mrl_dim {mrl_dim} exceeds teacher out_dim {teacher.out_dim}")
    rows = np.empty((len(docs), mrl_dim))
    for start in range(0, len(docs), _BUILD_CHUNK):
        chunk = docs[start:start + _BUILD_CHUNK]
        seqs = [tokenize(d.text, teacher.vocab_size) for d in chunk]
        full, _ = forward_batch(teacher, TokenBatch.from_seqs(seqs))
        rows[start:start + len(chunk)], _ = mrl_truncate_rows(full, mrl_dim)
    tag = f"{params_digest(teacher)[:16]}:{mrl_dim}"
    return VectorIndex([d.id for d in docs], rows, mrl_dim, tag)


def search_by_embedding(index: VectorIndex, query_emb: np.ndarray, top_k: int):
    """Exact top-k by descending cosine, ties by ascending doc id."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    query_emb = np.asarray(query_emb, dtype=np.float64)
    if query_emb.shape != (index.dim,):
        raise ShapeMismatchError(
            f"query dim {query_emb.shape} does not match index dim {index.dim}"
        )
    scores = index.matrix @ query_emb
    order = np.lexsort((index._tie_rank, -scores))[: min(top_k, len(index))]
    return [(index.doc_ids[i], float(scores[i])) for i in order]


def search(index: VectorIndex, student: EncoderParams, query_text: str, top_k: int):
    """Online path: tokenize + encode the query with the student, then scan."""
    if student.out_dim != index.dim:
        raise ShapeMismatchError(
            f"student out_dim {student.out_dim} does not match index dim {index.dim}"
        )
    emb = encode(student, tokenize(query_text, student.vocab_size))
    return search_by_embedding(index, emb, top_k)


def save_index(index: VectorIndex, path) -> None:
    header = {
        "dim": index.dim,
        "count": len(index),
        "builder_tag": index.builder_tag,
        "doc_ids": list(index.doc_ids),
    }
    write_framed(path, header, [index.matrix])


def load_index(path) -> VectorIndex:
    header, flat = read_framed(path)
    count, dim = header["count"], header["dim"]
    if flat.size != count * dim:
        raise ValueError(f"{path}: blob holds {flat.size} floats, header implies {count * dim}")
    matrix = np.ascontiguousarray(flat.reshape(count, dim))
    return VectorIndex(header["doc_ids"], matrix, dim, header["builder_tag"])


def bench_latency(student: EncoderParams, index: VectorIndex, queries,
                  repetitions: int = 5) -> dict:
    """Wall-clock cost of the online path (tokenize + encode + search).

    Runs one untimed warmup pass, then ``repetitions`` timed passes over all
    queries. QPS is the median of the per-pass rates; latency percentiles are
    over the pooled per-query timings.
    """
    if repetitions < 3:
        raise ValueError("repetitions must be >= 3")
    if not queries:
        raise ValueError("empty query set")
    for q in queries:
        search(index, student, q, 10)
    per_pass_qps = []
    latencies = []
    for _ in range(repetitions):
        pass_total = 0.0
        for q in queries:
            t0 = time.perf_counter()
            search(index, student, q, 10)
            dt = time.perf_counter() - t0
            pass_total += dt
            latencies.append(dt)
        per_pass_qps.append(len(queries) / pass_total)
    lat_ms = np.array(latencies) * 1e3
    return {
        "qps": float(np.median(per_pass_qps)),
        "p50_ms": float(np.percentile(lat_ms, 50)),
        "p99_ms": float(np.percentile(lat_ms, 99)),
        "repetitions": repetitions,
        "n_queries": len(queries),
    }
