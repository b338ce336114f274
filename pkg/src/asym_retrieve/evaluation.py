"""Retrieval, similarity, and agreement metrics plus the benchmark runner.

Qrels are a mapping (query_id, doc_id) -> {0, 1}; missing pairs count as
non-relevant. Gains are binary and queries without any relevant document are
skipped (and counted) by the runner rather than averaged in as zeros.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .encoder import TokenBatch, forward_batch, mrl_truncate_rows, tokenize
from .errors import ZeroVarianceError
from .index import build_index, search


@dataclass
class RankedList:
    query_id: str
    doc_ids: list
    scores: list


def _relevant_set(qrels, query_id: str) -> set:
    return {d for (q, d), label in qrels.items() if q == query_id and label == 1}


def ndcg_at_k(ranking: RankedList, qrels, k: int) -> float:
    """Binary-gain nDCG with 1/log2(rank+1) discounts, ranks starting at 1."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = _relevant_set(qrels, ranking.query_id)
    if not relevant:
        raise ValueError(f"query {ranking.query_id} has no relevant documents")
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = sum(
        discounts[i]
        for i, d in enumerate(ranking.doc_ids[:k])
        if d in relevant
    )
    ideal = discounts[: min(len(relevant), k)].sum()
    return float(dcg / ideal)


def map_at_k(ranking: RankedList, qrels, k: int) -> float:
    """Average precision at k, normalized by min(k, #relevant) so a perfect
    truncated ranking scores 1.0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = _relevant_set(qrels, ranking.query_id)
    if not relevant:
        raise ValueError(f"query {ranking.query_id} has no relevant documents")
    hits, total = 0, 0.0
    for rank, d in enumerate(ranking.doc_ids[:k], start=1):
        if d in relevant:
            hits += 1
            total += hits / rank
    return float(total / min(k, len(relevant)))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two equal-length lists with >= 2 entries")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        raise ZeroVarianceError("correlation undefined for constant input")
    return float((dx @ dy) / np.sqrt(vx * vy))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(rank_a, rank_b) -> float:
    """Pearson correlation over average-rank variables (tie-corrected)."""
    a = np.asarray(rank_a, dtype=np.float64)
    b = np.asarray(rank_b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("need two equal-length lists with >= 2 entries")
    return pearson(_average_ranks(a), _average_ranks(b))


def fleiss_kappa(ratings) -> float:
    """Chance-corrected agreement from an items-by-categories count matrix.

    Every item must have the same rater count. When all raters agree and only
    one category is ever used, expected agreement hits 1 and the statistic is
    defined as 1.0.
    """
    counts = np.asarray(ratings, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[0] < 1:
        raise ValueError("ratings must be a 2-D count matrix")
    raters = counts[0].sum()
    if raters < 2:
        raise ValueError("need at least 2 raters")
    if not np.all(counts.sum(axis=1) == raters):
        raise ValueError("unequal rater counts across items")
    p_bar = float(np.mean(((counts * counts).sum(axis=1) - raters)
                          / (raters * (raters - 1))))
    shares = counts.sum(axis=0) / counts.sum()
    p_e = float(shares @ shares)
    if p_e == 1.0:
        return 1.0
    return (p_bar - p_e) / (1.0 - p_e)


@dataclass
class EvalReport:
    tasks: dict = field(default_factory=dict)  # task -> {metric: value, ...}
    per_query: list = field(default_factory=list)  # rows: task, query_id, metric, value
    macro_avg: float = 0.0
    config_fingerprint: str = ""

    def to_dict(self) -> dict:
        return {
            "tasks": self.tasks,
            "macro_avg": self.macro_avg,
            "config_fingerprint": self.config_fingerprint,
        }

    def to_table(self) -> str:
        rows = [("task", "metric", "value", "queries", "skipped")]
        for task in sorted(self.tasks):
            info = self.tasks[task]
            for metric in sorted(info):
                if metric in ("n_queries", "skipped"):
                    continue
                rows.append((
                    task, metric, f"{info[metric]:.5f}",
                    str(info.get("n_queries", "")), str(info.get("skipped", "")),
                ))
        rows.append(("macro", "avg", f"{self.macro_avg:.5f}", "", ""))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                 for row in rows]
        return "\n".join(lines)

    def per_query_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["task", "query_id", "metric", "value"])
        for row in self.per_query:
            writer.writerow(row)
        return buf.getvalue()


def _teacher_embed(teacher, texts, dim):
    full, _ = forward_batch(
        teacher, TokenBatch.from_seqs([tokenize(t, teacher.vocab_size) for t in texts])
    )
    emb, _ = mrl_truncate_rows(full, dim)
    return emb


def _student_embed(student, texts):
    emb, _ = forward_batch(
        student, TokenBatch.from_seqs([tokenize(t, student.vocab_size) for t in texts])
    )
    return emb


def run_benchmark(student, teacher, tasks: dict, k: int = 10,
                  config_fingerprint: str = "") -> EvalReport:
    """Evaluate the asymmetric pair on the supplied tasks.

    ``tasks`` maps task names to their data:
      retrieval: {queries: [Record], corpus: [Record], qrels: {(qid,did): label}}
      rerank:    {queries: [Record], candidates: {qid: [Record]}, qrels: ...}
      sts:       {queries: {qid: text}, pairs: [(qid, sentence, label)]}
    Retrieval indexes the corpus with the teacher at the student's width and
    searches with the student; rerank scores each candidate pool the same
    way; STS correlates query-sentence cosines with the binary labels.
    """
    report = EvalReport(config_fingerprint=config_fingerprint)
    metric_means = []

    if "retrieval" in tasks:
        t = tasks["retrieval"]
        idx = build_index(teacher, t["corpus"], student.out_dim)
        values, skipped = [], 0
        for q in t["queries"]:
            if not _relevant_set(t["qrels"], q.id):
                skipped += 1
                continue
            hits = search(idx, student, q.text, k)
            ranking = RankedList(q.id, [d for d, _ in hits], [s for _, s in hits])
            v = ndcg_at_k(ranking, t["qrels"], k)
            values.append(v)
            report.per_query.append(("retrieval", q.id, f"ndcg@{k}", v))
        mean = float(np.mean(values)) if values else 0.0
        report.tasks["retrieval"] = {
            f"ndcg@{k}": mean, "n_queries": len(values), "skipped": skipped,
        }
        metric_means.append(mean)

    if "rerank" in tasks:
        t = tasks["rerank"]
        values, skipped = [], 0
        for q in t["queries"]:
            cands = t["candidates"].get(q.id, [])
            if not cands or not _relevant_set(t["qrels"], q.id):
                skipped += 1
                continue
            q_emb = _student_embed(student, [q.text])[0]
            d_emb = _teacher_embed(teacher, [c.text for c in cands], student.out_dim)
            scores = d_emb @ q_emb
            order = np.lexsort((np.array([c.id for c in cands]), -scores))
            ranking = RankedList(
                q.id, [cands[i].id for i in order], [float(scores[i]) for i in order]
            )
            v = map_at_k(ranking, t["qrels"], k)
            values.append(v)
            report.per_query.append(("rerank", q.id, f"map@{k}", v))
        mean = float(np.mean(values)) if values else 0.0
        report.tasks["rerank"] = {
            f"map@{k}": mean, "n_queries": len(values), "skipped": skipped,
        }
        metric_means.append(mean)

    if "sts" in tasks:
        t = tasks["sts"]
        scores, labels = [], []
        for qid, sentence, label in t["pairs"]:
            q_emb = _student_embed(student, [t["queries"][qid]])[0]
            s_emb = _teacher_embed(teacher, [sentence], student.out_dim)[0]
            score = float(q_emb @ s_emb)
            scores.append(score)
            labels.append(label)
            report.per_query.append(("sts", qid, "cosine", score))
        value = pearson(scores, labels)
        report.tasks["sts"] = {
            "pearson": value, "n_queries": len(scores), "skipped": 0,
        }
        metric_means.append(value)

    report.macro_avg = float(np.mean(metric_means)) if metric_means else 0.0
    return report
