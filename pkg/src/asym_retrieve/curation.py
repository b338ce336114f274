"""Data curation: synthetic corpus, diversity dedup, judging, consensus, triplets, STS.

The synthetic generator stands in for a real document collection plus query
logs: texts are built from per-cluster topic tokens and shared filler tokens,
so relevance ground truth is simply cluster membership. Everything downstream
(dedup, candidate mining, multi-judge consensus labeling, triplet and STS
construction) operates on it exactly as it would on real data.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .encoder import _fnv1a64
from .errors import JudgeProtocolError, JudgeTransportError

GRADES = ("S", "A", "B", "C", "D")
POSITIVE_GRADES = ("S", "A")
_INTENTS = ("how", "what", "why", "when")


@dataclass
class Record:
    """A document or query; cluster_id is synthetic ground truth when known."""

    id: str
    text: str
    cluster_id: int = None


Document = Record
Query = Record


@dataclass
class CurationParams:
    """Evolving-index dedup knobs: top-k retrieval, similarity threshold t,
    and the maximum allowed count n of close neighbors."""

    k: int = 5
    t: float = 0.78
    n: int = 1
    seed_size: int = 50
    strict_gt: bool = True  # "more than n" reads as strictly greater by default

    def validate(self) -> list:
        errs = []
        if self.k < 1:
            errs.append("$.k: must be >= 1")
        if not 0.0 < self.t <= 1.0:
            errs.append("$.t: must be in (0, 1]")
        if self.n < 0:
            errs.append("$.n: must be >= 0")
        if self.k < self.n:
            errs.append("$.k: must be >= n")
        if self.seed_size < 1:
            errs.append("$.seed_size: must be >= 1")
        return errs


@dataclass
class JudgeVerdict:
    judge_id: str
    grade: str


@dataclass
class Triplet:
    query_id: str
    positives: list
    negatives: list


@dataclass
class StsTriple:
    query_id: str
    s_plus: str
    s_minus_hard: str
    s_minus_easy: str
    sentence: str
    label: int


def gen_synthetic_corpus(clusters: int, docs_per_cluster: int, dup_rate: float,
                         synonym_dict: dict, seed: int,
                         queries_per_cluster: int = 4):
    """Cluster-templated corpus with ground-truth relevance.

    Every document mixes tokens from its cluster's topic pool with unique
    filler tokens; queries carry an intent word, topic tokens, and one
    synonym-dictionary term (needed later for STS generation). A ``dup_rate``
    fraction of each cluster's documents are near-duplicates of earlier ones
    with a single filler token swapped.

    Returns (documents, queries, qrels) where qrels maps (query_id, doc_id)
    to 1 for same-cluster pairs.
    """
    if clusters < 2:
        raise ValueError("need at least 2 clusters")
    if not synonym_dict:
        raise ValueError("synonym_dict must be non-empty (STS needs query terms)")
    if not 0.0 <= dup_rate < 1.0:
        raise ValueError("dup_rate must be in [0, 1)")
    rng = np.random.default_rng(seed)
    terms = sorted(synonym_dict)
    n_fillers = max(400, clusters * docs_per_cluster)

    documents, queries = [], []
    qrels = {}
    for c in range(clusters):
        topics = [f"t{c}w{j}" for j in range(10)]
        term = terms[c % len(terms)]
        n_dups = int(round(dup_rate * docs_per_cluster))
        base_tokens = []
        for d in range(docs_per_cluster):
            doc_id = f"d{c:03d}-{d:03d}"
            if d >= docs_per_cluster - n_dups and base_tokens:
                src = base_tokens[rng.integers(0, len(base_tokens))]
                tokens = list(src)
                swap = [i for i, t in enumerate(tokens) if t.startswith("f")]
                i = swap[rng.integers(0, len(swap))]
                tokens[i] = f"f{rng.integers(0, n_fillers)}"
            else:
                chosen = rng.choice(10, size=6, replace=False)
                tokens = [topics[j] for j in chosen]
                tokens += [f"f{rng.integers(0, n_fillers)}" for _ in range(6)]
                tokens.append(f"u{c}x{d}")
                base_tokens.append(list(tokens))
            documents.append(Record(doc_id, " ".join(tokens), c))
        for q in range(queries_per_cluster):
            qid = f"q{c:03d}-{q:03d}"
            intent = _INTENTS[int(rng.integers(0, len(_INTENTS)))]
            chosen = rng.choice(10, size=3, replace=False)
            text = " ".join([intent] + [topics[j] for j in chosen] + [term])
            queries.append(Record(qid, text, c))
            for d in range(docs_per_cluster):
                qrels[(qid, f"d{c:03d}-{d:03d}")] = 1
    return documents, queries, qrels


def diversify(items, embed_texts, params: CurationParams):
    """Keep a diverse subset of ``items`` via an evolving vector index.

    The first ``seed_size`` items are inserted unconditionally. Each later
    item retrieves its top-k neighbors from the index built so far; when the
    count of neighbors with similarity above ``t`` exceeds ``n``, the item is
    discarded, otherwise inserted. Order-dependent by construction, so the
    scan is sequential and input order is preserved in the output.
    """
    errs = params.validate()
    if errs:
        raise ValueError("; ".join(errs))
    if params.seed_size > len(items):
        raise ValueError(
            f"seed_size {params.seed_size} exceeds item count {len(items)}"
        )
    emb = embed_texts([it.text for it in items])
    retained = []
    kept_rows = np.empty((len(items), emb.shape[1]))
    for i, item in enumerate(items):
        if len(retained) < params.seed_size:
            kept_rows[len(retained)] = emb[i]
            retained.append(item)
            continue
        sims = kept_rows[: len(retained)] @ emb[i]
        top = np.sort(sims)[::-1][: params.k]
        close = int(np.sum(top > params.t))
        discard = close > params.n if params.strict_gt else close >= params.n
        if not discard:
            kept_rows[len(retained)] = emb[i]
            retained.append(item)
    return retained


def mine_candidates(query_emb, index, pool_size: int):
    """Exact top-``pool_size`` candidate documents for one query embedding.

    A pool size beyond the corpus returns the whole corpus ranked.
    """
    from .index import search_by_embedding

    return search_by_embedding(index, query_emb, pool_size)


def consensus_label(verdicts, positive_grades=POSITIVE_GRADES) -> str:
    """Unanimity rule over binarized votes: S/A count as positive votes,
    B/C/D negative; mixed votes discard the pair."""
    if len(verdicts) < 2:
        raise ValueError("consensus needs at least 2 verdicts")
    votes = []
    for v in verdicts:
        if v.grade not in GRADES:
            raise ValueError(f"unknown grade {v.grade!r}")
        votes.append(v.grade in positive_grades)
    if all(votes):
        return "positive"
    if not any(votes):
        return "negative"
    return "discarded"


class MockJudgeClient:
    """Deterministic judge grading from synthetic cluster truth.

    Same cluster rates S, different cluster D; with probability ``noise`` the
    grade flips to a uniformly chosen other grade. The flip decision is a pure
    function of (seed, judge_id, query_id, doc_id), so verdicts do not depend
    on judging order or concurrency.
    """

    def __init__(self, judge_id: str, cluster_of: dict, noise: float = 0.0,
                 seed: int = 0):
        if not 0.0 <= noise <= 1.0:
            raise ValueError("noise must be in [0, 1]")
        self.judge_id = judge_id
        self.cluster_of = cluster_of
        self.noise = noise
        self.seed = seed

    def _grade_one(self, query: Record, passage: Record) -> str:
        qc = self.cluster_of.get(query.id, query.cluster_id)
        dc = self.cluster_of.get(passage.id, passage.cluster_id)
        grade = "S" if qc == dc else "D"
        if self.noise > 0.0:
            rng = np.random.default_rng(
                [self.seed, _fnv1a64(self.judge_id.encode()) % (2**31),
                 _fnv1a64(query.id.encode()) % (2**31),
                 _fnv1a64(passage.id.encode()) % (2**31)]
            )
            if rng.random() < self.noise:
                others = [g for g in GRADES if g != grade]
                grade = others[int(rng.integers(0, len(others)))]
        return grade

    def judge_batch(self, query: Record, passages) -> list:
        return [self._grade_one(query, p) for p in passages]


class HttpJudgeClient:
    """Client for the judge wire protocol.

    POST {endpoint}/judge with {"query": str, "passages": [str]}; the server
    answers {"grades": ["S".."D", ...]} aligned with the passages. Transport
    failures retry with exponential backoff before giving up.
    """

    def __init__(self, judge_id: str, endpoint: str, timeout: float = 10.0,
                 retries: int = 3, backoff: float = 0.25):
        self.judge_id = judge_id
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def judge_batch(self, query: Record, passages) -> list:
        payload = {"query": query.text, "passages": [p.text for p in passages]}
        last_exc = None
        for attempt in range(self.retries + 1):
            try:
                resp = requests.post(
                    f"{self.endpoint}/judge", json=payload, timeout=self.timeout
                )
                resp.raise_for_status()
                body = resp.json()
                break
            except (requests.ConnectionError, requests.Timeout,
                    requests.HTTPError) as exc:
                last_exc = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * (2 ** attempt))
        else:
            raise JudgeTransportError(
                f"judge {self.judge_id} unreachable after {self.retries + 1} attempts"
            ) from last_exc
        grades = body.get("grades") if isinstance(body, dict) else None
        if not isinstance(grades, list) or len(grades) != len(passages):
            raise JudgeProtocolError(
                f"judge {self.judge_id}: malformed response {body!r}"
            )
        for g in grades:
            if g not in GRADES:
                raise JudgeProtocolError(f"judge {self.judge_id}: unknown grade {g!r}")
        return grades


def judge(query: Record, document: Record, client) -> JudgeVerdict:
    """Single-pair convenience wrapper over a judge client."""
    grade = client.judge_batch(query, [document])[0]
    return JudgeVerdict(judge_id=client.judge_id, grade=grade)


def label_candidates(queries, candidates_by_qid, doc_by_id, clients,
                     positive_grades=POSITIVE_GRADES):
    """Judge every (query, candidate) pair with all clients and apply consensus.

    Returns (qrels, stats). Pairs whose judging fails in transport are left
    unjudged and excluded from consensus; discarded pairs get no label.
    """
    if len(clients) < 2:
        raise ValueError("consensus labeling needs at least 2 judges")
    qrels = {}
    stats = {"positive": 0, "negative": 0, "discarded": 0, "unjudged": 0}
    for query in queries:
        cand_ids = candidates_by_qid.get(query.id, [])
        if not cand_ids:
            continue
        passages = [doc_by_id[d] for d in cand_ids]
        grade_lists = []
        failed = False
        for client in clients:
            try:
                grade_lists.append(client.judge_batch(query, passages))
            except JudgeTransportError:
                failed = True
                break
        if failed:
            stats["unjudged"] += len(passages)
            continue
        for col, did in enumerate(cand_ids):
            verdicts = [
                JudgeVerdict(getattr(c, "judge_id", str(i)), grades[col])
                for i, (c, grades) in enumerate(zip(clients, grade_lists))
            ]
            outcome = consensus_label(verdicts, positive_grades)
            stats[outcome] += 1
            if outcome == "positive":
                qrels[(query.id, did)] = 1
            elif outcome == "negative":
                qrels[(query.id, did)] = 0
    return qrels, stats


def build_triplets(qrels, candidates_by_qid, n_pos: int = 1, n_neg: int = 7,
                   seed: int = 0):
    """Sample per-query positives/negatives from consensus-labeled candidates.

    Queries without any labeled positive are dropped and counted; triplets
    with an empty negative list are kept but flagged. Sampling is a pure
    function of (seed, query_id), so query order does not matter.
    """
    triplets = []
    stats = {"dropped_no_positive": 0, "empty_negatives": 0}
    for qid in sorted(candidates_by_qid):
        pool = candidates_by_qid[qid]
        pos = [d for d in pool if qrels.get((qid, d)) == 1]
        neg = [d for d in pool if qrels.get((qid, d)) == 0]
        if not pos:
            stats["dropped_no_positive"] += 1
            continue
        rng = np.random.default_rng([seed, _fnv1a64(qid.encode()) % (2**31)])
        take_pos = list(rng.permutation(pos)[:n_pos])
        take_neg = list(rng.permutation(neg)[:n_neg])
        if not take_neg:
            stats["empty_negatives"] += 1
        triplets.append(Triplet(qid, take_pos, take_neg))
    return triplets, stats


def gen_sts(queries, synonym_dict: dict, seed: int):
    """Rule-based STS triples standing in for LLM paraphrase generation.

    For each query holding a dictionary term: the positive substitutes the
    term with its synonym (meaning preserved); the hard negative applies the
    same substitution plus an intent flip (meaning changed); the easy negative
    applies only the intent flip. One of the three is sampled per query and
    labeled 1 exactly when it is the positive.
    """
    triples = []
    stats = {"skipped_no_term": 0}
    for q in queries:
        tokens = q.text.split()
        term_idx = next((i for i, t in enumerate(tokens) if t in synonym_dict), None)
        if term_idx is None:
            stats["skipped_no_term"] += 1
            continue
        substituted = list(tokens)
        substituted[term_idx] = synonym_dict[tokens[term_idx]]
        s_plus = " ".join(substituted)

        def flip(tok_list):
            flipped = ["avoid" if t in _INTENTS else t for t in tok_list]
            return " ".join(flipped + ["risks"])

        s_hard = flip(substituted)
        s_easy = flip(tokens)
        rng = np.random.default_rng([seed, _fnv1a64(q.id.encode()) % (2**31)])
        choice = int(rng.integers(0, 3))
        sentence = (s_plus, s_hard, s_easy)[choice]
        triples.append(
            StsTriple(q.id, s_plus, s_hard, s_easy, sentence, int(sentence == s_plus))
        )
    return triples, stats


def split_queries(query_ids, seed: int, test_fraction: float = 0.5):
    """Deterministic train/test partition of query ids."""
    ids = sorted(query_ids)
    rng = np.random.default_rng([seed, 7])
    perm = rng.permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    test = {ids[i] for i in perm[:n_test]}
    train = [q for q in ids if q not in test]
    return train, sorted(test)
