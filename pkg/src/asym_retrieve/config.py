"""Run configuration: defaults, JSON loading, validation with path-qualified errors."""

import hashlib
import json
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path


@dataclass
class TrainConfig:
    """Hyperparameters shared by every training stage."""

    tau: float = 0.05
    learnable_tau: bool = False
    lambda1: float = 1.0
    lambda2: float = 1.0
    mrl_dims: tuple = (32, 64, 128)
    lr: float = 2e-3
    warmup_ratio: float = 0.05
    batch_size: int = 32
    epochs: int = 3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def validate(self) -> list:
        errs = []
        if not self.tau > 0:
            errs.append("$.tau: must be > 0")
        if self.lambda1 < 0:
            errs.append("$.lambda1: must be >= 0")
        if self.lambda2 < 0:
            errs.append("$.lambda2: must be >= 0")
        dims = list(self.mrl_dims)
        if not dims or any(d < 1 for d in dims) or dims != sorted(set(dims)):
            errs.append("$.mrl_dims: must be a strictly ascending set of positive ints")
        if not self.lr > 0:
            errs.append("$.lr: must be > 0")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            errs.append("$.warmup_ratio: must be in [0, 1]")
        if self.batch_size < 1:
            errs.append("$.batch_size: must be >= 1")
        if self.epochs < 0:
            errs.append("$.epochs: must be >= 0")
        return errs


_DEFAULT_JUDGE = {"kind": "mock", "noise": 0.1, "seed": 7, "count": 3}


@dataclass
class RunConfig:
    """Everything one command needs: training and curation knobs plus paths.

    Paths are interpreted relative to ``workdir`` unless absolute.
    """

    # training
    tau: float = 0.05
    learnable_tau: bool = False
    lambda1: float = 1.0
    lambda2: float = 1.0
    mrl_dims: tuple = (32, 64, 128)
    lr: float = 2e-3
    warmup_ratio: float = 0.05
    batch_size: int = 32
    epochs: int = 3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    # encoder shape
    vocab_size: int = 2048
    student_hidden: int = 32
    teacher_hidden: int = 128
    # synthetic data
    clusters: int = 50
    docs_per_cluster: int = 192
    queries_per_cluster: int = 8
    dup_rate: float = 0.1
    n_synonyms: int = 16
    test_fraction: float = 0.5
    # curation
    k: int = 5
    t_query: float = 0.85
    t_doc: float = 0.78
    n: int = 1
    seed_size: int = 50
    strict_dedup: bool = True
    pool_size: int = 50
    n_pos: int = 1
    n_neg: int = 7
    positive_grades: tuple = ("S", "A")
    judge: dict = field(default_factory=lambda: dict(_DEFAULT_JUDGE))
    # evaluation / execution
    eval_k: int = 10
    ablation_seeds: int = 5
    threads: int = 1
    backend: str = "auto"
    # paths
    workdir: str = "."
    corpus_path: str = "corpus.jsonl"
    queries_path: str = "queries.jsonl"
    truth_qrels_path: str = "qrels_truth.jsonl"
    qrels_path: str = "qrels.jsonl"
    triplets_path: str = "triplets.jsonl"
    sts_path: str = "sts.jsonl"
    meta_path: str = "meta.json"
    student_checkpoint: str = "student.ckpt"
    teacher_checkpoint: str = "teacher.ckpt"
    index_path: str = "index.bin"
    report_dir: str = "reports"

    def path(self, name: str) -> Path:
        value = getattr(self, name)
        p = Path(value)
        return p if p.is_absolute() else Path(self.workdir) / p

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{n: getattr(self, n) for n in names})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mrl_dims"] = list(self.mrl_dims)
        d["positive_grades"] = list(self.positive_grades)
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


_INT_FIELDS = {
    "batch_size", "epochs", "seed", "vocab_size", "student_hidden",
    "teacher_hidden", "clusters", "docs_per_cluster", "queries_per_cluster",
    "n_synonyms", "k", "n", "seed_size", "pool_size", "n_pos", "n_neg",
    "eval_k", "ablation_seeds", "threads",
}
_FLOAT_FIELDS = {
    "tau", "lambda1", "lambda2", "lr", "warmup_ratio", "beta1", "beta2",
    "eps", "weight_decay", "dup_rate", "test_fraction", "t_query", "t_doc",
}
_BOOL_FIELDS = {"learnable_tau", "strict_dedup"}
_STR_FIELDS = {
    "backend", "workdir", "corpus_path", "queries_path", "truth_qrels_path",
    "qrels_path", "triplets_path", "sts_path", "meta_path",
    "student_checkpoint", "teacher_checkpoint", "index_path", "report_dir",
}
_LIST_FIELDS = {"mrl_dims", "positive_grades"}


def _check_types(data: dict, errs: list) -> dict:
    clean = {}
    for key, value in data.items():
        if key in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                errs.append(f"$.{key}: expected integer, got {value!r}")
                continue
        elif key in _FLOAT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                errs.append(f"$.{key}: expected number, got {value!r}")
                continue
            value = float(value)
        elif key in _BOOL_FIELDS:
            if not isinstance(value, bool):
                errs.append(f"$.{key}: expected boolean, got {value!r}")
                continue
        elif key in _STR_FIELDS:
            if not isinstance(value, str):
                errs.append(f"$.{key}: expected string, got {value!r}")
                continue
        elif key in _LIST_FIELDS:
            if not isinstance(value, (list, tuple)):
                errs.append(f"$.{key}: expected list, got {value!r}")
                continue
            value = tuple(value)
        elif key == "judge":
            if not isinstance(value, dict):
                errs.append(f"$.judge: expected object, got {value!r}")
                continue
        else:
            errs.append(f"$.{key}: unknown key")
            continue
        clean[key] = value
    return clean


def _validate_semantics(cfg: RunConfig, errs: list) -> None:
    errs.extend(cfg.train_config().validate())
    dims = list(cfg.mrl_dims)
    if dims and dims == sorted(set(dims)) and all(d >= 1 for d in dims):
        if cfg.teacher_hidden < dims[-1] // 4:
            pass  # teacher narrower than its output is legal, just unusual
    if not 0.0 < cfg.t_query < 1.0:
        errs.append("$.t_query: must be in (0, 1)")
    if not 0.0 < cfg.t_doc < 1.0:
        errs.append("$.t_doc: must be in (0, 1)")
    if cfg.k < 1:
        errs.append("$.k: must be >= 1")
    if cfg.n < 0:
        errs.append("$.n: must be >= 0")
    if cfg.k < cfg.n:
        errs.append("$.k: must be >= n")
    if cfg.seed_size < 1:
        errs.append("$.seed_size: must be >= 1")
    if not 0.0 <= cfg.dup_rate < 1.0:
        errs.append("$.dup_rate: must be in [0, 1)")
    if not 0.0 < cfg.test_fraction < 1.0:
        errs.append("$.test_fraction: must be in (0, 1)")
    if cfg.clusters < 2:
        errs.append("$.clusters: must be >= 2")
    if cfg.vocab_size < 2:
        errs.append("$.vocab_size: must be >= 2")
    if cfg.backend not in ("auto", "compiled", "python"):
        errs.append("$.backend: must be auto, compiled, or python")
    if cfg.threads < 1:
        errs.append("$.threads: must be >= 1")
    if cfg.eval_k < 1:
        errs.append("$.eval_k: must be >= 1")
    if cfg.ablation_seeds < 1:
        errs.append("$.ablation_seeds: must be >= 1")
    if any(g not in ("S", "A", "B", "C", "D") for g in cfg.positive_grades):
        errs.append("$.positive_grades: must be drawn from S/A/B/C/D")

    judge = cfg.judge
    kind = judge.get("kind")
    if kind == "mock":
        noise = judge.get("noise", 0.0)
        if isinstance(noise, bool) or not isinstance(noise, (int, float)) \
                or not 0.0 <= noise <= 1.0:
            errs.append("$.judge.noise: must be a number in [0, 1]")
        if judge.get("count", 3) < 2:
            errs.append("$.judge.count: consensus needs >= 2 judges")
        unknown = set(judge) - {"kind", "noise", "seed", "count"}
        if unknown:
            errs.append(f"$.judge.{sorted(unknown)[0]}: unknown key")
    elif kind == "http":
        endpoints = judge.get("endpoints")
        if not isinstance(endpoints, list) or len(endpoints) < 2 \
                or not all(isinstance(e, str) for e in endpoints):
            errs.append("$.judge.endpoints: need a list of >= 2 endpoint URLs")
        unknown = set(judge) - {"kind", "endpoints", "timeout", "retries", "backoff"}
        if unknown:
            errs.append(f"$.judge.{sorted(unknown)[0]}: unknown key")
    else:
        errs.append("$.judge.kind: must be 'mock' or 'http'")


def validate_config_dict(data: dict):
    """Build a RunConfig from a plain dict; returns (config_or_None, errors).

    Violations are aggregated with their JSON paths rather than failing fast.
    """
    errs = []
    if not isinstance(data, dict):
        return None, ["$: top level must be a JSON object"]
    clean = _check_types(data, errs)
    if "judge" in clean and clean["judge"].get("kind", "mock") == "mock":
        clean["judge"] = {**_DEFAULT_JUDGE, **clean["judge"]}
    try:
        cfg = RunConfig(**clean)
    except TypeError:
        return None, errs or ["$: invalid configuration"]
    _validate_semantics(cfg, errs)
    if errs:
        return None, errs
    return cfg, []


def validate_config(path):
    """Load and validate a UTF-8 JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        return None, [f"$: cannot read config {path}: {exc}"]
    return validate_config_dict(data)


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``--set key=value`` pairs; dotted keys reach into sub-objects.

    Values parse as JSON when possible, otherwise as plain strings.
    """
    out = json.loads(json.dumps(data))  # deep copy
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = out
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ValueError(f"--set {key}: {part} is not an object")
        target[parts[-1]] = value
    return out
