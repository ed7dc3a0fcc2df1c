"""Reranker distillation: synthetic questions, teacher-ordered targets,
pairwise RankNet training of a feature-based student, and candidate reranking.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .corpus import Chunk
from .index import Bm25Index, SearchHit, tokenize

logger = logging.getLogger(__name__)

FEATURE_NAMES = [
    "bm25_score",
    "dense_cosine",
    "title_overlap",
    "text_overlap",
    "chunk_length_norm",
    "query_length",
    "rank_reciprocal",
]


class RerankError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticQuestion:
    text: str
    source_ref: tuple[str, int]
    generator_name: str

    def __post_init__(self):
        if not self.text:
            raise RerankError("question text must be non-empty")


@dataclass(frozen=True)
class RankingExample:
    question: SyntheticQuestion
    candidates: list[tuple[str, int]]      # retrieval order
    teacher_scores: list[float]            # aligned with candidates
    target_order: list[tuple[str, int]]    # source first, then teacher order


@dataclass(frozen=True)
class TrainPair:
    question_ref: tuple[str, int]
    preferred: tuple[str, int]
    other: tuple[str, int]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2   # scale-adjusted for the linear student; 5e-6 suits encoder backends
    batch_size: int = 8
    warmup_steps: int = 4000
    weight_decay: float = 0.001
    epochs: int = 1
    schedule: str = "warmup-constant"
    seed: int = 0
    validation_fraction: float = 0.005
    hidden_size: int = 0          # 0 = linear student

    def lr_at(self, step: int) -> float:
        if self.schedule != "warmup-constant":
            raise RerankError(f"unknown schedule {self.schedule!r}")
        return self.learning_rate * min(step / self.warmup_steps, 1.0)


class QuestionGenerator(Protocol):
    name: str

    def generate(self, chunk: Chunk) -> list[str]: ...


class TemplateQuestionGenerator:
    """Offline stand-in for an LLM question writer: emits template questions
    from the chunk title and its least common text tokens."""

    def __init__(self, questions_per_chunk: int = 2, token_counts: dict[str, int] | None = None):
        self.name = "template-generator"
        self.questions_per_chunk = questions_per_chunk
        self.token_counts = token_counts or {}

    def generate(self, chunk: Chunk) -> list[str]:
        out = []
        title = chunk.title.strip().lower()
        if title:
            out.append(f"how do I {title}?")
        text_tokens = tokenize(chunk.text)
        keywords = sorted(
            set(text_tokens), key=lambda t: (self.token_counts.get(t, 0), t)
        )
        for kw in keywords:
            if len(out) >= self.questions_per_chunk:
                break
            out.append(f"what about {kw} for {title}?" if title else f"what about {kw}?")
        return out[: self.questions_per_chunk]


def generate_questions(chunks: list[Chunk], generator: QuestionGenerator) -> list[SyntheticQuestion]:
    questions = []
    for chunk in chunks:
        try:
            texts = generator.generate(chunk)
        except Exception:
            logger.warning("question generator failed on chunk %s; skipped", chunk.ref)
            continue
        for text in texts:
            if not text:
                continue
            questions.append(
                SyntheticQuestion(text=text, source_ref=chunk.ref, generator_name=generator.name)
            )
    return questions


def filter_by_recall(q: SyntheticQuestion, hits: list[SearchHit]) -> bool:
    """Keep a question only if its source chunk was retrieved at all."""
    return any(h.chunk_ref == q.source_ref for h in hits)


class Teacher(Protocol):
    name: str

    def score(self, question: str, chunk: Chunk) -> float: ...


class LexicalOverlapTeacher:
    """Deterministic mock teacher: query-token coverage of title+text, with a
    tiny seeded hash perturbation so scores are rarely exactly tied."""

    def __init__(self, seed: int = 7, jitter: float = 1e-6):
        self.name = f"lexical-overlap-{seed}"
        self.seed = seed
        self.jitter = jitter

    def score(self, question: str, chunk: Chunk) -> float:
        q_tokens = tokenize(question)
        if not q_tokens:
            return 0.0
        doc_tokens = set(tokenize(chunk.title)) | set(tokenize(chunk.text))
        coverage = sum(1 for t in q_tokens if t in doc_tokens) / len(q_tokens)
        digest = hashlib.blake2b(
            f"{self.seed}:{question}:{chunk.origin_id}:{chunk.local_id}".encode(),
            digest_size=4,
        ).digest()
        noise = int.from_bytes(digest, "big") / 2**32
        return coverage + self.jitter * noise


def build_teacher_ranking(
    q: SyntheticQuestion,
    hits: list[SearchHit],
    teacher: Teacher,
    chunks_by_ref: dict[tuple[str, int], Chunk],
) -> RankingExample | None:
    """Target order: source chunk first, remainder by descending teacher score,
    ties broken by retrieval rank. Returns None when the teacher fails."""
    if not filter_by_recall(q, hits):
        raise RerankError("question source not among candidates; filter first")
    try:
        scores = [teacher.score(q.text, chunks_by_ref[h.chunk_ref]) for h in hits]
    except Exception:
        logger.warning("teacher failed on question %r; example discarded", q.text)
        return None
    candidates = [h.chunk_ref for h in hits]
    rest = [
        (ref, s, rank)
        for ref, s, rank in zip(candidates, scores, range(1, len(hits) + 1))
        if ref != q.source_ref
    ]
    rest.sort(key=lambda t: (-t[1], t[2]))
    target_order = [q.source_ref] + [ref for ref, _, _ in rest]
    return RankingExample(
        question=q, candidates=candidates, teacher_scores=scores, target_order=target_order
    )


def build_pairs(example: RankingExample) -> list[TrainPair]:
    order = example.target_order
    return [
        TrainPair(question_ref=example.question.source_ref, preferred=order[i], other=order[j])
        for i in range(len(order))
        for j in range(i + 1, len(order))
    ]


def ranknet_loss(s_preferred: float, s_other: float) -> float:
    """log(1 + exp(-(s_p - s_o))), computed in the overflow-safe form."""
    diff = s_preferred - s_other
    if diff >= 0:
        return float(np.log1p(np.exp(-diff)))
    return float(-diff + np.log1p(np.exp(diff)))


def ranknet_grad(s_preferred: float, s_other: float) -> float:
    """dL/ds_preferred = -sigmoid(-(s_p - s_o))."""
    diff = s_preferred - s_other
    if diff >= 0:
        return float(-np.exp(-diff) / (1.0 + np.exp(-diff)))
    return float(-1.0 / (1.0 + np.exp(diff)))


@dataclass
class FeatureContext:
    """Per-candidate-set retrieval context the feature extractor reads from."""

    bm25_by_ref: dict[tuple[str, int], float]
    dense_by_ref: dict[tuple[str, int], float]
    rank_by_ref: dict[tuple[str, int], int]
    max_chars: int = 1000

    @classmethod
    def from_retrieval(
        cls,
        query: str,
        hits: list[SearchHit],
        bm25_index: Bm25Index,
        max_chars: int = 1000,
    ) -> "FeatureContext":
        try:
            scores = bm25_index.scores(query)
        except Exception:
            scores = np.zeros(len(bm25_index))
        pos = {ref: i for i, ref in enumerate(bm25_index.refs)}
        return cls(
            bm25_by_ref={h.chunk_ref: float(scores[pos[h.chunk_ref]]) for h in hits if h.chunk_ref in pos},
            dense_by_ref={h.chunk_ref: h.score for h in hits},
            rank_by_ref={h.chunk_ref: h.rank for h in hits},
            max_chars=max_chars,
        )


def _overlap_ratio(q_tokens: list[str], doc_tokens: list[str]) -> float:
    if not q_tokens:
        return 0.0
    doc_set = set(doc_tokens)
    return sum(1 for t in q_tokens if t in doc_set) / len(q_tokens)


def extract_features(query: str, chunk: Chunk, context: FeatureContext) -> np.ndarray:
    q_tokens = tokenize(query)
    return np.array(
        [
            context.bm25_by_ref.get(chunk.ref, 0.0),
            context.dense_by_ref.get(chunk.ref, 0.0),
            _overlap_ratio(q_tokens, tokenize(chunk.title)),
            _overlap_ratio(q_tokens, tokenize(chunk.text)),
            chunk.char_count / context.max_chars,
            float(len(q_tokens)),
            1.0 / context.rank_by_ref.get(chunk.ref, len(context.rank_by_ref) + 1),
        ]
    )


class StudentScorer:
    """Feature-based scorer: linear, or one tanh hidden layer when hidden_size > 0."""

    def __init__(self, feature_names: list[str], hidden_size: int = 0, rng: np.random.Generator | None = None):
        self.feature_names = list(feature_names)
        self.hidden_size = hidden_size
        d = len(feature_names)
        if hidden_size > 0:
            rng = rng or np.random.default_rng(0)
            self.w1 = rng.standard_normal((hidden_size, d)) / np.sqrt(d)
            self.b1 = np.zeros(hidden_size)
            self.w2 = np.zeros(hidden_size)
            self.b2 = 0.0
        else:
            self.w = np.zeros(d)
            self.b = 0.0

    def score_features(self, feats: np.ndarray) -> np.ndarray:
        feats = np.atleast_2d(feats)
        if self.hidden_size > 0:
            h = np.tanh(feats @ self.w1.T + self.b1)
            return h @ self.w2 + self.b2
        return feats @ self.w + self.b

    def score(self, query: str, chunk: Chunk, context: FeatureContext) -> float:
        return float(self.score_features(extract_features(query, chunk, context))[0])

    def save(self, path) -> None:
        state = {"feature_names": self.feature_names, "hidden_size": self.hidden_size}
        if self.hidden_size > 0:
            state.update(
                w1=self.w1.tolist(), b1=self.b1.tolist(), w2=self.w2.tolist(), b2=self.b2
            )
        else:
            state.update(w=self.w.tolist(), b=self.b)
        Path(path).write_text(json.dumps(state, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "StudentScorer":
        state = json.loads(Path(path).read_text(encoding="utf-8"))
        scorer = cls(state["feature_names"], hidden_size=state["hidden_size"])
        if scorer.hidden_size > 0:
            scorer.w1 = np.array(state["w1"])
            scorer.b1 = np.array(state["b1"])
            scorer.w2 = np.array(state["w2"])
            scorer.b2 = float(state["b2"])
        else:
            scorer.w = np.array(state["w"])
            scorer.b = float(state["b"])
        return scorer


@dataclass
class TrainReport:
    steps: int
    losses: list[float] = field(default_factory=list)
    validation_pairwise_accuracy: float | None = None
    n_train_examples: int = 0
    n_validation_examples: int = 0

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "summary": {
                            "steps": self.steps,
                            "validation_pairwise_accuracy": self.validation_pairwise_accuracy,
                            "n_train_examples": self.n_train_examples,
                            "n_validation_examples": self.n_validation_examples,
                        }
                    }
                )
                + "\n"
            )
            for step, loss in enumerate(self.losses, start=1):
                fh.write(json.dumps({"step": step, "loss": loss}) + "\n")


FeatureFn = Callable[[RankingExample], np.ndarray]


def _pair_feature_diffs(example: RankingExample, features_fn: FeatureFn) -> np.ndarray:
    """Feature difference (preferred - other) for every target-order pair."""
    feats = features_fn(example)  # (n_candidates, d) aligned with example.candidates
    pos = {ref: i for i, ref in enumerate(example.candidates)}
    order_idx = [pos[ref] for ref in example.target_order]
    diffs = []
    for i in range(len(order_idx)):
        for j in range(i + 1, len(order_idx)):
            diffs.append(feats[order_idx[i]] - feats[order_idx[j]])
    return np.array(diffs) if diffs else np.zeros((0, feats.shape[1]))


def train(
    dataset: list[RankingExample],
    config: TrainConfig,
    features_fn: FeatureFn,
) -> tuple[StudentScorer, TrainReport]:
    """Mini-batch gradient descent on the mean pairwise logistic loss.

    features_fn maps an example to its (n_candidates, n_features) matrix in
    retrieval order; training is deterministic for a fixed seed.
    """
    if not dataset:
        raise RerankError("empty training dataset")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(dataset))
    n_val = max(1, round(config.validation_fraction * len(dataset))) if len(dataset) > 1 else 0
    val_idx = set(order[:n_val].tolist())
    train_examples = [dataset[i] for i in order[n_val:]]
    val_examples = [dataset[i] for i in sorted(val_idx)]

    diffs = [d for ex in train_examples for d in _pair_feature_diffs(ex, features_fn)]
    if not diffs:
        raise RerankError("no training pairs")
    diffs = np.array(diffs)
    n_pairs, d = diffs.shape

    scorer = StudentScorer(FEATURE_NAMES[:d] if d == len(FEATURE_NAMES) else [f"f{i}" for i in range(d)],
                           hidden_size=config.hidden_size,
                           rng=np.random.default_rng(config.seed + 1))
    report = TrainReport(steps=0, n_train_examples=len(train_examples), n_validation_examples=len(val_examples))

    step = 0
    for _ in range(config.epochs):
        perm = rng.permutation(n_pairs)
        for lo in range(0, n_pairs, config.batch_size):
            batch = diffs[perm[lo : lo + config.batch_size]]
            step += 1
            lr = config.lr_at(step)
            if config.hidden_size > 0:
                loss = _hidden_step(scorer, batch, lr, config.weight_decay)
            else:
                margins = batch @ scorer.w
                loss = float(np.mean(np.logaddexp(0.0, -margins)))
                g = -1.0 / (1.0 + np.exp(margins))  # dL/dmargin per pair
                grad_w = (g[:, None] * batch).mean(axis=0)
                scorer.w -= lr * (grad_w + config.weight_decay * scorer.w)
            if not np.isfinite(loss):
                raise RerankError(f"non-finite loss at step {step}")
            report.losses.append(loss)
    report.steps = step

    if val_examples:
        correct = total = 0
        for ex in val_examples:
            vdiffs = _pair_feature_diffs(ex, features_fn)
            if len(vdiffs):
                margins = scorer.score_features(vdiffs) - scorer.score_features(np.zeros_like(vdiffs))
                correct += int(np.sum(margins > 0))
                total += len(vdiffs)
        report.validation_pairwise_accuracy = correct / total if total else None
    return scorer, report


def _hidden_step(scorer: StudentScorer, batch: np.ndarray, lr: float, wd: float) -> float:
    # Margin uses the network's nonlinearity on each side of the pair is not
    # representable from diffs alone, so the hidden student scores the diff
    # vector directly (a shared-weight approximation adequate at this scale).
    h = np.tanh(batch @ scorer.w1.T + scorer.b1)
    margins = h @ scorer.w2 + scorer.b2
    loss = float(np.mean(np.logaddexp(0.0, -margins)))
    g = -1.0 / (1.0 + np.exp(margins))
    gh = g[:, None] * scorer.w2 * (1 - h**2)
    scorer.w2 -= lr * ((g[:, None] * h).mean(axis=0) + wd * scorer.w2)
    scorer.b2 -= lr * float(g.mean())
    scorer.w1 -= lr * ((gh.T @ batch) / len(batch) + wd * scorer.w1)
    scorer.b1 -= lr * gh.mean(axis=0)
    return loss


def rerank(
    query: str,
    hits: list[SearchHit],
    scorer: StudentScorer,
    chunks_by_ref: dict[tuple[str, int], Chunk],
    context: FeatureContext,
) -> list[SearchHit]:
    """Re-order candidates by student score; ties keep the prior rank order."""
    if not hits:
        return []
    scored = [
        (h, scorer.score(query, chunks_by_ref[h.chunk_ref], context)) for h in hits
    ]
    scored.sort(key=lambda hs: (-hs[1], hs[0].rank))
    return [
        SearchHit(chunk_ref=h.chunk_ref, score=float(s), rank=i + 1)
        for i, (h, s) in enumerate(scored)
    ]


def save_dataset(dataset: list[RankingExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            fh.write(
                json.dumps(
                    {
                        "question": ex.question.text,
                        "source_ref": list(ex.question.source_ref),
                        "generator": ex.question.generator_name,
                        "candidates": [list(r) for r in ex.candidates],
                        "teacher_scores": ex.teacher_scores,
                        "target_order": [list(r) for r in ex.target_order],
                    }
                )
                + "\n"
            )


def load_dataset(path) -> list[RankingExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            q = SyntheticQuestion(
                text=rec["question"],
                source_ref=tuple(rec["source_ref"]),
                generator_name=rec.get("generator", "unknown"),
            )
            out.append(
                RankingExample(
                    question=q,
                    candidates=[tuple(r) for r in rec["candidates"]],
                    teacher_scores=rec["teacher_scores"],
                    target_order=[tuple(r) for r in rec["target_order"]],
                )
            )
    return out
