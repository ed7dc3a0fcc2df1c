"""Command-line entry points for the pipeline: ingest, index, train-reranker,
eval, abtest, serve, and one-shot ask."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import abtest as abtest_mod
from . import corpus as corpus_mod
from . import evalkit, rerank
from .answer import AnswerPipeline, MockReader
from .corpus import ChunkingConfig
from .index import Bm25Index, Bm25Params, DenseIndex, dense_search, get_provider, load_snapshot, save_snapshot
from .gateway import GatewayService, ServiceConfig, create_app


def _chunk_all(docs, config: ChunkingConfig):
    return [c for doc in docs for c in corpus_mod.split_into_chunks(doc, config)]


@click.group()
def main():
    """Retrieval-augmented QA toolkit."""


_chunking_options = [
    click.option("--split-length", default=300, show_default=True),
    click.option("--split-overlap", default=50, show_default=True),
    click.option("--max-chars", default=1000, show_default=True),
]


def chunking_options(fn):
    for opt in reversed(_chunking_options):
        fn = opt(fn)
    return fn


@main.command()
@click.argument("corpus_path", type=click.Path(exists=True))
@chunking_options
def ingest(corpus_path, split_length, split_overlap, max_chars):
    """Validate a corpus file and report chunk counts."""
    docs = corpus_mod.load_corpus(corpus_path)
    config = ChunkingConfig(
        split_length=split_length, split_overlap=split_overlap, max_chars_check=max_chars
    )
    chunks = _chunk_all(docs, config)
    click.echo(json.dumps({"docs": len(docs), "chunks": len(chunks)}))


@main.command("index")
@click.argument("corpus_path", type=click.Path(exists=True))
@click.argument("snapshot_dir", type=click.Path())
@click.option("--provider", default="hashed-bow", show_default=True)
@click.option("--k1", default=1.0, show_default=True)
@click.option("--b", default=0.5, show_default=True)
@chunking_options
def build_index(corpus_path, snapshot_dir, provider, k1, b, split_length, split_overlap, max_chars):
    """Chunk, embed, and write an index snapshot directory."""
    docs = corpus_mod.load_corpus(corpus_path)
    config = ChunkingConfig(
        split_length=split_length, split_overlap=split_overlap, max_chars_check=max_chars
    )
    chunks = _chunk_all(docs, config)
    prov = get_provider(provider)
    dense = DenseIndex.build(chunks, prov)
    params = Bm25Params(k1=k1, b=b)
    save_snapshot(snapshot_dir, dense, chunks, params)
    click.echo(json.dumps({"chunks": len(chunks), "snapshot": str(snapshot_dir)}))


@main.command("train-reranker")
@click.argument("snapshot_dir", type=click.Path(exists=True))
@click.argument("model_path", type=click.Path())
@click.option("--report-path", type=click.Path(), default=None)
@click.option("--questions-per-chunk", default=2, show_default=True)
@click.option("--learning-rate", default=1e-2, show_default=True)
@click.option("--epochs", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
def train_reranker(snapshot_dir, model_path, report_path, questions_per_chunk, learning_rate, epochs, seed):
    """Distill a student reranker from synthetic questions over a snapshot."""
    chunks, dense, bm25 = load_snapshot(snapshot_dir)
    scorer, report, _ = distill(
        chunks, dense, bm25,
        questions_per_chunk=questions_per_chunk,
        learning_rate=learning_rate, epochs=epochs, seed=seed,
    )
    scorer.save(model_path)
    if report_path:
        report.save(report_path)
    click.echo(
        json.dumps(
            {
                "model": str(model_path),
                "steps": report.steps,
                "validation_pairwise_accuracy": report.validation_pairwise_accuracy,
            }
        )
    )


def distill(
    chunks,
    dense: DenseIndex,
    bm25: Bm25Index,
    questions_per_chunk: int = 2,
    learning_rate: float = 1e-2,
    epochs: int = 1,
    seed: int = 0,
    top_k: int = 20,
):
    """Shared distillation path: questions -> recall filter -> teacher ranking
    -> RankNet training. Returns (scorer, report, dataset)."""
    token_counts: dict[str, int] = {}
    from .index import tokenize

    for c in chunks:
        for t, n in _counts(tokenize(c.text)).items():
            token_counts[t] = token_counts.get(t, 0) + n
    generator = rerank.TemplateQuestionGenerator(
        questions_per_chunk=questions_per_chunk, token_counts=token_counts
    )
    questions = rerank.generate_questions(chunks, generator)
    chunks_by_ref = {c.ref: c for c in chunks}
    teacher = rerank.LexicalOverlapTeacher()
    dataset = []
    for q in questions:
        hits = dense_search(q.text, dense, min(top_k, len(dense)))
        if not rerank.filter_by_recall(q, hits):
            continue
        example = rerank.build_teacher_ranking(q, hits, teacher, chunks_by_ref)
        if example is not None:
            dataset.append(example)
    config = rerank.TrainConfig(learning_rate=learning_rate, epochs=epochs, seed=seed)
    features_fn = make_features_fn(dense, bm25, chunks_by_ref)
    scorer, report = rerank.train(dataset, config, features_fn)
    return scorer, report, dataset


def make_features_fn(dense: DenseIndex, bm25: Bm25Index, chunks_by_ref):
    """Feature matrix for a RankingExample's candidates, in retrieval order."""
    import numpy as np

    from .index import SearchHit

    def features_fn(example: rerank.RankingExample) -> np.ndarray:
        query = example.question.text
        # candidates are stored in retrieval order; ranks are 1-based
        hits = [
            SearchHit(chunk_ref=ref, score=0.0, rank=i + 1)
            for i, ref in enumerate(example.candidates)
        ]
        q = dense.embed_query(query)
        pos = {ref: i for i, ref in enumerate(dense.refs)}
        ctx = rerank.FeatureContext.from_retrieval(query, hits, bm25)
        for h in hits:
            if h.chunk_ref in pos:
                ctx.dense_by_ref[h.chunk_ref] = float(dense.matrix[pos[h.chunk_ref]] @ q)
        return np.stack(
            [
                rerank.extract_features(query, chunks_by_ref[ref], ctx)
                for ref in example.candidates
            ]
        )

    return features_fn


def _counts(tokens):
    out: dict[str, int] = {}
    for t in tokens:
        out[t] = out.get(t, 0) + 1
    return out


@main.command("eval")
@click.argument("snapshot_dir", type=click.Path(exists=True))
@click.argument("qrels_path", type=click.Path(exists=True))
@click.argument("queries_path", type=click.Path(exists=True))
@click.option("--model-path", type=click.Path(exists=True), default=None)
@click.option("--report-path", type=click.Path(), default=None)
@click.option("--k", default=20, show_default=True)
def eval_cmd(snapshot_dir, qrels_path, queries_path, model_path, report_path, k):
    """Rank queries against a snapshot and score them against qrels.

    queries file: one JSON object per line with query_id and text.
    """
    chunks, dense, bm25 = load_snapshot(snapshot_dir)
    chunks_by_ref = {c.ref: c for c in chunks}
    qrels = evalkit.load_qrels(qrels_path)
    scorer = rerank.StudentScorer.load(model_path) if model_path else None
    runs = []
    with open(queries_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            hits = dense_search(rec["text"], dense, min(k, len(dense)))
            if scorer is not None:
                ctx = rerank.FeatureContext.from_retrieval(rec["text"], hits, bm25)
                hits = rerank.rerank(rec["text"], hits, scorer, chunks_by_ref, ctx)
            runs.append((rec["query_id"], hits))
    report = evalkit.evaluate_ranking(runs, qrels)
    if report_path:
        report.save(report_path)
    click.echo(json.dumps(report.summary()))


@main.command("abtest")
@click.argument("records_path", type=click.Path(exists=True))
def abtest_cmd(records_path):
    """Analyze an experiment exposure/metrics file and print the results table."""
    records = abtest_mod.load_records(records_path)
    results = abtest_mod.analyze_records(records)
    click.echo(abtest_mod.format_results(results))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(config_path, corpus_path, host, port):
    """Run the HTTP gateway (mock reader unless configured otherwise)."""
    import uvicorn

    config = ServiceConfig.from_file(config_path) if config_path else ServiceConfig()
    service = GatewayService(config)
    if corpus_path:
        service.ingest(corpus_mod.load_corpus(corpus_path))
    uvicorn.run(create_app(service), host=host, port=port)


@main.command()
@click.argument("question")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--role", default=None)
@click.option("--model-path", type=click.Path(exists=True), default=None)
def ask(question, corpus_path, role, model_path):
    """One-shot question answering over a corpus file with the mock reader."""
    docs = corpus_mod.load_corpus(corpus_path)
    config = ChunkingConfig()
    chunks = _chunk_all(docs, config)
    provider = get_provider("hashed-bow")
    pipeline = AnswerPipeline(
        chunks=chunks,
        dense=DenseIndex.build(chunks, provider),
        bm25=Bm25Index(chunks),
        reader=MockReader(),
        scorer=rerank.StudentScorer.load(model_path) if model_path else None,
    )
    envelope = pipeline.answer_question(question, role=role)
    click.echo(
        json.dumps(
            {
                "answer_text": envelope.answer_text,
                "citations": [list(r) for r in envelope.citations],
                "no_answer": envelope.no_answer,
            },
            ensure_ascii=False,
        )
    )


if __name__ == "__main__":
    sys.exit(main())
