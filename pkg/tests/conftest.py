import numpy as np
import pytest

from ragdesk.corpus import Chunk

# filler vocabulary shared across synthetic chunks; questions never use these
_FILLERS = [f"filler{i:02d}" for i in range(80)]
_VERBS = ["configure", "reset", "activate", "cancel", "upgrade", "troubleshoot"]


def make_synthetic_chunks(n_docs: int, seed: int = 0, words_per_chunk: int = 8) -> list[Chunk]:
    """One chunk per document: a short title (verb + unique noun) and a body of
    common fillers plus two unique tokens, so lexical signals identify the
    source exactly while dense hashed-projection signals stay noisy."""
    rng = np.random.default_rng(seed)
    chunks = []
    for i in range(n_docs):
        verb = _VERBS[i % len(_VERBS)]
        title = f"{verb} zznoun{i}"
        fillers = rng.choice(_FILLERS, size=words_per_chunk, replace=True).tolist()
        body_words = fillers + [f"zzuniq{i}a", f"zzuniq{i}b"]
        rng.shuffle(body_words)
        text = " ".join(body_words)
        chunks.append(
            Chunk(
                origin_id=f"doc-{i}",
                local_id=0,
                title=title,
                text=text,
                char_count=len(text),
                allowed_roles=frozenset({"agent"}),
            )
        )
    return chunks


@pytest.fixture(scope="session")
def synthetic_chunks():
    return make_synthetic_chunks(300, seed=42)


@pytest.fixture(scope="session")
def distillation_setup(synthetic_chunks):
    """Shared desk-scale distillation fixture: indexes, trained student, dataset."""
    from ragdesk.cli import distill
    from ragdesk.index import Bm25Index, DenseIndex, HashedBowProvider

    provider = HashedBowProvider(dimension=32, seed=13)
    dense = DenseIndex.build(synthetic_chunks, provider)
    bm25 = Bm25Index(synthetic_chunks)
    scorer, report, dataset = distill(
        synthetic_chunks, dense, bm25, questions_per_chunk=3, seed=0
    )
    return {
        "chunks": synthetic_chunks,
        "provider": provider,
        "dense": dense,
        "bm25": bm25,
        "scorer": scorer,
        "report": report,
        "dataset": dataset,
    }
