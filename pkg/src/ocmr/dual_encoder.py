"""Trainable dense retriever: a query tower and a document tower scored by a
scaled dot product.

Each desk-scale tower is a token embedding with masked mean pooling; the query
tower starts as a copy of the document tower so untrained tokens stay aligned
across towers. Training minimizes softmax cross-entropy of the gold document
against ``num_negatives`` rule texts sampled uniformly from the seen knowledge
base (never the gold itself). Adam without weight decay keeps never-sampled
embeddings at their shared initialization.
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass

import torch
from torch import nn

from .corpus import DatasetSplit, KnowledgeBase
from .errors import ConfigError
from .retrieval import RetrievalResult, query_for, rank_scores
from .text import content_tokenize


@dataclass
class DualEncoderConfig:
    embedding_dim: int = 128
    num_negatives: int = 7
    temperature: float = 1.0
    steps: int = 400
    batch_size: int = 16
    learning_rate: float = 5e-3
    seed: int = 13

    def __post_init__(self):
        if self.num_negatives < 1:
            raise ConfigError("num_negatives must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


PAD_ID, UNK_ID = 0, 1


def build_retriever_vocab(kb: KnowledgeBase, split: DatasetSplit | None = None) -> dict[str, int]:
    tokens: set[str] = set()
    for doc_id in sorted(kb.documents):
        doc = kb[doc_id]
        tokens.update(content_tokenize(f"{doc.title} {doc.body}"))
    if split is not None:
        for inst in split:
            tokens.update(content_tokenize(query_for(inst).text))
    vocab = {"<pad>": PAD_ID, "<unk>": UNK_ID}
    for token in sorted(tokens):
        vocab[token] = len(vocab)
    return vocab


def encode_ids(text: str, vocab: dict[str, int]) -> list[int]:
    return [vocab.get(tok, UNK_ID) for tok in content_tokenize(text)] or [UNK_ID]


class MeanPoolEncoder(nn.Module):
    def __init__(self, vocab_size: int, embedding_dim: int):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, embedding_dim, padding_idx=PAD_ID)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        """token_ids [B, L] padded with PAD_ID -> [B, embedding_dim]."""
        mask = (token_ids != PAD_ID).unsqueeze(-1)
        embedded = self.embedding(token_ids) * mask
        counts = mask.sum(dim=1).clamp(min=1)
        return embedded.sum(dim=1) / counts


class DualEncoder(nn.Module):
    def __init__(self, vocab: dict[str, int], config: DualEncoderConfig):
        super().__init__()
        self.vocab = vocab
        self.config = config
        torch.manual_seed(config.seed)
        self.doc_encoder = MeanPoolEncoder(len(vocab), config.embedding_dim)
        self.query_encoder = copy.deepcopy(self.doc_encoder)

    def _batch(self, texts: list[str]) -> torch.Tensor:
        ids = [encode_ids(t, self.vocab) for t in texts]
        longest = max(len(x) for x in ids)
        out = torch.full((len(ids), longest), PAD_ID, dtype=torch.long)
        for row, x in enumerate(ids):
            out[row, : len(x)] = torch.tensor(x)
        return out

    def encode_queries(self, texts: list[str]) -> torch.Tensor:
        return self.query_encoder(self._batch(texts))

    def encode_documents(self, texts: list[str]) -> torch.Tensor:
        return self.doc_encoder(self._batch(texts))


def step_loss(
    query_vecs: torch.Tensor, doc_vecs: torch.Tensor, temperature: float
) -> torch.Tensor:
    """Cross-entropy of the positive (column 0) among the candidate scores.

    query_vecs [B, d]; doc_vecs [B, m+1, d] with the positive first.
    """
    scores = torch.bmm(doc_vecs, query_vecs.unsqueeze(-1)).squeeze(-1) / temperature
    targets = torch.zeros(scores.shape[0], dtype=torch.long)
    return nn.functional.cross_entropy(scores, targets)


def doc_text(kb: KnowledgeBase, doc_id: str) -> str:
    doc = kb[doc_id]
    return f"{doc.title} {doc.body}"


def train_dual_encoder(
    kb: KnowledgeBase,
    train_split: DatasetSplit,
    config: DualEncoderConfig,
    log: list[float] | None = None,
) -> DualEncoder:
    """Train on (query, gold doc) pairs with random seen negatives per step."""
    seen = sorted(kb.seen_ids)
    if config.num_negatives >= len(seen):
        raise ConfigError(
            f"num_negatives={config.num_negatives} must be smaller than the "
            f"seen knowledge base ({len(seen)} documents)"
        )
    model = DualEncoder(build_retriever_vocab(kb, train_split), config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = random.Random(config.seed)
    instances = list(train_split.instances)
    if not instances:
        raise ConfigError("cannot train the dense retriever on an empty split")

    model.train()
    for _ in range(config.steps):
        batch = [instances[rng.randrange(len(instances))] for _ in range(config.batch_size)]
        queries = [query_for(inst).text for inst in batch]
        doc_texts = []
        for inst in batch:
            negatives = rng.sample(
                [doc_id for doc_id in seen if doc_id != inst.gold_doc_id],
                config.num_negatives,
            )
            doc_texts.extend([doc_text(kb, inst.gold_doc_id)] +
                             [doc_text(kb, n) for n in negatives])
        q_vecs = model.encode_queries(queries)
        d_vecs = model.encode_documents(doc_texts).view(
            len(batch), config.num_negatives + 1, -1
        )
        loss = step_loss(q_vecs, d_vecs, config.temperature)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        if log is not None:
            log.append(float(loss.detach()))
    model.eval()
    return model


def dense_retrieve_split(
    model: DualEncoder,
    kb: KnowledgeBase,
    split: DatasetSplit,
    k: int = 20,
) -> dict[str, RetrievalResult]:
    doc_ids = sorted(kb.documents)
    with torch.no_grad():
        doc_matrix = model.encode_documents([doc_text(kb, d) for d in doc_ids])
        results = {}
        for inst in split:
            q_vec = model.encode_queries([query_for(inst).text])[0]
            scores = (doc_matrix @ q_vec) / model.config.temperature
            results[inst.utterance_id] = rank_scores(
                dict(zip(doc_ids, scores.tolist())), k
            )
    return results
