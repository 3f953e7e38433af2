"""Word-level vocabulary for the desk-scale reader.

Four structural markers are dedicated vocabulary items: ``[EDU]`` opens each
discourse-unit block (the encoder output at that position is the unit's
sentence-level representation), ``[SCN]`` opens the scenario, ``[USR]`` the
user question, and ``[HIS]``/``[ANS]`` each history turn's question/answer.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .text import word_tokenize

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
EDU_MARKER, SCENARIO_MARKER, QUESTION_MARKER, HISTORY_MARKER, ANSWER_MARKER = (
    "[EDU]",
    "[SCN]",
    "[USR]",
    "[HIS]",
    "[ANS]",
)
SPECIALS = (PAD, BOS, EOS, UNK, EDU_MARKER, SCENARIO_MARKER, QUESTION_MARKER,
            HISTORY_MARKER, ANSWER_MARKER)
# specials always occupy the first vocabulary slots, so marker ids are fixed
ANSWER_MARKER_ID = SPECIALS.index(ANSWER_MARKER)


@dataclass
class Vocab:
    tokens: list[str]

    def __post_init__(self):
        self.token_to_id = {token: i for i, token in enumerate(self.tokens)}
        self.pad_id = self.token_to_id[PAD]
        self.bos_id = self.token_to_id[BOS]
        self.eos_id = self.token_to_id[EOS]
        self.unk_id = self.token_to_id[UNK]
        self.edu_id = self.token_to_id[EDU_MARKER]

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id.get(tok, self.unk_id) for tok in word_tokenize(text)]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def build_vocab(texts, max_size: int | None = None) -> Vocab:
    """Vocabulary from an iterable of raw strings, most frequent first."""
    counts: Counter = Counter()
    for text in texts:
        counts.update(word_tokenize(text))
    ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    if max_size is not None:
        ordered = ordered[: max(0, max_size - len(SPECIALS))]
    return Vocab(tokens=list(SPECIALS) + [token for token, _ in ordered])


def vocab_texts(kb, splits) -> list[str]:
    """All raw text the reader vocabulary is built from."""
    texts = []
    for doc_id in sorted(kb.documents):
        doc = kb[doc_id]
        texts.append(doc.title)
        texts.append(doc.body)
    for split in splits:
        for inst in split:
            texts.append(inst.question)
            texts.append(inst.scenario)
            texts.append(inst.gold_answer)
            for turn in inst.history:
                texts.append(turn.follow_up_question)
                texts.append(turn.follow_up_answer)
    return texts
