"""Subword tokenization and pair-context input sequences.

A classification input is laid out as

    [CLS] gene-mention disease-mention [SEP] abstract text [SEP]

capped at 350 subword tokens; when the cap would be exceeded, abstract tokens
are dropped from the tail and the closing [SEP] is kept. Tokenization is
greedy longest-match WordPiece against a fixed vocabulary, with continuation
pieces prefixed ``##``.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CorpusStore, Label, RelationInstance

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)

MAX_SEQUENCE_LENGTH = 350


class VocabError(ValueError):
    pass


class PairTooLongError(ValueError):
    """The pair segment alone cannot fit the length cap."""


class Vocab:
    """Ordered subword inventory; line number in the vocab file = token index."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.index: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise VocabError(f"duplicate token {tok!r} at indices {self.index[tok]} and {i}")
            self.index[tok] = i
        missing = [t for t in SPECIAL_TOKENS if t not in self.index]
        if missing:
            raise VocabError(f"vocabulary lacks special tokens: {', '.join(missing)}")
        self.pad_id = self.index[PAD_TOKEN]
        self.unk_id = self.index[UNK_TOKEN]
        self.cls_id = self.index[CLS_TOKEN]
        self.sep_id = self.index[SEP_TOKEN]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @classmethod
    def with_specials(cls, subwords: Iterable[str]) -> "Vocab":
        """Build a vocabulary with the four specials prepended."""
        return cls(list(SPECIAL_TOKENS) + [t for t in subwords if t not in SPECIAL_TOKENS])


def load_vocab(path: str | Path) -> Vocab:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return Vocab([line.rstrip("\n") for line in lines if line.strip()])


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    Path(path).write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")


def _is_punctuation(ch: str) -> bool:
    return not ch.isalnum() and not ch.isspace()


def basic_split(text: str, lowercase: bool = False) -> list[str]:
    """Whitespace split with punctuation characters broken out as own tokens."""
    if lowercase:
        text = text.lower()
    words: list[str] = []
    current: list[str] = []
    for ch in text:
        if ch.isspace():
            if current:
                words.append("".join(current))
                current = []
        elif _is_punctuation(ch):
            if current:
                words.append("".join(current))
                current = []
            words.append(ch)
        else:
            current.append(ch)
    if current:
        words.append("".join(current))
    return words


def _wordpiece_word(word: str, vocab: Vocab) -> list[str]:
    if word in vocab:
        return [word]
    pieces: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while start < end:
            candidate = word[start:end]
            if start > 0:
                candidate = "##" + candidate
            if candidate in vocab:
                piece = candidate
                break
            end -= 1
        if piece is None:
            return [UNK_TOKEN]
        pieces.append(piece)
        start = end
    return pieces


def wordpiece_tokenize(text: str, vocab: Vocab, lowercase: bool = False) -> list[str]:
    """Greedy longest-match-first subword segmentation of pre-split words.

    A word with no valid segmentation collapses to a single [UNK].
    """
    tokens: list[str] = []
    for word in basic_split(text, lowercase=lowercase):
        tokens.extend(_wordpiece_word(word, vocab))
    return tokens


def tokens_to_ids(tokens: Sequence[str], vocab: Vocab) -> list[int]:
    unk = vocab.unk_id
    return [vocab.index.get(t, unk) for t in tokens]


@dataclass(frozen=True)
class EncodedExample:
    """One classification input: subword ids, segment ids, label, provenance keys."""

    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    label: Label | None = None
    doc_id: str | None = None
    gene_id: str | None = None
    disease_id: str | None = None

    def __len__(self) -> int:
        return len(self.token_ids)


def build_sequence(
    gene_surface: str,
    disease_surface: str,
    abstract_text: str,
    vocab: Vocab,
    max_len: int = MAX_SEQUENCE_LENGTH,
    lowercase: bool = False,
    label: Label | None = None,
    doc_id: str | None = None,
    gene_id: str | None = None,
    disease_id: str | None = None,
) -> EncodedExample:
    """Assemble [CLS] pair [SEP] abstract [SEP], truncating only the abstract.

    The gene and disease surfaces are joined by a single space inside the
    first segment. Raises :class:`PairTooLongError` when even an empty
    abstract cannot fit (pathologically long mentions).
    """
    gene_tokens = wordpiece_tokenize(gene_surface, vocab, lowercase=lowercase)
    disease_tokens = wordpiece_tokenize(disease_surface, vocab, lowercase=lowercase)
    if not gene_tokens or not disease_tokens:
        raise ValueError("gene and disease surfaces must be non-empty")
    head = [CLS_TOKEN] + gene_tokens + disease_tokens + [SEP_TOKEN]
    if len(head) + 1 > max_len:
        raise PairTooLongError(
            f"pair segment needs {len(head) + 1} tokens, exceeding the cap of {max_len}"
        )
    budget = max_len - len(head) - 1
    abstract_tokens = wordpiece_tokenize(abstract_text, vocab, lowercase=lowercase)[:budget]
    tokens = head + abstract_tokens + [SEP_TOKEN]
    segment_ids = [0] * len(head) + [1] * (len(abstract_tokens) + 1)
    return EncodedExample(
        token_ids=tuple(tokens_to_ids(tokens, vocab)),
        segment_ids=tuple(segment_ids),
        label=label,
        doc_id=doc_id,
        gene_id=gene_id,
        disease_id=disease_id,
    )


def encode_instances(
    instances: Sequence[RelationInstance],
    store: CorpusStore,
    vocab: Vocab,
    max_len: int = MAX_SEQUENCE_LENGTH,
    lowercase: bool = False,
) -> list[EncodedExample]:
    examples = []
    for inst in instances:
        doc = store.documents.get(inst.doc_id)
        if doc is None:
            raise ValueError(f"instance references unknown doc_id {inst.doc_id!r}")
        examples.append(
            build_sequence(
                inst.gene_surface,
                inst.disease_surface,
                doc.text,
                vocab,
                max_len=max_len,
                lowercase=lowercase,
                label=inst.label,
                doc_id=inst.doc_id,
                gene_id=inst.gene_grounding_id,
                disease_id=inst.disease_grounding_id,
            )
        )
    return examples


@dataclass(frozen=True)
class PaddedBatch:
    """Dense batch arrays; mask is 1.0 on real positions, 0.0 on PAD."""

    token_ids: np.ndarray  # (B, L) int64
    segment_ids: np.ndarray  # (B, L) int64
    mask: np.ndarray  # (B, L) float64
    labels: np.ndarray | None  # (B,) int64, None when any example is unlabeled


def pad_batch(examples: Sequence[EncodedExample], pad_id: int = 0) -> PaddedBatch:
    if not examples:
        raise ValueError("cannot pad an empty batch")
    max_len = max(len(e) for e in examples)
    n = len(examples)
    ids = np.full((n, max_len), pad_id, dtype=np.int64)
    segs = np.zeros((n, max_len), dtype=np.int64)
    mask = np.zeros((n, max_len), dtype=np.float64)
    for i, e in enumerate(examples):
        ids[i, : len(e)] = e.token_ids
        segs[i, : len(e)] = e.segment_ids
        mask[i, : len(e)] = 1.0
    labels = None
    if all(e.label is not None for e in examples):
        labels = np.asarray([int(e.label) for e in examples], dtype=np.int64)
    return PaddedBatch(token_ids=ids, segment_ids=segs, mask=mask, labels=labels)


def write_encoded(examples: Sequence[EncodedExample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in examples:
            record = {
                "token_ids": list(e.token_ids),
                "segment_ids": list(e.segment_ids),
                "label": e.label.token if e.label is not None else None,
                "doc_id": e.doc_id,
                "gene_id": e.gene_id,
                "disease_id": e.disease_id,
            }
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def load_encoded(path: str | Path) -> list[EncodedExample]:
    examples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            examples.append(
                EncodedExample(
                    token_ids=tuple(record["token_ids"]),
                    segment_ids=tuple(record["segment_ids"]),
                    label=Label.from_token(record["label"]) if record.get("label") else None,
                    doc_id=record.get("doc_id"),
                    gene_id=record.get("gene_id"),
                    disease_id=record.get("disease_id"),
                )
            )
    return examples
