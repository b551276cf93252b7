"""Canonical corpus model: abstracts, gold entity mentions, gold relation triples.

Corpus files are UTF-8 JSON-lines. A corpus record carries ``doc_id`` and
``text`` (or ``title`` + ``body``, concatenated at load time). An annotation
record carries ``doc_id``, ``mentions`` and ``relations``; relation labels are
the four positive tokens (gold data never contains NO_REL).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path


class Label(IntEnum):
    """Five-way relation class. Integer codes are the canonical class indices."""

    NO_REL = 0
    LOF = 1
    GOF = 2
    REG = 3
    COM = 4

    @property
    def token(self) -> str:
        return self.name

    @classmethod
    def from_token(cls, token: str) -> "Label":
        try:
            return cls[token]
        except KeyError:
            raise ValueError(f"unknown label token {token!r}") from None


POSITIVE_LABELS: tuple[Label, ...] = (Label.LOF, Label.GOF, Label.REG, Label.COM)
NUM_CLASSES = len(Label)


class EntityType(Enum):
    GENE = "Gene"
    DISEASE = "Disease"

    @classmethod
    def from_token(cls, token: str) -> "EntityType":
        for et in cls:
            if et.value == token:
                return et
        raise ValueError(f"unknown entity type {token!r} (expected Gene|Disease)")


class Provenance(Enum):
    GOLD = "GOLD"
    GENERATED_NEGATIVE = "GENERATED_NEGATIVE"


class CorpusFormatError(ValueError):
    """Malformed record; message carries file path and 1-based line number."""


class CorpusValidationError(ValueError):
    """Structurally parseable input that violates a corpus invariant."""


@dataclass(frozen=True)
class AbstractDoc:
    doc_id: str
    text: str


@dataclass(frozen=True)
class EntityMention:
    """A grounded, typed text span inside one abstract.

    ``start``/``end`` are 0-based character offsets, end-exclusive; ``surface``
    must equal the document slice ``text[start:end]``.
    """

    doc_id: str
    start: int
    end: int
    surface: str
    etype: EntityType
    grounding_id: str | None = None


@dataclass(frozen=True)
class RelationInstance:
    """A (gene, disease, label) triple scoped to one abstract."""

    doc_id: str
    gene_grounding_id: str
    gene_surface: str
    disease_grounding_id: str
    disease_surface: str
    label: Label
    provenance: Provenance

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.doc_id, self.gene_grounding_id, self.disease_grounding_id)


@dataclass
class CorpusStore:
    """Validated, immutable-after-load container for one corpus."""

    documents: dict[str, AbstractDoc] = field(default_factory=dict)
    gold_mentions: list[EntityMention] = field(default_factory=list)
    gold_relations: list[RelationInstance] = field(default_factory=list)


def _parse_jsonl(path: Path):
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if not isinstance(record, dict):
                raise CorpusFormatError(f"{path}:{lineno}: record is not an object")
            yield lineno, record


def _require(record: dict, key: str, path: Path, lineno: int):
    if key not in record:
        raise CorpusFormatError(f"{path}:{lineno}: missing key {key!r}")
    return record[key]


def load_corpus(
    corpus_path: str | Path,
    annotations_path: str | Path | None = None,
    include_title: bool = True,
) -> CorpusStore:
    """Load and validate a corpus, optionally with its gold annotations.

    Records with separate ``title``/``body`` fields are concatenated with a
    single space when ``include_title`` is true; otherwise only the body is
    kept. Raises :class:`CorpusFormatError` for unparseable records and
    :class:`CorpusValidationError` for invariant violations, both naming the
    offending file and line.
    """
    corpus_path = Path(corpus_path)
    store = CorpusStore()
    for lineno, record in _parse_jsonl(corpus_path):
        doc_id = str(_require(record, "doc_id", corpus_path, lineno))
        if "text" in record:
            text = record["text"]
        else:
            body = _require(record, "body", corpus_path, lineno)
            title = record.get("title", "")
            text = f"{title} {body}" if include_title and title else body
        if not doc_id:
            raise CorpusValidationError(f"{corpus_path}:{lineno}: empty doc_id")
        if not text:
            raise CorpusValidationError(f"{corpus_path}:{lineno}: empty text for doc {doc_id}")
        if doc_id in store.documents:
            raise CorpusValidationError(f"{corpus_path}:{lineno}: duplicate doc_id {doc_id!r}")
        store.documents[doc_id] = AbstractDoc(doc_id=doc_id, text=text)

    if annotations_path is not None:
        _load_annotations(store, Path(annotations_path))
    return store


def _load_annotations(store: CorpusStore, path: Path) -> None:
    seen_keys: set[tuple[str, str, str]] = set()
    for lineno, record in _parse_jsonl(path):
        doc_id = str(_require(record, "doc_id", path, lineno))
        doc = store.documents.get(doc_id)
        if doc is None:
            raise CorpusValidationError(f"{path}:{lineno}: unknown doc_id {doc_id!r}")
        for m in record.get("mentions", []):
            mention = EntityMention(
                doc_id=doc_id,
                start=int(_require(m, "start", path, lineno)),
                end=int(_require(m, "end", path, lineno)),
                surface=str(_require(m, "surface", path, lineno)),
                etype=EntityType.from_token(str(_require(m, "etype", path, lineno))),
                grounding_id=m.get("grounding_id") or None,
            )
            problem = _mention_problem(mention, doc)
            if problem:
                raise CorpusValidationError(f"{path}:{lineno}: {problem}")
            store.gold_mentions.append(mention)
        for r in record.get("relations", []):
            label = Label.from_token(str(_require(r, "label", path, lineno)))
            if label not in POSITIVE_LABELS:
                raise CorpusValidationError(
                    f"{path}:{lineno}: gold relation with non-positive label {label.token}"
                )
            inst = RelationInstance(
                doc_id=doc_id,
                gene_grounding_id=str(_require(r, "gene_id", path, lineno)),
                gene_surface=str(_require(r, "gene_surface", path, lineno)),
                disease_grounding_id=str(_require(r, "disease_id", path, lineno)),
                disease_surface=str(_require(r, "disease_surface", path, lineno)),
                label=label,
                provenance=Provenance.GOLD,
            )
            if inst.key in seen_keys:
                raise CorpusValidationError(
                    f"{path}:{lineno}: duplicate relation key {inst.key}"
                )
            seen_keys.add(inst.key)
            store.gold_relations.append(inst)


def _mention_problem(m: EntityMention, doc: AbstractDoc) -> str | None:
    if not (0 <= m.start < m.end <= len(doc.text)):
        return (
            f"mention span [{m.start}, {m.end}) out of range for doc "
            f"{m.doc_id!r} (text length {len(doc.text)})"
        )
    if doc.text[m.start : m.end] != m.surface:
        return (
            f"mention surface {m.surface!r} does not equal document slice "
            f"{doc.text[m.start:m.end]!r} in doc {m.doc_id!r}"
        )
    return None


def validate_instance(
    inst: RelationInstance,
    store: CorpusStore,
    seen_keys: set[tuple[str, str, str]] | None = None,
) -> list[str]:
    """Return the list of violated invariants for one instance (empty = valid)."""
    verdict: list[str] = []
    if inst.doc_id not in store.documents:
        verdict.append(f"doc_id {inst.doc_id!r} not present in corpus")
    if inst.provenance is Provenance.GENERATED_NEGATIVE and inst.label is not Label.NO_REL:
        verdict.append(
            f"provenance GENERATED_NEGATIVE requires label NO_REL, got {inst.label.token}"
        )
    if inst.provenance is Provenance.GOLD and inst.label is Label.NO_REL:
        verdict.append("provenance GOLD requires a positive label, got NO_REL")
    if seen_keys is not None and inst.key in seen_keys:
        verdict.append(f"duplicate (doc, gene, disease) key {inst.key}")
    return verdict


def validate_dataset(instances: list[RelationInstance], store: CorpusStore) -> list[list[str]]:
    """Per-instance verdicts over a whole dataset, enforcing key uniqueness."""
    seen: set[tuple[str, str, str]] = set()
    verdicts = []
    for inst in instances:
        verdicts.append(validate_instance(inst, store, seen_keys=seen))
        seen.add(inst.key)
    return verdicts


def write_corpus(
    store: CorpusStore,
    corpus_path: str | Path,
    annotations_path: str | Path | None = None,
) -> None:
    """Write a store back to the canonical file pair, preserving store order."""
    corpus_path = Path(corpus_path)
    with corpus_path.open("w", encoding="utf-8") as fh:
        for doc in store.documents.values():
            fh.write(json.dumps({"doc_id": doc.doc_id, "text": doc.text}, sort_keys=True))
            fh.write("\n")
    if annotations_path is None:
        return

    mentions_by_doc: dict[str, list[EntityMention]] = {}
    for m in store.gold_mentions:
        mentions_by_doc.setdefault(m.doc_id, []).append(m)
    relations_by_doc: dict[str, list[RelationInstance]] = {}
    for r in store.gold_relations:
        relations_by_doc.setdefault(r.doc_id, []).append(r)

    with Path(annotations_path).open("w", encoding="utf-8") as fh:
        for doc_id in store.documents:
            mentions = mentions_by_doc.get(doc_id, [])
            relations = relations_by_doc.get(doc_id, [])
            if not mentions and not relations:
                continue
            record = {
                "doc_id": doc_id,
                "mentions": [
                    {
                        "start": m.start,
                        "end": m.end,
                        "surface": m.surface,
                        "etype": m.etype.value,
                        "grounding_id": m.grounding_id,
                    }
                    for m in mentions
                ],
                "relations": [
                    {
                        "gene_id": r.gene_grounding_id,
                        "gene_surface": r.gene_surface,
                        "disease_id": r.disease_grounding_id,
                        "disease_surface": r.disease_surface,
                        "label": r.label.token,
                    }
                    for r in relations
                ],
            }
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def write_instances(instances: list[RelationInstance], path: str | Path) -> None:
    """Write a labeled instance dataset (any provenance, all five labels)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for inst in instances:
            record = {
                "doc_id": inst.doc_id,
                "gene_id": inst.gene_grounding_id,
                "gene_surface": inst.gene_surface,
                "disease_id": inst.disease_grounding_id,
                "disease_surface": inst.disease_surface,
                "label": inst.label.token,
                "provenance": inst.provenance.value,
            }
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def load_instances(path: str | Path) -> list[RelationInstance]:
    path = Path(path)
    instances = []
    for lineno, record in _parse_jsonl(path):
        instances.append(
            RelationInstance(
                doc_id=str(_require(record, "doc_id", path, lineno)),
                gene_grounding_id=str(_require(record, "gene_id", path, lineno)),
                gene_surface=str(record.get("gene_surface", "")),
                disease_grounding_id=str(_require(record, "disease_id", path, lineno)),
                disease_surface=str(record.get("disease_surface", "")),
                label=Label.from_token(str(_require(record, "label", path, lineno))),
                provenance=Provenance(str(_require(record, "provenance", path, lineno))),
            )
        )
    return instances
