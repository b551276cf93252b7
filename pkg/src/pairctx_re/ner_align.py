"""Alignment of external NER output to gold annotations.

All alignment runs on grounding identifiers. A tagger mention matches a gold
mention EXACTLY when both carry the same identifier and the surfaces agree
after normalization (case-fold, collapse internal whitespace); an identifier
match with a differing surface is FUZZY. Candidate gene-disease pairs are
enumerated per document at identifier level; pairs without a gold triple
become generated negatives.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .corpus import (
    AbstractDoc,
    CorpusStore,
    EntityMention,
    EntityType,
    Label,
    Provenance,
    RelationInstance,
)


class LabelConflictError(ValueError):
    """Two gold triples share a (gene, disease) key but disagree on the label."""


class NerFormatError(ValueError):
    pass


@dataclass(frozen=True)
class NerMention(EntityMention):
    """An externally tagged mention; distinguished from gold only by origin."""

    source: str = "EXTERNAL_NER"


class AlignmentKind(Enum):
    EXACT = "EXACT"
    FUZZY = "FUZZY"
    NONE = "NONE"


@dataclass(frozen=True)
class AlignmentOutcome:
    kind: AlignmentKind
    matched_gold: EntityMention | None = None

    def __post_init__(self):
        if (self.kind is AlignmentKind.NONE) != (self.matched_gold is None):
            raise ValueError("matched_gold must be present iff kind is not NONE")


def normalize_surface(surface: str) -> str:
    """Case-fold and collapse internal whitespace."""
    return " ".join(surface.casefold().split())


def align_mention(m: NerMention, gold: Iterable[EntityMention]) -> AlignmentOutcome:
    """Match one tagger mention against the gold mentions of its document."""
    if not m.grounding_id:
        return AlignmentOutcome(AlignmentKind.NONE)
    candidates = sorted(
        (g for g in gold if g.doc_id == m.doc_id and g.grounding_id == m.grounding_id),
        key=lambda g: (g.start, g.end),
    )
    if not candidates:
        return AlignmentOutcome(AlignmentKind.NONE)
    norm = normalize_surface(m.surface)
    for g in candidates:
        if normalize_surface(g.surface) == norm:
            return AlignmentOutcome(AlignmentKind.EXACT, matched_gold=g)
    return AlignmentOutcome(AlignmentKind.FUZZY, matched_gold=candidates[0])


@dataclass(frozen=True)
class CandidatePair:
    gene_id: str
    gene_surface: str
    disease_id: str
    disease_surface: str


def _first_surface_by_id(mentions: Sequence[NerMention], etype: EntityType) -> dict[str, str]:
    """Representative surface per grounding id = first occurrence in doc order."""
    first: dict[str, tuple[int, int, str]] = {}
    for m in mentions:
        if m.etype is not etype or not m.grounding_id:
            continue
        key = m.grounding_id
        pos = (m.start, m.end, m.surface)
        if key not in first or pos < first[key]:
            first[key] = pos
    return {gid: pos[2] for gid, pos in first.items()}


def generate_candidate_pairs(doc: AbstractDoc, ner: Sequence[NerMention]) -> list[CandidatePair]:
    """One pair per distinct (gene id, disease id) combination in the document.

    Mentions without a grounding id carry no alignment key and are dropped.
    Output is sorted by (gene_id, disease_id) for determinism.
    """
    in_doc = [m for m in ner if m.doc_id == doc.doc_id]
    genes = _first_surface_by_id(in_doc, EntityType.GENE)
    diseases = _first_surface_by_id(in_doc, EntityType.DISEASE)
    return [
        CandidatePair(gene_id=g, gene_surface=genes[g], disease_id=d, disease_surface=diseases[d])
        for g in sorted(genes)
        for d in sorted(diseases)
    ]


@dataclass(frozen=True)
class LabeledPairs:
    """Output of pair labeling for one document."""

    instances: list[RelationInstance]
    unrecoverable: list[RelationInstance]  # gold triples no candidate pair covers


def label_pairs(
    doc_id: str,
    pairs: Sequence[CandidatePair],
    gold_relations: Sequence[RelationInstance],
) -> LabeledPairs:
    """Assign gold labels to covered pairs, NO_REL to the rest.

    Raises :class:`LabelConflictError` when two gold triples share a
    (gene, disease) key with different labels.
    """
    gold_by_key: dict[tuple[str, str], RelationInstance] = {}
    for rel in gold_relations:
        key = (rel.gene_grounding_id, rel.disease_grounding_id)
        prior = gold_by_key.get(key)
        if prior is not None and prior.label is not rel.label:
            raise LabelConflictError(
                f"doc {doc_id}: pair {key} labeled both {prior.label.token} and {rel.label.token}"
            )
        gold_by_key.setdefault(key, rel)

    instances = []
    covered: set[tuple[str, str]] = set()
    for pair in sorted(pairs, key=lambda p: (p.gene_id, p.disease_id)):
        key = (pair.gene_id, pair.disease_id)
        gold = gold_by_key.get(key)
        if gold is not None:
            covered.add(key)
        instances.append(
            RelationInstance(
                doc_id=doc_id,
                gene_grounding_id=pair.gene_id,
                gene_surface=pair.gene_surface,
                disease_grounding_id=pair.disease_id,
                disease_surface=pair.disease_surface,
                label=gold.label if gold is not None else Label.NO_REL,
                provenance=Provenance.GOLD if gold is not None else Provenance.GENERATED_NEGATIVE,
            )
        )
    unrecoverable = [
        rel
        for rel in gold_relations
        if (rel.gene_grounding_id, rel.disease_grounding_id) not in covered
    ]
    return LabeledPairs(instances=instances, unrecoverable=unrecoverable)


def build_instances(
    store: CorpusStore,
    ner: Sequence[NerMention],
    doc_ids: Sequence[str] | None = None,
) -> LabeledPairs:
    """Run pair generation and labeling over every document (sorted order)."""
    by_doc: dict[str, list[NerMention]] = {}
    for m in ner:
        by_doc.setdefault(m.doc_id, []).append(m)
    gold_by_doc: dict[str, list[RelationInstance]] = {}
    for rel in store.gold_relations:
        gold_by_doc.setdefault(rel.doc_id, []).append(rel)

    instances: list[RelationInstance] = []
    unrecoverable: list[RelationInstance] = []
    for doc_id in sorted(doc_ids if doc_ids is not None else store.documents):
        doc = store.documents[doc_id]
        pairs = generate_candidate_pairs(doc, by_doc.get(doc_id, []))
        labeled = label_pairs(doc_id, pairs, gold_by_doc.get(doc_id, []))
        instances.extend(labeled.instances)
        unrecoverable.extend(labeled.unrecoverable)
    return LabeledPairs(instances=instances, unrecoverable=unrecoverable)


# ---------------------------------------------------------------------------
# Alignment audit

@dataclass(frozen=True)
class AlignmentReport:
    """How well tagger output recovers the gold positive pairs."""

    total_positive_pairs: int
    both_exact: int
    aligned_not_exact: int
    entity_missing: int

    def __post_init__(self):
        if self.both_exact + self.aligned_not_exact + self.entity_missing != (
            self.total_positive_pairs
        ):
            raise ValueError("alignment buckets must sum to the pair total")


def _entity_alignment(
    grounding_id: str,
    relation_surface: str,
    gold_mentions: Sequence[EntityMention],
    ner_mentions: Sequence[NerMention],
) -> AlignmentKind:
    tagged = [m for m in ner_mentions if m.grounding_id == grounding_id]
    if not tagged:
        return AlignmentKind.NONE
    gold_surfaces = {
        normalize_surface(g.surface) for g in gold_mentions if g.grounding_id == grounding_id
    }
    # A relation's recorded surface counts as a gold surface even when the
    # mention list omits that entity.
    gold_surfaces.add(normalize_surface(relation_surface))
    if any(normalize_surface(m.surface) in gold_surfaces for m in tagged):
        return AlignmentKind.EXACT
    return AlignmentKind.FUZZY


def alignment_report(
    store: CorpusStore,
    ner: Sequence[NerMention],
    doc_ids: Sequence[str] | None = None,
) -> AlignmentReport:
    """Classify every gold positive pair into exact / fuzzy / missing buckets."""
    wanted = set(doc_ids) if doc_ids is not None else None
    ner_by_doc: dict[str, list[NerMention]] = {}
    for m in ner:
        ner_by_doc.setdefault(m.doc_id, []).append(m)
    gold_by_doc: dict[str, list[EntityMention]] = {}
    for g in store.gold_mentions:
        gold_by_doc.setdefault(g.doc_id, []).append(g)

    total = both_exact = aligned = missing = 0
    for rel in store.gold_relations:
        if wanted is not None and rel.doc_id not in wanted:
            continue
        total += 1
        gold_here = gold_by_doc.get(rel.doc_id, [])
        ner_here = ner_by_doc.get(rel.doc_id, [])
        gene_kind = _entity_alignment(
            rel.gene_grounding_id, rel.gene_surface, gold_here, ner_here
        )
        disease_kind = _entity_alignment(
            rel.disease_grounding_id, rel.disease_surface, gold_here, ner_here
        )
        if AlignmentKind.NONE in (gene_kind, disease_kind):
            missing += 1
        elif gene_kind is AlignmentKind.EXACT and disease_kind is AlignmentKind.EXACT:
            both_exact += 1
        else:
            aligned += 1
    return AlignmentReport(
        total_positive_pairs=total,
        both_exact=both_exact,
        aligned_not_exact=aligned,
        entity_missing=missing,
    )


def report_to_dict(report: AlignmentReport) -> dict:
    return {
        "total_positive_pairs": report.total_positive_pairs,
        "both_exact": report.both_exact,
        "aligned_not_exact": report.aligned_not_exact,
        "entity_missing": report.entity_missing,
    }


def write_alignment_report(report: AlignmentReport, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Tagger export files: tab-separated, one mention per line.

def load_ner_mentions(path: str | Path, store: CorpusStore | None = None) -> list[NerMention]:
    """Read doc_id / start / end / surface / etype / grounding_id lines.

    An empty grounding field means the tagger produced no identifier. When a
    store is given, spans are validated against the documents.
    """
    path = Path(path)
    mentions = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise NerFormatError(
                    f"{path}:{lineno}: expected 6 tab-separated fields, got {len(parts)}"
                )
            doc_id, start_s, end_s, surface, etype_s, grounding = parts
            try:
                start, end = int(start_s), int(end_s)
            except ValueError:
                raise NerFormatError(f"{path}:{lineno}: non-integer offsets") from None
            mention = NerMention(
                doc_id=doc_id,
                start=start,
                end=end,
                surface=surface,
                etype=EntityType.from_token(etype_s),
                grounding_id=grounding or None,
            )
            if store is not None:
                doc = store.documents.get(doc_id)
                if doc is None:
                    raise NerFormatError(f"{path}:{lineno}: unknown doc_id {doc_id!r}")
                if not (0 <= start < end <= len(doc.text)):
                    raise NerFormatError(
                        f"{path}:{lineno}: span [{start}, {end}) out of range for doc {doc_id!r}"
                    )
            mentions.append(mention)
    return mentions


def write_ner_mentions(mentions: Sequence[NerMention], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for m in mentions:
            fh.write(
                f"{m.doc_id}\t{m.start}\t{m.end}\t{m.surface}\t{m.etype.value}"
                f"\t{m.grounding_id or ''}\n"
            )
