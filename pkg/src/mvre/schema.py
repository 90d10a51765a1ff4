"""Relation schemas: the relation set, view count, probe templates, seed words.

A schema owns everything label-side: the ordered relation names, the number
of views m, one cloze probe template per relation (a plain-text sentence
containing the literal ``[MASK]*m`` placeholder), the seed words used by
static initialization, and an optional per-relation direction flag for
reversed subject/object relations.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path

from .data import CorpusSpec, Dataset, corpus_aspect_groups
from .errors import ValidationError
from .vocab import OBJ_SUB, SUB_OBJ

MASK_PLACEHOLDER = "[MASK]*m"


def si_tokens_from_label(label: str) -> list[str]:
    """Split a relation name into seed words: 'per:country_of_birth' -> per country of birth."""
    for sep in (":", "_", "-", "/"):
        label = label.replace(sep, " ")
    words = [w.lower() for w in label.split()]
    return [w for w in words if any(c not in string.punctuation for c in w)]


@dataclass(frozen=True)
class RelationSchema:
    relations: tuple[str, ...]
    m: int
    na_label: str | None = None
    probe_templates: dict[str, str] = field(default_factory=dict)
    si_tokens: dict[str, list[str]] = field(default_factory=dict)
    direction: dict[str, str] = field(default_factory=dict)

    def validate(self):
        if self.m < 1:
            raise ValidationError(f"m must be >= 1, got {self.m}")
        if len(set(self.relations)) != len(self.relations):
            raise ValidationError("schema relations contain duplicates")
        for rel in self.relations:
            tpl = self.probe_templates.get(rel)
            if not tpl:
                raise ValidationError(f"relation {rel!r} has no probe template")
            if MASK_PLACEHOLDER not in tpl:
                raise ValidationError(
                    f"probe template for {rel!r} lacks the {MASK_PLACEHOLDER!r} placeholder")
            if not self.si_tokens.get(rel):
                raise ValidationError(f"relation {rel!r} has no static-init seed words")
            if self.direction.get(rel, SUB_OBJ) not in (SUB_OBJ, OBJ_SUB):
                raise ValidationError(f"relation {rel!r} has invalid direction flag")

    def direction_of(self, relation: str) -> str:
        return self.direction.get(relation, SUB_OBJ)

    def with_m(self, m: int) -> "RelationSchema":
        return RelationSchema(self.relations, m, self.na_label, dict(self.probe_templates),
                              {k: list(v) for k, v in self.si_tokens.items()},
                              dict(self.direction))


def default_probe_template(seed_words: list[str]) -> str:
    return f"subject {' '.join(seed_words)} object . subject {MASK_PLACEHOLDER} object ."


def schema_from_relations(relations, m: int, na_label: str | None = None) -> RelationSchema:
    """Derive a schema from relation names alone.

    Seed words come from splitting each name; probe templates follow the
    ``subject <seed words> object . subject [MASK]*m object .`` pattern.
    Reversed relations tagged ``(e2,e1)`` get the obj-first direction flag.
    """
    relations = tuple(relations)
    si: dict[str, list[str]] = {}
    templates: dict[str, str] = {}
    direction: dict[str, str] = {}
    for rel in relations:
        words = si_tokens_from_label(rel)
        if rel == na_label:
            words = ["no", "relation"]
        if not words:
            raise ValidationError(f"relation {rel!r} yields no seed words")
        si[rel] = words
        templates[rel] = default_probe_template(words)
        if "(e2,e1)" in rel:
            direction[rel] = OBJ_SUB
    schema = RelationSchema(relations, m, na_label, templates, si, direction)
    schema.validate()
    return schema


def synthetic_schema(spec: CorpusSpec, dataset: Dataset, m: int) -> RelationSchema:
    """Schema for a generated corpus: one anchor word per aspect group.

    Anchors (the first word of each aspect group) are corpus words, so both
    static initialization and cloze probing operate on in-vocabulary tokens.
    The NA relation, having no aspect pool, seeds from the most common
    filler words instead.
    """
    groups = corpus_aspect_groups(spec)
    si: dict[str, list[str]] = {}
    templates: dict[str, str] = {}
    for rel in dataset.relations:
        if rel == dataset.na_label:
            si[rel] = [f"w{i:03d}" for i in range(3)]
            templates[rel] = f"subject no relation object . subject {MASK_PLACEHOLDER} object ."
        else:
            anchors = [g[0] for g in groups[rel]]
            si[rel] = anchors
            templates[rel] = default_probe_template(anchors)
    schema = RelationSchema(tuple(dataset.relations), m, dataset.na_label, templates, si, {})
    schema.validate()
    return schema


def save_schema(schema: RelationSchema, path: str | Path):
    payload = {
        "relations": list(schema.relations),
        "m": schema.m,
        "na_label": schema.na_label,
        "probe_templates": schema.probe_templates,
        "si_tokens": schema.si_tokens,
        "direction": schema.direction,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def load_schema(path: str | Path) -> RelationSchema:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    schema = RelationSchema(
        tuple(payload["relations"]),
        int(payload["m"]),
        payload.get("na_label"),
        dict(payload.get("probe_templates", {})),
        {k: list(v) for k, v in payload.get("si_tokens", {}).items()},
        dict(payload.get("direction", {})),
    )
    schema.validate()
    return schema
