"""Virtual-word initialization: static seed-word averages, cloze probing, or both.

Static initialization averages the embeddings of each relation's seed words
and writes that one vector into all m of its virtual-word rows. Dynamic
initialization instead asks the trained model itself: each relation's probe
sentence is encoded with m masks, and the top-probability ordinary token at
each mask donates its embedding to the matching virtual word. The combined
scheme averages the two, elementwise.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import InitError
from .model import MlmModel, forward_ids
from .schema import MASK_PLACEHOLDER, RelationSchema
from .vocab import CLS, MASK, SEP, EncodedPrompt, Verbalizer, Vocab

logger = logging.getLogger(__name__)

STATIC = "static"
DYNAMIC = "dynamic"
COMBINED = "combined"
RANDOM = "random"

INIT_MODES = (STATIC, DYNAMIC, COMBINED, RANDOM)


@dataclass(frozen=True)
class ProbeRecord:
    """One probing outcome: the token chosen for a (relation, view) slot."""

    relation: str
    view: int
    token: str
    probability: float


def encode_probe_template(template: str, vocab: Vocab, m: int,
                          max_len: int) -> EncodedPrompt:
    """Turn a probe template string into a model input with m masks.

    The template is whitespace-tokenized; the literal ``[MASK]*m`` token
    expands to m mask ids, every other word maps through the vocabulary
    (unknowns to UNK).
    """
    words = template.split()
    if MASK_PLACEHOLDER not in words:
        raise InitError(f"template lacks the {MASK_PLACEHOLDER!r} placeholder: {template!r}")
    out: list[str] = [CLS]
    mask_positions: list[int] = []
    for w in words:
        if w == MASK_PLACEHOLDER:
            mask_positions.extend(range(len(out), len(out) + m))
            out.extend([MASK] * m)
        else:
            out.append(w)
    out.append(SEP)
    if len(out) > max_len:
        raise InitError(f"probe template needs {len(out)} tokens, max_len is {max_len}")
    ids = np.full(max_len, vocab.pad_id, dtype=np.int64)
    ids[: len(out)] = vocab.encode_words(out)
    return EncodedPrompt(ids, tuple(mask_positions), (), (), len(out))


def _static_vectors(schema: RelationSchema, vocab: Vocab,
                    model: MlmModel) -> np.ndarray:
    """Mean seed-word embedding per relation, tiled over views: [|Y|, m, d]."""
    te = model.token_embed.data
    d = te.shape[1]
    out = np.zeros((len(schema.relations), schema.m, d))
    for ri, rel in enumerate(schema.relations):
        tokens = schema.si_tokens.get(rel, [])
        known = [t for t in tokens if vocab.contains(t)]
        unknown = [t for t in tokens if not vocab.contains(t)]
        if unknown:
            logger.warning("static init: relation %r seed words %s not in vocabulary, "
                           "mapping to UNK", rel, unknown)
        if not known:
            raise InitError(f"relation {rel!r}: no seed word is in the vocabulary")
        ids = [vocab.id_of(t) for t in tokens]
        mean = te[ids].mean(axis=0)
        out[ri, :, :] = mean
    return out


def _dynamic_vectors(schema: RelationSchema, vocab: Vocab, model: MlmModel) -> tuple[np.ndarray, list[ProbeRecord]]:
    """Probe each relation's template; returns embeddings [|Y|, m, d] and the report."""
    te = model.token_embed.data
    d = te.shape[1]
    m = schema.m
    out = np.zeros((len(schema.relations), m, d))
    report: list[ProbeRecord] = []
    banned = np.zeros(len(vocab.words), dtype=bool)
    banned[list(vocab.special_ids)] = True
    banned[vocab.base_size :] = True  # virtual words are never initialization donors
    for ri, rel in enumerate(schema.relations):
        template = schema.probe_templates.get(rel)
        if not template:
            raise InitError(f"relation {rel!r} has no probe template")
        prompt = encode_probe_template(template, vocab, m, model.config.max_len)
        with ad.no_grad():
            _, logits = forward_ids(model, prompt.ids[: prompt.attention_length])
        for j in range(1, m + 1):
            row = logits.data[prompt.mask_positions[j - 1]]
            shifted = row - row.max()
            probs = np.exp(shifted)
            probs /= probs.sum()
            masked = np.where(banned, -np.inf, probs)
            tok_id = int(np.argmax(masked))
            out[ri, j - 1, :] = te[tok_id]
            report.append(ProbeRecord(rel, j, vocab.word_of(tok_id), float(probs[tok_id])))
    return out, report


def _write_virtual_rows(model: MlmModel, verbalizer: Verbalizer, vectors: np.ndarray):
    te = model.token_embed
    for ri in range(vectors.shape[0]):
        for j in range(1, vectors.shape[1] + 1):
            vid = verbalizer.virtual_id_by_index(ri, j)
            te.data[vid] = vectors[ri, j - 1].astype(te.data.dtype)


def static_init(schema: RelationSchema, vocab: Vocab, verbalizer: Verbalizer,
                model: MlmModel) -> np.ndarray:
    """Write seed-word mean embeddings into the virtual rows; returns [|Y|, m, d]."""
    vectors = _static_vectors(schema, vocab, model)
    _write_virtual_rows(model, verbalizer, vectors)
    return vectors


def dynamic_init(schema: RelationSchema, vocab: Vocab, verbalizer: Verbalizer,
                 model: MlmModel) -> tuple[np.ndarray, list[ProbeRecord]]:
    """Write probed-token embeddings into the virtual rows; returns them plus the report."""
    vectors, report = _dynamic_vectors(schema, vocab, model)
    _write_virtual_rows(model, verbalizer, vectors)
    return vectors, report


def combined_init(schema: RelationSchema, vocab: Vocab, verbalizer: Verbalizer,
                  model: MlmModel) -> tuple[np.ndarray, list[ProbeRecord]]:
    """Elementwise mean of the static and dynamic vectors per (relation, view)."""
    s = _static_vectors(schema, vocab, model)
    dvec, report = _dynamic_vectors(schema, vocab, model)
    vectors = 0.5 * (s + dvec)
    _write_virtual_rows(model, verbalizer, vectors)
    return vectors, report


def apply_init(mode: str, schema: RelationSchema, vocab: Vocab,
               verbalizer: Verbalizer, model: MlmModel) -> list[ProbeRecord]:
    """Dispatch on init mode; 'random' keeps the model's own initialization."""
    if mode == RANDOM:
        return []
    if mode == STATIC:
        static_init(schema, vocab, verbalizer, model)
        return []
    if mode == DYNAMIC:
        _, report = dynamic_init(schema, vocab, verbalizer, model)
        return report
    if mode == COMBINED:
        _, report = combined_init(schema, vocab, verbalizer, model)
        return report
    raise InitError(f"unknown init mode {mode!r}; expected one of {INIT_MODES}")


def save_probe_report(report: list[ProbeRecord], path: str | Path):
    """Machine-readable probe outcomes: one record per (relation, view)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([asdict(r) for r in report], fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def load_probe_report(path: str | Path) -> list[ProbeRecord]:
    with open(path, encoding="utf-8") as fh:
        return [ProbeRecord(**rec) for rec in json.load(fh)]
