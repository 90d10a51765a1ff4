"""Word-level vocabulary, virtual relation words, and prompt templates.

The vocabulary is deliberately word-level (no subwords): every corpus word
type gets one id, unknown words map to ``[UNK]``, and the m virtual words
per relation are appended after the base vocabulary in a fixed
(relation, view) order so their ids are computable from the layout alone.

A prompt wraps a sentence as::

    [CLS] ... [SUB] subject [/SUB] ... [OBJ] object [/OBJ] ... [SEP]
    subject-tokens [MASK] x m object-tokens [SEP] [PAD]...

with the suffix entity order flippable for reversed-direction relations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, RelationInstance
from .errors import EncodingError, ValidationError

PAD, CLS, SEP, MASK = "[PAD]", "[CLS]", "[SEP]", "[MASK]"
SUB_OPEN, SUB_CLOSE = "[SUB]", "[/SUB]"
OBJ_OPEN, OBJ_CLOSE = "[OBJ]", "[/OBJ]"
UNK = "[UNK]"

SPECIAL_TOKENS = (PAD, CLS, SEP, MASK, SUB_OPEN, SUB_CLOSE, OBJ_OPEN, OBJ_CLOSE, UNK)

SUB_OBJ = "sub_obj"
OBJ_SUB = "obj_sub"

VIRTUAL_PREFIX = "[V:"


def virtual_word(relation: str, view: int) -> str:
    return f"{VIRTUAL_PREFIX}{relation}:{view}]"


@dataclass(frozen=True)
class Vocab:
    """Bijective word/id maps; specials first, then corpus words, then virtual words."""

    words: tuple[str, ...]
    base_size: int

    def __post_init__(self):
        object.__setattr__(self, "_id_of", {w: i for i, w in enumerate(self.words)})
        if len(self._id_of) != len(self.words):
            raise ValidationError("vocabulary contains duplicate words")

    def __len__(self):
        return len(self.words)

    def id_of(self, word: str) -> int:
        return self._id_of.get(word, self._id_of[UNK])

    def contains(self, word: str) -> bool:
        return word in self._id_of

    def word_of(self, idx: int) -> str:
        return self.words[idx]

    @property
    def pad_id(self) -> int:
        return self._id_of[PAD]

    @property
    def cls_id(self) -> int:
        return self._id_of[CLS]

    @property
    def sep_id(self) -> int:
        return self._id_of[SEP]

    @property
    def mask_id(self) -> int:
        return self._id_of[MASK]

    @property
    def unk_id(self) -> int:
        return self._id_of[UNK]

    @property
    def special_ids(self) -> tuple[int, ...]:
        return tuple(self._id_of[w] for w in SPECIAL_TOKENS)

    def encode_words(self, words) -> list[int]:
        return [self.id_of(w) for w in words]


@dataclass(frozen=True)
class Verbalizer:
    """Maps (relation, view j) to the id of its virtual relation word."""

    relation_order: tuple[str, ...]
    m: int
    base_size: int

    def virtual_id(self, relation: str, view: int) -> int:
        if not (1 <= view <= self.m):
            raise IndexError(f"view {view} out of range [1, {self.m}]")
        ri = self.relation_order.index(relation)
        return self.base_size + ri * self.m + (view - 1)

    def virtual_id_by_index(self, relation_index: int, view: int) -> int:
        return self.base_size + relation_index * self.m + (view - 1)

    def view_ids(self, view: int) -> np.ndarray:
        """Virtual ids of every relation for one view, in relation order."""
        if not (1 <= view <= self.m):
            raise IndexError(f"view {view} out of range [1, {self.m}]")
        start = self.base_size + (view - 1)
        return np.array([start + ri * self.m for ri in range(len(self.relation_order))])

    def all_ids(self) -> np.ndarray:
        """All virtual ids, ordered (relation, view): row-major over the grid."""
        n = len(self.relation_order) * self.m
        return np.arange(self.base_size, self.base_size + n)

    @property
    def n_relations(self) -> int:
        return len(self.relation_order)


def build_vocab(dataset: Dataset, schema) -> tuple[Vocab, Verbalizer]:
    """Base vocabulary (specials + sorted corpus word types) plus virtual words.

    Builds identically for identical inputs: word types are sorted, and the
    |Y| * m virtual words are appended in (relation, view) order taken from
    the schema.
    """
    if schema.m < 1:
        raise ValidationError(f"m must be >= 1, got {schema.m}")
    relation_order = tuple(schema.relations)
    base = list(SPECIAL_TOKENS) + dataset.word_types()
    base_size = len(base)
    for rel in relation_order:
        for j in range(1, schema.m + 1):
            base.append(virtual_word(rel, j))
    return Vocab(tuple(base), base_size), Verbalizer(relation_order, schema.m, base_size)


@dataclass(frozen=True)
class EncodedPrompt:
    """Model-ready id sequence with the template's structural positions."""

    ids: np.ndarray
    mask_positions: tuple[int, ...]
    subj_positions: tuple[int, ...]
    obj_positions: tuple[int, ...]
    attention_length: int

    @property
    def m(self) -> int:
        return len(self.mask_positions)


def _marked_sentence(instance: RelationInstance, entity_markers: bool) -> tuple[list[str], list[int], list[int]]:
    """Sentence tokens with entity markers inserted; returns marked-token positions."""
    (s1, e1), (s2, e2) = instance.subj_span, instance.obj_span
    out: list[str] = []
    subj_pos: list[int] = []
    obj_pos: list[int] = []
    for i, tok in enumerate(instance.tokens):
        if entity_markers and i == s1:
            out.append(SUB_OPEN)
        if entity_markers and i == s2:
            out.append(OBJ_OPEN)
        if s1 <= i <= e1:
            subj_pos.append(len(out))
        if s2 <= i <= e2:
            obj_pos.append(len(out))
        out.append(tok)
        if entity_markers and i == e1:
            out.append(SUB_CLOSE)
        if entity_markers and i == e2:
            out.append(OBJ_CLOSE)
    return out, subj_pos, obj_pos


def wrap_template(instance: RelationInstance, vocab: Vocab, m: int, max_len: int,
                  order: str = SUB_OBJ, entity_markers: bool = True) -> EncodedPrompt:
    """Encode an instance into the multi-mask cloze template.

    When the full encoding overflows ``max_len``, sentence tokens outside
    both entity spans are dropped farthest-from-entities first; entities,
    markers and the prompt suffix are never truncated.
    """
    if m < 1:
        raise ValidationError(f"m must be >= 1, got {m}")
    if order not in (SUB_OBJ, OBJ_SUB):
        raise ValidationError(f"unknown entity order {order!r}")
    instance.validate()

    sent, sent_subj, sent_obj = _marked_sentence(instance, entity_markers)
    subj = list(instance.subj_tokens)
    obj = list(instance.obj_tokens)
    first, second = (subj, obj) if order == SUB_OBJ else (obj, subj)
    suffix = first + [MASK] * m + second
    overhead = 3 + len(suffix)  # CLS, sentence SEP, suffix, final SEP

    budget = max_len - overhead
    protected = set(sent_subj) | set(sent_obj)
    if len(protected) + (4 if entity_markers else 0) > budget:
        raise EncodingError(
            f"entities and prompt suffix need more than max_len={max_len} tokens")
    if len(sent) > budget:
        # rank droppable positions by distance to the nearest entity token
        def distance(i: int) -> int:
            return min(abs(i - p) for p in protected)

        droppable = [i for i in range(len(sent)) if i not in protected
                     and sent[i] not in (SUB_OPEN, SUB_CLOSE, OBJ_OPEN, OBJ_CLOSE)]
        droppable.sort(key=lambda i: (distance(i), i), reverse=True)
        to_drop = set(droppable[: len(sent) - budget])
        if len(sent) - len(to_drop) > budget:
            raise EncodingError(
                f"entities and markers do not fit within max_len={max_len}")
        keep = [i for i in range(len(sent)) if i not in to_drop]
        remap = {old: new for new, old in enumerate(keep)}
        sent = [sent[i] for i in keep]
        sent_subj = [remap[i] for i in sent_subj]
        sent_obj = [remap[i] for i in sent_obj]

    words = [CLS] + sent + [SEP] + suffix + [SEP]
    ids = np.full(max_len, vocab.pad_id, dtype=np.int64)
    ids[: len(words)] = vocab.encode_words(words)

    sent_offset = 1
    suffix_offset = 1 + len(sent) + 1
    mask_local = len(first)
    mask_positions = tuple(suffix_offset + mask_local + j for j in range(m))
    first_positions = list(range(suffix_offset, suffix_offset + len(first)))
    second_positions = list(range(suffix_offset + mask_local + m,
                                  suffix_offset + mask_local + m + len(second)))
    subj_suffix, obj_suffix = ((first_positions, second_positions) if order == SUB_OBJ
                               else (second_positions, first_positions))
    subj_positions = tuple(sent_offset + p for p in sent_subj) + tuple(subj_suffix)
    obj_positions = tuple(sent_offset + p for p in sent_obj) + tuple(obj_suffix)
    return EncodedPrompt(ids, mask_positions, subj_positions, obj_positions, len(words))


def decode(prompt: EncodedPrompt, vocab: Vocab) -> list[str]:
    """Words of the non-PAD prefix of a prompt."""
    return [vocab.word_of(int(i)) for i in prompt.ids[: prompt.attention_length]]


def encode_sentence(instance: RelationInstance, vocab: Vocab,
                    entity_markers: bool = True) -> np.ndarray:
    """CLS + marked sentence + SEP as raw ids (no padding); pretraining input."""
    words, _, _ = _marked_sentence(instance, entity_markers)
    return np.array(vocab.encode_words([CLS] + words + [SEP]), dtype=np.int64)


def save_vocab(vocab: Vocab, verbalizer: Verbalizer, path: str | Path):
    """JSON form sufficient to rebuild both maps bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(vocab_payload(vocab, verbalizer), fh, ensure_ascii=False)


def load_vocab(path: str | Path) -> tuple[Vocab, Verbalizer]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return vocab_from_payload(payload)


def vocab_payload(vocab: Vocab, verbalizer: Verbalizer) -> dict:
    return {
        "words": list(vocab.words),
        "base_size": vocab.base_size,
        "m": verbalizer.m,
        "relation_order": list(verbalizer.relation_order),
    }


def vocab_from_payload(payload: dict) -> tuple[Vocab, Verbalizer]:
    vocab = Vocab(tuple(payload["words"]), int(payload["base_size"]))
    verbalizer = Verbalizer(tuple(payload["relation_order"]), int(payload["m"]),
                            int(payload["base_size"]))
    return vocab, verbalizer
