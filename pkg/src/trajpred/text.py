"""Triplet vocabulary, verb rephrasing, prompt rendering, and the frozen
text encoder with learnable context tokens.

The encoder is deliberately small: a frozen seeded embedding table over the
closed prompt corpus, a few frozen transformer blocks, and M trainable
context tokens prepended to every prompt (the only part that trains).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ndcore
from .layers import SelfAttnBlockParams, init_self_attn_block, self_attn_block
from .ndcore import Tensor
from .utils import digest, seeded_rng


class UnknownVerbError(KeyError):
    pass


class UnknownTokenError(KeyError):
    pass


@dataclass
class TripletVocabulary:
    """Component name lists, the valid (i, v, t) class list, and the
    verb -> descriptive phrase table."""
    instruments: list[str]
    verbs: list[str]
    targets: list[str]
    valid_triplets: list[tuple[int, int, int]]
    verb_phrases: dict[str, str]
    motion_defined_verbs: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.valid_triplets = [tuple(int(x) for x in t) for t in self.valid_triplets]
        seen = set()
        for i, v, t in self.valid_triplets:
            if (i, v, t) in seen:
                raise ValueError(f"duplicate triplet {(i, v, t)}")
            seen.add((i, v, t))
            if not (0 <= i < len(self.instruments) and 0 <= v < len(self.verbs)
                    and 0 <= t < len(self.targets)):
                raise ValueError(f"triplet {(i, v, t)} has an out-of-range component")
        missing = set(self.verbs) - set(self.verb_phrases)
        extra = set(self.verb_phrases) - set(self.verbs)
        if missing or extra:
            raise ValueError(f"verb_phrases must cover every verb exactly once "
                             f"(missing {sorted(missing)}, extra {sorted(extra)})")
        unknown_motion = set(self.motion_defined_verbs) - set(self.verbs)
        if unknown_motion:
            raise ValueError(f"motion_defined_verbs not in vocabulary: {sorted(unknown_motion)}")

    @property
    def n_classes(self) -> int:
        return len(self.valid_triplets)

    def class_index(self, triplet: tuple[int, int, int]) -> int:
        try:
            return self.valid_triplets.index(tuple(triplet))
        except ValueError:
            raise KeyError(f"triplet {triplet} not in the valid class list") from None

    def triplet_names(self, c: int) -> tuple[str, str, str]:
        i, v, t = self.valid_triplets[c]
        return self.instruments[i], self.verbs[v], self.targets[t]

    def to_dict(self) -> dict:
        return {
            "instruments": self.instruments,
            "verbs": self.verbs,
            "targets": self.targets,
            "valid_triplets": [list(t) for t in self.valid_triplets],
            "verb_phrases": self.verb_phrases,
            "motion_defined_verbs": self.motion_defined_verbs,
        }

    def digest(self) -> str:
        return digest(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "TripletVocabulary":
        return cls(instruments=list(d["instruments"]), verbs=list(d["verbs"]),
                   targets=list(d["targets"]),
                   valid_triplets=[tuple(t) for t in d["valid_triplets"]],
                   verb_phrases=dict(d["verb_phrases"]),
                   motion_defined_verbs=list(d.get("motion_defined_verbs", [])))


def save_vocabulary(vocab: TripletVocabulary, path: str | Path) -> None:
    Path(path).write_text(json.dumps(vocab.to_dict(), indent=2) + "\n")


def load_vocabulary(path: str | Path) -> TripletVocabulary:
    return TripletVocabulary.from_dict(json.loads(Path(path).read_text()))


def surgical_vocabulary() -> TripletVocabulary:
    """Packaged laparoscopic instrument/verb/target vocabulary with the full
    verb -> descriptive-phrase table and a curated valid-triplet list."""
    from importlib import resources

    data = resources.files("trajpred").joinpath("data/surgical_vocab.json")
    return TripletVocabulary.from_dict(json.loads(data.read_text(encoding="utf-8")))


def rephrase_verb(vocab: TripletVocabulary, verb: str) -> str:
    """The verb's descriptive phrase, exactly as tabled."""
    try:
        return vocab.verb_phrases[verb]
    except KeyError:
        raise UnknownVerbError(f"verb {verb!r} not in vocabulary") from None


def _words(name: str) -> list[str]:
    return name.lower().replace("_", " ").split()


def prompt_text(vocab: TripletVocabulary, triplet: tuple[int, int, int],
                mode: str = "rephrased") -> str:
    """Render "{instrument} {verb or phrase} {target}" as plain words."""
    if mode not in ("raw", "rephrased"):
        raise ValueError(f"unknown prompt mode {mode!r}")
    i, v, t = triplet
    if tuple(triplet) not in set(vocab.valid_triplets):
        raise KeyError(f"triplet {tuple(triplet)} not in the valid class list")
    verb_part = vocab.verbs[v] if mode == "raw" else rephrase_verb(vocab, vocab.verbs[v])
    parts = _words(vocab.instruments[i]) + _words(verb_part) + _words(vocab.targets[t])
    return " ".join(parts)


def build_word_vocab(vocab: TripletVocabulary) -> list[str]:
    """Closed word list over every prompt in both modes, sorted."""
    words: set[str] = set()
    for triplet in vocab.valid_triplets:
        for mode in ("raw", "rephrased"):
            words.update(prompt_text(vocab, triplet, mode).split())
    return sorted(words)


def render_prompt(vocab: TripletVocabulary, triplet: tuple[int, int, int],
                  mode: str, word_vocab: list[str]) -> list[int]:
    """Prompt as token ids against the corpus word vocabulary."""
    index = {w: i for i, w in enumerate(word_vocab)}
    ids = []
    for w in prompt_text(vocab, triplet, mode).split():
        if w not in index:
            raise UnknownTokenError(
                f"word {w!r} missing from the tokenizer vocabulary; "
                f"was the vocabulary built over this prompt corpus?")
        ids.append(index[w])
    return ids


@dataclass
class TextEncoderParams:
    """Frozen embedding table and blocks; only ``context`` trains."""
    word_vocab: list[str]
    embed: Tensor                      # [V, D_t], frozen
    blocks: list[SelfAttnBlockParams]  # frozen
    context: Tensor                    # [M, D_t], trainable

    @property
    def d_t(self) -> int:
        return self.embed.shape[1]

    @property
    def m_context(self) -> int:
        return self.context.shape[0]


def init_text_encoder(vocab: TripletVocabulary, d_t: int, depth: int = 2,
                      heads: int = 4, m_context: int = 4,
                      seed: int = 0) -> TextEncoderParams:
    word_vocab = build_word_vocab(vocab)
    rng = seeded_rng(seed, "text_encoder")
    embed = Tensor(rng.normal(0.0, 1.0, (len(word_vocab), d_t)))
    blocks = [init_self_attn_block(d_t, heads, rng) for _ in range(depth)]
    for b in blocks:
        for t in _block_tensors(b):
            t.requires_grad = False
    context = Tensor(np.zeros((m_context, d_t)), requires_grad=True)
    return TextEncoderParams(word_vocab=word_vocab, embed=embed,
                             blocks=blocks, context=context)


def _block_tensors(block: SelfAttnBlockParams):
    from .layers import collect_named
    return collect_named(block).values()


def encode_text(tokens: list[int], params: TextEncoderParams) -> Tensor:
    """Mean-pooled embedding of [context ; tokens] after the frozen blocks."""
    if len(tokens) == 0:
        raise ValueError("encode_text needs at least one token")
    out = encode_text_batch([tokens], params)
    return ndcore.reshape(out, (params.d_t,))


def encode_text_batch(token_lists: list[list[int]], params: TextEncoderParams) -> Tensor:
    """Encode equal-length token sequences together; returns [B, D_t]."""
    lengths = {len(t) for t in token_lists}
    if len(lengths) != 1:
        raise ValueError("encode_text_batch needs equal-length sequences")
    (length,) = lengths
    if length == 0:
        raise ValueError("encode_text needs at least one token")
    b = len(token_lists)
    embedded = Tensor(params.embed.data[np.asarray(token_lists)])  # [B, L, D_t] constant
    if params.m_context > 0:
        ctx = ndcore.expand_leading(params.context, b)
        x = ndcore.concat([ctx, embedded], axis=1)
    else:
        x = embedded
    for block in params.blocks:
        x = self_attn_block(x, block)
    return ndcore.tmean(x, axis=1)


def class_matrix(vocab: TripletVocabulary, params: TextEncoderParams,
                 mode: str = "rephrased") -> Tensor:
    """Stacked prompt embeddings for every valid triplet, [C, D_t].

    Rows follow valid_triplets order.  Differentiable through the context
    tokens, so callers recompute it whenever those change.
    """
    prompts = [render_prompt(vocab, t, mode, params.word_vocab)
               for t in vocab.valid_triplets]
    by_len: dict[int, list[int]] = {}
    for c, ids in enumerate(prompts):
        by_len.setdefault(len(ids), []).append(c)
    pieces, order = [], []
    for length in sorted(by_len):
        group = by_len[length]
        pieces.append(encode_text_batch([prompts[c] for c in group], params))
        order.extend(group)
    stackedall = ndcore.concat(pieces, axis=0)
    perm = np.zeros((len(prompts), len(prompts)))
    for pos, c in enumerate(order):
        perm[c, pos] = 1.0
    return ndcore.matmul(Tensor(perm), stackedall)
