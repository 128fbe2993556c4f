"""Deterministic whitespace/punctuation tokenizer with reserved special tokens.

The item placeholder is kept atomic so the number of recommendation slots in a
response is recoverable from the token stream. The pretrained profile swaps in
its checkpoint's own subword vocabulary behind the same interface.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Iterable

from .corpus import PLACEHOLDER

PAD = "<pad>"
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SEEKER = "<seeker>"
RECOMMENDER = "<recommender>"

SPECIAL_TOKENS = (PAD, BOS, EOS, UNK, SEEKER, RECOMMENDER, PLACEHOLDER)

_WORD_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def split_text(text: str, placeholder: str = PLACEHOLDER) -> list[str]:
    """Case-folded word/punctuation split; the placeholder survives as one token."""
    tokens: list[str] = []
    segments = text.split(placeholder)
    for i, segment in enumerate(segments):
        if i > 0:
            tokens.append(placeholder)
        tokens.extend(_WORD_RE.findall(segment.casefold()))
    return tokens


class Tokenizer:
    def __init__(self, vocab: list[str]):
        if list(vocab[: len(SPECIAL_TOKENS)]) != list(SPECIAL_TOKENS):
            raise ValueError("vocabulary must start with the reserved special tokens")
        self.vocab = list(vocab)
        self.token_to_id = {tok: i for i, tok in enumerate(self.vocab)}
        if len(self.token_to_id) != len(self.vocab):
            raise ValueError("duplicate tokens in vocabulary")

    # reserved ids
    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def placeholder_id(self) -> int:
        return self.token_to_id[PLACEHOLDER]

    def speaker_id(self, speaker: str) -> int:
        return self.token_to_id[SEEKER if speaker == "seeker" else RECOMMENDER]

    def __len__(self) -> int:
        return len(self.vocab)

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Tokenizer":
        seen: set[str] = set()
        for text in texts:
            seen.update(split_text(text))
        seen.difference_update(SPECIAL_TOKENS)
        return cls(list(SPECIAL_TOKENS) + sorted(seen))

    def encode(self, text: str) -> list[int]:
        unk = self.unk_id
        return [self.token_to_id.get(tok, unk) for tok in split_text(text)]

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> str:
        hidden = {self.pad_id, self.bos_id, self.eos_id} if skip_special else set()
        return " ".join(self.vocab[i] for i in ids if i not in hidden)

    @property
    def vocab_hash(self) -> str:
        payload = json.dumps(self.vocab, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"vocab": self.vocab}, fh, ensure_ascii=False)

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh)["vocab"])
