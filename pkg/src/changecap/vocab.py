"""Token vocabulary with reserved control ids.

Tokenization is lowercase + whitespace split everywhere (decoder input,
metric scoring) so training and evaluation can never disagree.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path

from .errors import ContractError, LoadError

PAD, START, END, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<start>", "<end>", "<unk>")


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Vocabulary:
    """Bijection between non-reserved tokens and ids 4..len-1."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(RESERVED) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ContractError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, captions: list[str], min_freq: int = 1) -> "Vocabulary":
        """Frequency-descending, ties broken lexicographically."""
        if not captions:
            raise ContractError("cannot build a vocabulary from an empty corpus")
        counts = Counter()
        for caption in captions:
            counts.update(tokenize(caption))
        kept = [(t, c) for t, c in counts.items() if c >= min_freq and t not in RESERVED]
        kept.sort(key=lambda tc: (-tc[1], tc[0]))
        return cls([t for t, _ in kept])

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokenize(text)]

    def decode(self, ids) -> str:
        words = []
        for i in ids:
            i = int(i)
            if i == END:
                break
            if i in (PAD, START):
                continue
            words.append(self.id_to_token[i])
        return " ".join(words)

    def save(self, path):
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:4]) != RESERVED:
            raise LoadError(f"vocabulary file {path} does not start with the reserved tokens")
        return cls(lines[4:])
