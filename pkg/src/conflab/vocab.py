"""Token <-> id mapping with fixed reserved ids."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

from .errors import ConfigError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocab:
    """Bijective token/id map. Ids 0..3 are always PAD/BOS/EOS/UNK."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise ConfigError(f"vocab must start with reserved tokens {RESERVED}")
        if len(tokens) < 5:
            raise ConfigError("vocab needs at least one content token")
        self.tokens = tokens
        self._index = {tok: i for i, tok in enumerate(tokens)}
        if len(self._index) != len(tokens):
            raise ConfigError("vocab tokens must be unique")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        """Id for a token; unknown tokens map to UNK."""
        return self._index.get(token, UNK)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @classmethod
    def synthetic(cls, size: int) -> "Vocab":
        """Vocab of `size` ids where content token strings are "w<id>"."""
        if size < 5:
            raise ConfigError("synthetic vocab size must be >= 5")
        return cls(list(RESERVED) + [f"w{i}" for i in range(4, size)])

    @classmethod
    def from_counts(cls, counts: Counter, cap: int | None = None) -> "Vocab":
        """Frequency-built vocab, most frequent first; ties break lexicographically.

        `cap` limits the number of content tokens (total size = cap + 4).
        """
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if cap is not None:
            ranked = ranked[:cap]
        return cls(list(RESERVED) + [tok for tok, _ in ranked])
