"""Corpus-built tokenizer with three id handling modes.

Modes:
  word          lowercase word/punctuation split, <unk> fallback
  id_atomic     each "user_N" / "item_N" is a single reserved token
  id_digit_split  id prefix + "_" + one token per digit

Reserved ids: <pad>=0, <cls>=1, <eos>=2, <unk>=3.
"""

from __future__ import annotations

import re
from typing import Dict, Iterable, List

PAD, CLS, EOS, UNK = "<pad>", "<cls>", "<eos>", "<unk>"
RESERVED = [PAD, CLS, EOS, UNK]

# decimals stay whole so rating text like "4.0" is one token
_WORD_RE = re.compile(r"\d+\.\d+|\w+|[^\w\s]")
_ID_RE = re.compile(r"^(user|item)_(\d+)$")


def word_split(text: str) -> List[str]:
    return _WORD_RE.findall(text.lower())


class Tokenizer:
    def __init__(self, vocab: Dict[str, int]):
        self.vocab = vocab
        self.inverse = {i: t for t, i in vocab.items()}
        self.pad_id = vocab[PAD]
        self.cls_id = vocab[CLS]
        self.eos_id = vocab[EOS]
        self.unk_id = vocab[UNK]

    @classmethod
    def build(cls, texts: Iterable[str], entity_ids: Iterable[str]) -> "Tokenizer":
        """Vocabulary = reserved + atomic entity ids + id pieces + corpus words."""
        vocab: Dict[str, int] = {t: i for i, t in enumerate(RESERVED)}

        def put(tok: str):
            if tok not in vocab:
                vocab[tok] = len(vocab)

        for piece in ["user", "item", "_"]:
            put(piece)
        for d in "0123456789":
            put(d)
        for ent in sorted(entity_ids, key=_entity_sort_key):
            if not _ID_RE.match(ent):
                raise ValueError(f"entity id {ent!r} is not user_N/item_N shaped")
            put(ent)
        words = sorted({w for text in texts for w in word_split(text)})
        for w in words:
            put(w)
        return cls(vocab)

    @property
    def size(self) -> int:
        return len(self.vocab)

    def encode(self, text: str, mode: str = "word") -> List[int]:
        if mode == "word":
            return [self.vocab.get(w, self.unk_id) for w in word_split(text)]
        if mode == "id_atomic":
            return [self.vocab.get(t, self.unk_id) for t in text.split()]
        if mode == "id_digit_split":
            out: List[int] = []
            for tok in text.split():
                m = _ID_RE.match(tok)
                if m:
                    out.append(self.vocab[m.group(1)])
                    out.append(self.vocab["_"])
                    out.extend(self.vocab[d] for d in m.group(2))
                else:
                    out.append(self.vocab.get(tok, self.unk_id))
            return out
        raise ValueError(f"unknown tokenization mode: {mode!r}")

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> str:
        toks = []
        for i in ids:
            t = self.inverse.get(int(i), UNK)
            if skip_special and t in (PAD, CLS, EOS):
                continue
            toks.append(t)
        return " ".join(toks)

    def id_token_count(self, entity: str, mode: str) -> int:
        return len(self.encode(entity, mode))


def _entity_sort_key(ent: str):
    m = _ID_RE.match(ent)
    if not m:
        return (2, ent, 0)
    return (0 if m.group(1) == "user" else 1, "", int(m.group(2)))
