"""Dual-encoder / single-decoder sequence model.

One encoder weight set serves two roles: the ID encoder runs it under a
visible matrix that keeps distinct item spans from attending to each
other, the text encoder runs it with full visibility.  The decoder
cross-attends to the concatenation [text states ‖ ID states].
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    n_layers: int = 6
    d_m: int = 512
    n_heads: int = 8
    vocab_size: int = 128
    max_id_len: int = 64
    max_nl_len: int = 64
    max_target_len: int = 32
    ff_mult: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_m % self.n_heads != 0:
            raise ValueError(
                f"d_m={self.d_m} must be divisible by n_heads={self.n_heads}"
            )


@dataclass
class EncodedStates:
    states: Tensor  # (seq_len, d_m)
    cls: Tensor  # (1, d_m), row 0 of states

    @property
    def length(self) -> int:
        return self.states.shape[0]


@dataclass
class Span:
    label: str  # "cls", "user", or "item_<k>"
    start: int
    end: int  # exclusive


def build_visible_matrix(spans: Sequence[Span], length: int) -> np.ndarray:
    """Boolean attention mask over ID-side positions (True = may attend).

    cls and user tokens see and are seen by everything; tokens inside one
    item span see each other; tokens of distinct item spans are mutually
    invisible.
    """
    spans = sorted(spans, key=lambda s: s.start)
    pos = 0
    cls_spans = [s for s in spans if s.label == "cls"]
    if len(cls_spans) != 1 or cls_spans[0].start != 0:
        raise ValueError("spans must contain exactly one cls span at position 0")
    for s in spans:
        if s.start != pos or s.end <= s.start:
            raise ValueError(
                f"spans must partition the sequence; got gap/overlap at {s.label} "
                f"[{s.start},{s.end})"
            )
        pos = s.end
    if pos != length:
        raise ValueError(f"spans cover [0,{pos}) but sequence has length {length}")

    item_id = np.full(length, -1, dtype=np.int64)
    for k, s in enumerate(spans):
        if s.label.startswith("item"):
            item_id[s.start : s.end] = k
    vm = np.ones((length, length), dtype=bool)
    in_item = item_id >= 0
    diff = item_id[:, None] != item_id[None, :]
    vm[np.ix_(in_item, in_item)] = ~(
        diff[np.ix_(in_item, in_item)]
    )
    return vm


def init_params(config: ModelConfig, seed: int = 0) -> Dict[str, Tensor]:
    """Seeded parameter init: uniform embeddings, scaled-normal projections."""
    rng = np.random.default_rng(seed)
    d, v = config.d_m, config.vocab_size
    ff = config.ff_mult * d
    params: Dict[str, Tensor] = {}

    def uniform(name, shape):
        params[name] = Tensor(rng.uniform(-0.05, 0.05, size=shape), requires_grad=True)

    def normal(name, shape, fan_in):
        params[name] = Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape), requires_grad=True
        )

    def ones(name, shape):
        params[name] = Tensor(np.ones(shape), requires_grad=True)

    def zeros(name, shape):
        params[name] = Tensor(np.zeros(shape), requires_grad=True)

    uniform("tok_emb", (v, d))
    max_enc = max(config.max_id_len, config.max_nl_len)
    uniform("pos_enc", (max_enc, d))
    uniform("pos_dec", (config.max_target_len, d))

    def attn_block(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            normal(f"{prefix}.{w}", (d, d), d)

    for i in range(config.n_layers):
        p = f"enc.{i}"
        ones(f"{p}.ln1.g", (d,))
        zeros(f"{p}.ln1.b", (d,))
        attn_block(f"{p}.attn")
        ones(f"{p}.ln2.g", (d,))
        zeros(f"{p}.ln2.b", (d,))
        normal(f"{p}.ff.w1", (d, ff), d)
        zeros(f"{p}.ff.b1", (ff,))
        normal(f"{p}.ff.w2", (ff, d), ff)
        zeros(f"{p}.ff.b2", (d,))
    ones("enc.final_ln.g", (d,))
    zeros("enc.final_ln.b", (d,))

    for i in range(config.n_layers):
        p = f"dec.{i}"
        ones(f"{p}.ln1.g", (d,))
        zeros(f"{p}.ln1.b", (d,))
        attn_block(f"{p}.self_attn")
        ones(f"{p}.ln2.g", (d,))
        zeros(f"{p}.ln2.b", (d,))
        attn_block(f"{p}.cross_attn")
        ones(f"{p}.ln3.g", (d,))
        zeros(f"{p}.ln3.b", (d,))
        normal(f"{p}.ff.w1", (d, ff), d)
        zeros(f"{p}.ff.b1", (ff,))
        normal(f"{p}.ff.w2", (ff, d), ff)
        zeros(f"{p}.ff.b2", (d,))
    ones("dec.final_ln.g", (d,))
    zeros("dec.final_ln.b", (d,))

    normal("out_proj", (d, v), d)
    return params


@dataclass
class Model:
    config: ModelConfig
    params: Dict[str, Tensor]

    # token-id conventions shared with the tokenizer
    pad_id: int = 0
    cls_id: int = 1
    eos_id: int = 2

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0) -> "Model":
        return cls(config=config, params=init_params(config, seed))

    # -- attention ---------------------------------------------------------

    def _attention(self, prefix: str, x_q: Tensor, x_kv: Tensor, mask: np.ndarray) -> Tensor:
        p = self.params
        h = self.config.n_heads
        dh = self.config.d_m // h
        q = ad.matmul(x_q, p[f"{prefix}.wq"])
        k = ad.matmul(x_kv, p[f"{prefix}.wk"])
        v = ad.matmul(x_kv, p[f"{prefix}.wv"])
        heads: List[Tensor] = []
        inv = 1.0 / np.sqrt(dh)
        for i in range(h):
            lo, hi = i * dh, (i + 1) * dh
            qh = ad.slice_cols(q, lo, hi)
            kh = ad.slice_cols(k, lo, hi)
            vh = ad.slice_cols(v, lo, hi)
            scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), inv)
            probs = ad.masked_softmax(scores, mask)
            heads.append(ad.matmul(probs, vh))
        ctx = ad.concat(heads, axis=1)
        return ad.matmul(ctx, p[f"{prefix}.wo"])

    def _ff(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        h = ad.relu(ad.add(ad.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
        return ad.add(ad.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])

    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        return ad.layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"], eps=1e-6)

    def _dropout(self, x: Tensor, rng: Optional[np.random.Generator]) -> Tensor:
        rate = self.config.dropout
        if rng is None or rate <= 0.0:
            return x
        keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
        return ad.mul(x, Tensor(keep))

    # -- encoder -----------------------------------------------------------

    def encode(
        self,
        tokens: Sequence[int],
        visible: Optional[np.ndarray] = None,
        dropout_rng: Optional[np.random.Generator] = None,
    ) -> EncodedStates:
        """Run the shared encoder stack; ``visible=None`` means full attention."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size == 0:
            raise ValueError("encode: empty token sequence")
        n = tokens.size
        max_enc = self.params["pos_enc"].shape[0]
        if n > max_enc:
            raise ValueError(f"encode: sequence length {n} exceeds maximum {max_enc}")
        if tokens.min() < 0 or tokens.max() >= self.config.vocab_size:
            raise ValueError(
                f"encode: token id out of range for vocab_size={self.config.vocab_size}"
            )
        if visible is None:
            visible = np.ones((n, n), dtype=bool)
        elif visible.shape != (n, n):
            raise ValueError(
                f"encode: visible matrix shape {visible.shape} does not match length {n}"
            )
        x = ad.add(
            ad.embedding(self.params["tok_emb"], tokens),
            ad.embedding(self.params["pos_enc"], np.arange(n)),
        )
        for i in range(self.config.n_layers):
            p = f"enc.{i}"
            normed = self._ln(f"{p}.ln1", x)
            a = self._attention(f"{p}.attn", normed, normed, visible)
            x = ad.add(x, self._dropout(a, dropout_rng))
            f = self._ff(f"{p}.ff", self._ln(f"{p}.ln2", x))
            x = ad.add(x, self._dropout(f, dropout_rng))
        x = self._ln("enc.final_ln", x)
        return EncodedStates(states=x, cls=_row(x, 0))

    # -- decoder -----------------------------------------------------------

    def _decode_states(
        self,
        memory: Tensor,
        target_in: np.ndarray,
        dropout_rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        t = target_in.size
        causal = np.tril(np.ones((t, t), dtype=bool))
        cross = np.ones((t, memory.shape[0]), dtype=bool)
        x = ad.add(
            ad.embedding(self.params["tok_emb"], target_in),
            ad.embedding(self.params["pos_dec"], np.arange(t)),
        )
        for i in range(self.config.n_layers):
            p = f"dec.{i}"
            normed = self._ln(f"{p}.ln1", x)
            a = self._attention(f"{p}.self_attn", normed, normed, causal)
            x = ad.add(x, self._dropout(a, dropout_rng))
            c = self._attention(f"{p}.cross_attn", self._ln(f"{p}.ln2", x), memory, cross)
            x = ad.add(x, self._dropout(c, dropout_rng))
            f = self._ff(f"{p}.ff", self._ln(f"{p}.ln3", x))
            x = ad.add(x, self._dropout(f, dropout_rng))
        return self._ln("dec.final_ln", x)

    def _memory(self, enc_id: EncodedStates, enc_nl: EncodedStates) -> Tensor:
        # decoder keys: text states first, then ID states
        return ad.concat([enc_nl.states, enc_id.states], axis=0)

    def decode_teacher_forced(
        self,
        enc_id: EncodedStates,
        enc_nl: EncodedStates,
        target: Sequence[int],
        dropout_rng: Optional[np.random.Generator] = None,
        return_states: bool = False,
    ):
        """Logits for each target position given the shifted-right target."""
        target = np.asarray(target, dtype=np.int64)
        if target.size == 0:
            raise ValueError("decode_teacher_forced: empty target")
        if target.size > self.config.max_target_len:
            raise ValueError(
                f"decode_teacher_forced: target length {target.size} exceeds "
                f"max_target_len={self.config.max_target_len}"
            )
        target_in = np.concatenate([[self.pad_id], target[:-1]])
        states = self._decode_states(self._memory(enc_id, enc_nl), target_in, dropout_rng)
        logits = ad.matmul(states, self.params["out_proj"])
        if return_states:
            return logits, states
        return logits

    def generate_greedy(
        self,
        enc_id: EncodedStates,
        enc_nl: EncodedStates,
        max_len: int,
    ) -> Tuple[List[int], Tensor]:
        """Argmax decoding; returns tokens and final-layer states H (len × d_m).

        Ties break toward the lowest token id (np.argmax).  Stops at <eos>
        or after ``max_len`` tokens.
        """
        if max_len < 1:
            raise ValueError("generate_greedy: max_len must be >= 1")
        max_len = min(max_len, self.config.max_target_len)
        memory = self._memory(enc_id, enc_nl)
        seq: List[int] = []
        with ad.no_grad():
            while len(seq) < max_len:
                target_in = np.asarray([self.pad_id] + seq, dtype=np.int64)
                states = self._decode_states(memory, target_in)
                last = states.data[-1] @ self.params["out_proj"].data
                tok = int(np.argmax(last))
                seq.append(tok)
                if tok == self.eos_id:
                    break
        # one clean graph-attached pass over the generated sequence for H
        target_in = np.concatenate([[self.pad_id], np.asarray(seq[:-1], dtype=np.int64)])
        states = self._decode_states(memory, target_in)
        return seq, states

    def sequence_log_likelihood(self, enc_id: EncodedStates, enc_nl: EncodedStates, target: Sequence[int]) -> float:
        """Total log-probability of ``target`` under teacher forcing."""
        target = np.asarray(target, dtype=np.int64)
        with ad.no_grad():
            logits = self.decode_teacher_forced(enc_id, enc_nl, target)
        x = logits.data
        m = x.max(axis=1, keepdims=True)
        logp = x - m - np.log(np.exp(x - m).sum(axis=1, keepdims=True))
        return float(logp[np.arange(target.size), target].sum())


def _row(x: Tensor, i: int) -> Tensor:
    """Select one row as a (1, d) tensor via transpose+slice primitives."""
    return ad.transpose(ad.slice_cols(ad.transpose(x), i, i + 1))


# ---------------------------------------------------------------------------
# checkpoint format: a single JSON document, no timestamps.
#   {"version": 1, "config": {...}, "step": int, "params": {name: {"shape": [...],
#    "dtype": "<f4", "data": base64(little-endian float32 bytes)}},
#    "opt_state": same layout or null}


def _encode_array(arr: np.ndarray) -> dict:
    a = np.asarray(arr, dtype="<f4")
    return {
        "shape": list(a.shape),
        "dtype": "<f4",
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype=obj["dtype"]).reshape(obj["shape"]).astype(np.float64)


def save_checkpoint(
    path: str,
    model: Model,
    step: int = 0,
    opt_state: Optional[Dict[str, np.ndarray]] = None,
) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "step": step,
        "params": {k: _encode_array(v.data) for k, v in sorted(model.params.items())},
        "opt_state": (
            {k: _encode_array(v) for k, v in sorted(opt_state.items())}
            if opt_state is not None
            else None
        ),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path: str) -> Tuple[Model, int, Optional[Dict[str, np.ndarray]]]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {doc.get('version')!r}")
    config = ModelConfig(**doc["config"])
    params = {
        k: Tensor(_decode_array(v), requires_grad=True) for k, v in doc["params"].items()
    }
    opt_state = None
    if doc.get("opt_state") is not None:
        opt_state = {k: _decode_array(v) for k, v in doc["opt_state"].items()}
    return Model(config=config, params=params), int(doc["step"]), opt_state
