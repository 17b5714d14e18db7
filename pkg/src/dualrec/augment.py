"""Prompt augmentation: paraphrase triggers into many templates.

The live path posts a chat-completion request to a configurable endpoint
(one paraphrase per response line).  The default path is a deterministic
offline generator, so nothing here ever touches the network unless a
caller explicitly opts in.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import requests

AUTH_ENV_VAR = "DUALREC_CHAT_TOKEN"

_PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")


class EndpointConfigError(RuntimeError):
    """Missing credentials or endpoint configuration; raised before any I/O."""


class EndpointError(RuntimeError):
    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


@dataclass
class AugmentationRequest:
    api_instructions: str
    demonstrations: List[Tuple[str, List[str]]]
    contexts: List[str]
    model: str
    endpoint: str

    def serialize(self) -> str:
        """Deterministic text: instructions, then demos, then unfilled contexts."""
        parts = [self.api_instructions, ""]
        for trigger, results in self.demonstrations:
            parts.append(f"Statement: {trigger}")
            for r in results:
                parts.append(f"- {r}")
            parts.append("")
        for trigger in self.contexts:
            parts.append(f"Statement: {trigger}")
            parts.append("-")
        return "\n".join(parts)

    def payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": self.serialize()}],
        }


@dataclass
class GeneratedPromptBatch:
    trigger: str
    candidates: List[str]
    accepted: List[str]
    rejected_counts: Dict[str, int] = field(default_factory=dict)
    warning: Optional[str] = None


def build_request(
    trigger: str,
    demos: Sequence[Tuple[str, List[str]]],
    n: int,
    model: str,
    endpoint: str,
) -> AugmentationRequest:
    if not trigger.strip():
        raise ValueError("build_request: empty trigger")
    if n < 1:
        raise ValueError("build_request: n must be >= 1")
    if not demos:
        raise ValueError("build_request: need at least one demonstration")
    instructions = (
        f"Rewrite each statement below in {n} different ways that keep the same "
        "meaning. Keep every {placeholder} exactly as written. "
        "Answer with one rewrite per line, prefixed by '- '."
    )  # only the first literal is an f-string; "{placeholder}" stays verbatim
    return AugmentationRequest(
        api_instructions=instructions,
        demonstrations=list(demos),
        contexts=[trigger],
        model=model,
        endpoint=endpoint,
    )


def call_endpoint(
    request: AugmentationRequest,
    timeout: float = 30.0,
    max_attempts: int = 3,
    session: Optional[requests.Session] = None,
    backoff: float = 1.0,
) -> str:
    """POST the chat payload; exponential backoff, no retry on auth errors."""
    token = os.environ.get(AUTH_ENV_VAR, "").strip()
    if not token:
        raise EndpointConfigError(
            f"missing auth token: set {AUTH_ENV_VAR} before enabling live mode"
        )
    if not request.endpoint:
        raise EndpointConfigError("no endpoint URL configured")
    sess = session or requests.Session()
    headers = {"Authorization": f"Bearer {token}"}
    last_exc: Optional[Exception] = None
    for attempt in range(max_attempts):
        try:
            resp = sess.post(
                request.endpoint,
                json=request.payload(),
                headers=headers,
                timeout=timeout,
            )
        except requests.RequestException as exc:
            last_exc = exc
            time.sleep(backoff * (2**attempt))
            continue
        if resp.status_code in (401, 403):
            raise EndpointConfigError(f"endpoint rejected credentials ({resp.status_code})")
        if resp.status_code >= 400:
            last_exc = EndpointError(
                f"endpoint returned {resp.status_code}", status=resp.status_code
            )
            time.sleep(backoff * (2**attempt))
            continue
        body = resp.json()
        return body["choices"][0]["message"]["content"]
    if isinstance(last_exc, EndpointError):
        raise last_exc
    raise EndpointError(f"endpoint unreachable after {max_attempts} attempts: {last_exc}")


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def parse_and_validate(response_text: str, trigger: str) -> GeneratedPromptBatch:
    """One candidate per line; keep placeholder-exact, non-empty, distinct ones."""
    wanted = set(_PLACEHOLDER_RE.findall(trigger))
    candidates: List[str] = []
    for line in response_text.splitlines():
        line = line.strip()
        if line.startswith("- "):
            line = line[2:].strip()
        elif line.startswith("-"):
            line = line[1:].strip()
        if line:
            candidates.append(line)
    accepted: List[str] = []
    seen_norm: set = set()
    rejected = {"empty": 0, "placeholders": 0, "duplicate": 0}
    for c in candidates:
        if not c.strip():
            rejected["empty"] += 1
            continue
        if set(_PLACEHOLDER_RE.findall(c)) != wanted:
            rejected["placeholders"] += 1
            continue
        norm = _normalize(c)
        if norm in seen_norm or norm == _normalize(trigger):
            rejected["duplicate"] += 1
            continue
        seen_norm.add(norm)
        accepted.append(c)
    if not accepted:
        raise ValueError(
            "parse_and_validate: no acceptable candidates in response; regenerate"
        )
    return GeneratedPromptBatch(
        trigger=trigger, candidates=candidates, accepted=accepted, rejected_counts=rejected
    )


# ---------------------------------------------------------------------------
# offline paraphraser: seeded recombination of openers, closers, frames and
# synonym swaps; placeholders are never rewritten.

_OPENERS = [
    "",
    "Please",
    "Kindly",
    "Your task:",
    "Task:",
    "As a recommender,",
    "For this request,",
    "Now,",
    "Next,",
    "In this task,",
]
_CLOSERS = [
    "",
    "Respond concisely.",
    "Give your answer.",
    "Answer now.",
    "Provide the result.",
    "Output only the answer.",
    "Reply briefly.",
]
_FRAMES = [
    "{body}",
    "I want you to do the following: {body}",
    "Here is what to do: {body}",
    "Consider the data and {body}",
]

_SYNONYMS: Dict[str, List[str]] = {
    "predict": ["predict", "estimate", "forecast", "guess"],
    "user": ["user", "customer", "shopper"],
    "item": ["item", "product", "article"],
    "rate": ["rate", "score", "grade"],
    "rating": ["rating", "score", "grade"],
    "next": ["next", "upcoming", "following"],
    "pick": ["pick", "choose", "select"],
    "choose": ["choose", "pick", "select"],
    "explain": ["explain", "describe", "clarify"],
    "summary": ["summary", "digest", "recap"],
    "summarize": ["summarize", "condense", "recap"],
    "review": ["review", "write-up", "feedback"],
    "best": ["best", "most fitting", "top"],
    "give": ["give", "provide", "supply"],
    "name": ["name", "identify", "state"],
    "write": ["write", "compose", "produce"],
}


def _swap_synonyms(text: str, rng: np.random.Generator) -> str:
    out = []
    for tok in text.split(" "):
        if tok.startswith("{") or not tok:
            out.append(tok)
            continue
        m = re.match(r"^(\w+)(\W*)$", tok)
        if not m:
            out.append(tok)
            continue
        word, tail = m.group(1), m.group(2)
        alts = _SYNONYMS.get(word.lower())
        if alts:
            choice = alts[int(rng.integers(len(alts)))]
            if word[0].isupper():
                choice = choice[0].upper() + choice[1:]
            out.append(choice + tail)
        else:
            out.append(tok)
    return " ".join(out)


def offline_paraphrase(trigger: str, n: int, seed: int) -> GeneratedPromptBatch:
    """Deterministic rule-based paraphrases: n distinct, placeholder-preserving."""
    if n < 1:
        raise ValueError("offline_paraphrase: n must be >= 1")
    if not trigger.strip():
        raise ValueError("offline_paraphrase: empty trigger")
    rng = np.random.default_rng(seed)
    body = trigger[0].lower() + trigger[1:] if trigger[:1].isupper() else trigger
    combos = [
        (o, f, c) for o in _OPENERS for f in _FRAMES for c in _CLOSERS
    ]
    order = rng.permutation(len(combos))
    wanted = set(_PLACEHOLDER_RE.findall(trigger))
    accepted: List[str] = []
    candidates: List[str] = []
    seen_norm = {_normalize(trigger)}
    # several synonym-variation rounds over the combo space
    for round_ in range(6):
        for idx in order:
            opener, frame, closer = combos[idx]
            text = _swap_synonyms(body, rng) if round_ else body
            sent = frame.format(body=text)
            if opener:
                sent = f"{opener} {sent}"
            else:
                sent = sent[0].upper() + sent[1:]
            if closer:
                sent = f"{sent} {closer}"
            candidates.append(sent)
            if set(_PLACEHOLDER_RE.findall(sent)) != wanted:
                continue
            norm = _normalize(sent)
            if norm in seen_norm:
                continue
            seen_norm.add(norm)
            accepted.append(sent)
            if len(accepted) >= n:
                return GeneratedPromptBatch(
                    trigger=trigger, candidates=candidates, accepted=accepted
                )
    return GeneratedPromptBatch(
        trigger=trigger,
        candidates=candidates,
        accepted=accepted,
        warning=f"rule space exhausted: produced {len(accepted)} of {n} requested",
    )
