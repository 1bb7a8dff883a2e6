"""Confidence-score extraction protocols.

Three ways to score how sure the model is of an answer it already gave:
averaged token log-probability, the probability of affirming the answer in
a True/False follow-up, and a verbalized numeric confidence.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Literal, Optional

from .backend import Backend, Completion, CompletionRequest, complete, ResponseCache

MethodId = Literal["token_prob", "p_true", "verbalized"]

POSSIBLE_ANSWER_PREFIX = "Possible answer: "
P_TRUE_QUESTION = "Is the possible answer: (A) True (B) False"
VERBALIZED_SUFFIX = "Confidence (0-1):"

_NUMERAL_RE = re.compile(r"\d+\.\d+|\.\d+|\d+")


class ConfidenceError(Exception):
    """Base class for confidence extraction failures."""


class UnparseableConfidenceError(ConfidenceError):
    """No numeral found in a verbalized confidence reply."""


class ExtractionFailedError(ConfidenceError):
    """The P(True) follow-up produced no usable A/B token."""


@dataclass(frozen=True)
class ConfidenceResult:
    method: MethodId
    value: float
    raw_value: float
    clamped: bool = False
    aux: Optional[dict] = None

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "value": self.value,
            "raw_value": self.raw_value,
            "clamped": self.clamped,
        }
        if self.aux is not None:
            d["aux"] = dict(self.aux)
        return d


def _clamp(method: MethodId, raw: float, clamp: bool, aux: Optional[dict] = None) -> ConfidenceResult:
    if clamp:
        value = min(1.0, max(0.0, raw))
        return ConfidenceResult(
            method=method, value=value, raw_value=raw, clamped=value != raw, aux=aux
        )
    return ConfidenceResult(method=method, value=raw, raw_value=raw, clamped=False, aux=aux)


def token_prob_confidence(completion: Completion) -> ConfidenceResult:
    """exp(mean per-token logprob): the reciprocal perplexity of the sequence."""
    if not completion.token_logprobs:
        raise ConfidenceError("completion has no token logprobs")
    for lp in completion.token_logprobs:
        if lp > 0:
            raise ConfidenceError(f"log-probability {lp} > 0 is invalid")
    value = math.exp(sum(completion.token_logprobs) / len(completion.token_logprobs))
    return ConfidenceResult(method="token_prob", value=value, raw_value=value)


def _match_choice(top_logprobs: dict, choice: str) -> Optional[float]:
    for token, lp in top_logprobs.items():
        if token.strip().casefold() == choice.casefold():
            return lp
    return None


def p_true_confidence(
    backend: Backend,
    answer_context: str,
    possible_answer: str,
    normalized: bool = False,
    cache: Optional[ResponseCache] = None,
) -> ConfidenceResult:
    """Probability the model puts on affirming its own candidate answer.

    Appends the possible answer and the fixed True/False question, asks for
    a single token with top-5 alternatives, and reads off the probability of
    "A" (one leading space trimmed, case-folded). `normalized` rescales to
    p(A) / (p(A) + p(B)).
    """
    prompt = (
        f"{answer_context}\n{POSSIBLE_ANSWER_PREFIX}{possible_answer}\n{P_TRUE_QUESTION}\n"
    )
    request = CompletionRequest(prompt=prompt, max_tokens=1, temperature=0.0, top_logprobs=5)
    completion = complete(backend, request, cache=cache)
    if not completion.top_logprobs:
        raise ExtractionFailedError("backend returned no top-logprobs for the P(True) probe")
    first = completion.top_logprobs[0]
    lp_a = _match_choice(first, "A")
    lp_b = _match_choice(first, "B")
    if lp_a is None and lp_b is None:
        raise ExtractionFailedError(
            f"neither 'A' nor 'B' among top tokens: {sorted(first)}"
        )
    p_a = math.exp(lp_a) if lp_a is not None else 0.0
    p_b = math.exp(lp_b) if lp_b is not None else 0.0
    aux = {"p_a": p_a, "p_b": p_b}
    if normalized:
        value = p_a / (p_a + p_b)
        return ConfidenceResult(method="p_true", value=value, raw_value=value, aux=aux)
    return ConfidenceResult(method="p_true", value=p_a, raw_value=p_a, aux=aux)


def parse_verbalized(
    text: str,
    clamp: bool = True,
    percent_interpretation: bool = False,
) -> ConfidenceResult:
    """Read the first numeral in the text as a confidence.

    With `percent_interpretation`, values in (1, 100] are divided by 100.
    Clamping to [0, 1] is on by default; the raw value is always preserved.
    """
    match = _NUMERAL_RE.search(text)
    if match is None:
        raise UnparseableConfidenceError(f"no numeral in confidence reply: {text[:120]!r}")
    raw = float(match.group())
    if percent_interpretation and 1.0 < raw <= 100.0:
        raw = raw / 100.0
    return _clamp("verbalized", raw, clamp)


def verbalized_confidence(
    backend: Backend,
    answer_context: str,
    clamp: bool = True,
    percent_interpretation: bool = False,
    cache: Optional[ResponseCache] = None,
) -> ConfidenceResult:
    """Ask the model to state its own confidence after the answer."""
    prompt = f"{answer_context}\n{VERBALIZED_SUFFIX}"
    request = CompletionRequest(prompt=prompt, max_tokens=8, temperature=0.0)
    completion = complete(backend, request, cache=cache)
    return parse_verbalized(
        completion.text, clamp=clamp, percent_interpretation=percent_interpretation
    )
