"""Prompting pipelines: declarative step plans plus an executor.

Each strategy is a deterministic plan of templated generation steps. The
executor runs the steps against any backend, handles the Self-Ask branch
and the Self-Consistency vote, and extracts confidence scores on the
final-answer context.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping, Optional, Sequence

from .backend import Backend, Completion, CompletionRequest, ResponseCache, complete
from .confidence import (
    ConfidenceResult,
    p_true_confidence,
    token_prob_confidence,
    verbalized_confidence,
)
from .qa import ExtractedAnswer, QAItem, normalize_answer

ControlFlow = Literal["linear", "conditional_branch", "repeat_n_vote"]

_PLACEHOLDER_RE = re.compile(r"\{(question|facts|prior:[a-z_]+)\}")


class StrategyError(Exception):
    """Unknown strategy, unresolvable placeholder, or invalid plan."""


@dataclass(frozen=True)
class Step:
    name: str
    template: str
    request_overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class StrategyPlan:
    strategy_id: str
    steps: tuple[Step, ...]
    control: ControlFlow = "linear"
    repeat_n: int = 1
    repeat_temperature: Optional[float] = None
    max_followups: int = 3
    initial_priors: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.control == "repeat_n_vote" and self.repeat_n < 1:
            raise StrategyError("repeat_n_vote requires n >= 1")
        if not self.steps:
            raise StrategyError("a plan needs at least one step")


@dataclass(frozen=True)
class StepRecord:
    step_name: str
    prompt: str
    completion: Completion


@dataclass
class VoteDetail:
    candidates: list[str]
    counts: dict[str, int]
    winner: str


@dataclass
class Transcript:
    item_id: str
    strategy_id: str
    step_records: list[StepRecord]
    final_answer: ExtractedAnswer
    vote_detail: Optional[VoteDetail] = None

    @property
    def final_context(self) -> str:
        """Final-answer prompt plus the answer text; confidence probes append here."""
        last = self.step_records[-1]
        return f"{last.prompt} {last.completion.text}"

    def to_dict(self) -> dict:
        d = {
            "item_id": self.item_id,
            "strategy_id": self.strategy_id,
            "steps": [
                {
                    "step": rec.step_name,
                    "prompt": rec.prompt,
                    "completion": rec.completion.to_dict(),
                }
                for rec in self.step_records
            ],
            "final_answer": {
                "raw_text": self.final_answer.raw_text,
                "normalized": self.final_answer.normalized,
                "boolean_value": self.final_answer.boolean_value,
            },
        }
        if self.vote_detail is not None:
            d["vote"] = {
                "candidates": self.vote_detail.candidates,
                "counts": dict(self.vote_detail.counts),
                "winner": self.vote_detail.winner,
            }
        return d


KNOWLEDGE_PROMPT = "Generate some knowledge about the question:"
COT_PROMPT = "Let's think step by step:"
SELF_ASK_CHECK = "Are follow-up questions needed?"
FAR_FACT_PROMPT = "List the facts you know that are relevant to the question."
FAR_SOURCE_PROMPT = "What are the sources of the above facts?"
FAR_REFLECTION_PROMPT = "Reflect on the facts above and reason about the question."
FAR_ANSWER_CONSTRAINT = "Answer the question by choosing one answer."
PSEUDO_TOT_PROMPT = (
    "Imagine three different experts are answering this question. "
    "All experts will write down one step of their thinking, then share it "
    "with the group, then go on to the next step. If any expert realises "
    "they are wrong at any point then they leave. The experts continue "
    "until they agree on a single answer."
)

_FAR_CONTEXT = {
    "fact": "Facts: {prior:fact}\n",
    "source": "Sources: {prior:source}\n",
    "reflection": "Reflection: {prior:reflection}\n",
}


def _far_steps(
    with_source: bool,
    with_reflection: bool,
    final_prompt: str,
    human_facts: bool = False,
) -> list[Step]:
    steps: list[Step] = []
    context = "Question: {question}\n"
    if human_facts:
        context += "Facts: {facts}\n"
    else:
        steps.append(Step("fact", context + FAR_FACT_PROMPT))
        context += _FAR_CONTEXT["fact"]
        if with_source:
            steps.append(Step("source", context + FAR_SOURCE_PROMPT))
            context += _FAR_CONTEXT["source"]
    if with_reflection:
        steps.append(Step("reflection", context + FAR_REFLECTION_PROMPT))
        context += _FAR_CONTEXT["reflection"]
    steps.append(Step("answer", context + final_prompt))
    return steps


def _strategy_steps(strategy_id: str) -> tuple[list[Step], ControlFlow]:
    q = "Question: {question}\n"
    if strategy_id == "standard":
        return [Step("answer", q + "Answer:")], "linear"
    if strategy_id == "knowledge":
        return [
            Step("knowledge", q + KNOWLEDGE_PROMPT),
            Step("answer", q + "Knowledge: {prior:knowledge}\nAnswer:"),
        ], "linear"
    if strategy_id == "knowledge_explain":
        return [
            Step("knowledge", q + KNOWLEDGE_PROMPT),
            Step("answer", q + "Knowledge: {prior:knowledge}\nExplain and Answer:"),
        ], "linear"
    if strategy_id == "cot":
        return [
            Step("reason", q + COT_PROMPT),
            Step("answer", q + COT_PROMPT + " {prior:reason}\nAnswer:"),
        ], "linear"
    if strategy_id == "self_ask":
        return [
            Step("followup_check", q + SELF_ASK_CHECK),
            Step("followup_question", q + "{prior:pairs}Follow up:"),
            Step(
                "followup_answer",
                q + "{prior:pairs}Follow up: {prior:followup_question}\nIntermediate answer:",
            ),
            Step(
                "answer",
                "Question:{question}; Intermediate Questions and Answers: {prior:pairs} Answer:",
            ),
        ], "conditional_branch"
    if strategy_id == "self_ask_aggregate":
        return [
            Step(
                "decompose",
                q
                + SELF_ASK_CHECK
                + " Generate the follow-up questions and the corresponding intermediate answers:",
            ),
            Step(
                "answer",
                "Question:{question}; Intermediate Questions and Answers: {prior:decompose} Answer:",
            ),
        ], "linear"
    if strategy_id == "self_consistency":
        return [Step("sample", q + "Answer:")], "repeat_n_vote"
    if strategy_id == "pseudo_tot":
        return [
            Step("discussion", q + PSEUDO_TOT_PROMPT),
            Step("answer", q + "Expert discussion: {prior:discussion}\nAnswer:"),
        ], "linear"
    far_answer = FAR_ANSWER_CONSTRAINT + "\nAnswer:"
    if strategy_id == "far_final":
        return _far_steps(True, True, far_answer), "linear"
    if strategy_id == "far_fact_only":
        return _far_steps(True, False, far_answer), "linear"
    if strategy_id == "far_fact_only_no_source":
        return _far_steps(False, False, far_answer), "linear"
    if strategy_id == "far_no_source":
        return _far_steps(False, True, far_answer), "linear"
    if strategy_id == "far_explain":
        return _far_steps(True, True, FAR_ANSWER_CONSTRAINT + "\nExplain and Answer:"), "linear"
    if strategy_id == "far_free":
        return _far_steps(True, True, "Answer:"), "linear"
    if strategy_id == "far_human_facts":
        return _far_steps(False, True, far_answer, human_facts=True), "linear"
    raise StrategyError(f"unknown strategy {strategy_id!r}")


STRATEGY_IDS = (
    "standard",
    "knowledge",
    "knowledge_explain",
    "cot",
    "self_ask",
    "self_ask_aggregate",
    "self_consistency",
    "pseudo_tot",
    "far_final",
    "far_fact_only",
    "far_fact_only_no_source",
    "far_no_source",
    "far_explain",
    "far_free",
    "far_human_facts",
)


@dataclass(frozen=True)
class StrategyConfig:
    """Knobs shared by plan construction and execution."""

    self_consistency_n: int = 10
    self_consistency_temperature: float = 0.7
    self_ask_max_followups: int = 3
    demonstrations: tuple[tuple[str, str], ...] = ()
    thought_char_budget: Optional[int] = None
    template_overrides: Mapping[str, Mapping[str, str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "demonstrations", tuple((q, a) for q, a in self.demonstrations)
        )
        object.__setattr__(
            self,
            "template_overrides",
            {k: dict(v) for k, v in dict(self.template_overrides).items()},
        )


def plan(strategy_id: str, item: QAItem, config: Optional[StrategyConfig] = None) -> StrategyPlan:
    """Build the deterministic step plan for one strategy on one item."""
    config = config or StrategyConfig()
    steps, control = _strategy_steps(strategy_id)
    overrides = config.template_overrides.get(strategy_id, {})
    if overrides:
        steps = [
            replace(s, template=overrides.get(s.name, s.template)) for s in steps
        ]
    initial_priors: dict = {}
    if strategy_id == "far_human_facts":
        if not item.gold_facts:
            raise StrategyError(
                f"strategy far_human_facts requires gold_facts on item {item.id!r}"
            )
        initial_priors["facts"] = "\n".join(item.gold_facts)
    if config.demonstrations and strategy_id in ("standard", "self_consistency"):
        demo_block = "".join(
            f"Question: {dq}\nAnswer: {da}\n\n" for dq, da in config.demonstrations
        )
        steps = [replace(s, template=demo_block + s.template) for s in steps]
    repeat_n = config.self_consistency_n if control == "repeat_n_vote" else 1
    repeat_temp = (
        config.self_consistency_temperature if control == "repeat_n_vote" else None
    )
    return StrategyPlan(
        strategy_id=strategy_id,
        steps=tuple(steps),
        control=control,
        repeat_n=repeat_n,
        repeat_temperature=repeat_temp,
        max_followups=config.self_ask_max_followups,
        initial_priors=initial_priors,
    )


def render_step(
    step: Step,
    question: str,
    priors: Mapping[str, str],
    thought_char_budget: Optional[int] = None,
) -> str:
    """Substitute {question} and {prior:...} placeholders, bit-exactly.

    Prior-step text is truncated to the thought budget when one is set.
    Unresolved placeholders are named in the error.
    """

    def _sub(match: re.Match) -> str:
        key = match.group(1)
        if key == "question":
            return question
        if key == "facts":
            if "facts" not in priors:
                raise StrategyError(f"step {step.name!r}: no facts available for {{facts}}")
            return priors["facts"]
        prior_name = key.split(":", 1)[1]
        if prior_name not in priors:
            raise StrategyError(
                f"step {step.name!r}: unresolved placeholder {{prior:{prior_name}}}"
            )
        value = priors[prior_name]
        if thought_char_budget is not None:
            value = value[:thought_char_budget]
        return value

    return _PLACEHOLDER_RE.sub(_sub, step.template)


def majority_vote(candidates: Sequence[ExtractedAnswer]) -> tuple[ExtractedAnswer, dict[str, int]]:
    """Pick the most frequent normalized answer; ties go to first occurrence."""
    if not candidates:
        raise StrategyError("majority_vote needs at least one candidate")
    counts = Counter(c.normalized for c in candidates)
    best = max(counts.values())
    for cand in candidates:
        if counts[cand.normalized] == best:
            return cand, dict(counts)
    raise AssertionError("unreachable")


@dataclass
class ExecutionSettings:
    """Request defaults and extraction switches used by `execute`."""

    max_tokens: int = 120
    temperature: float = 1.2
    clamp_confidences: bool = True
    p_true_normalized: bool = False
    p_true_full_context: bool = True
    percent_interpretation: bool = False
    thought_char_budget: Optional[int] = None


def _run_step(
    step: Step,
    prompt: str,
    backend: Backend,
    settings: ExecutionSettings,
    cache: Optional[ResponseCache],
    seed: Optional[int] = None,
    temperature: Optional[float] = None,
) -> Completion:
    overrides = dict(step.request_overrides)
    request = CompletionRequest(
        prompt=prompt,
        max_tokens=overrides.get("max_tokens", settings.max_tokens),
        temperature=temperature
        if temperature is not None
        else overrides.get("temperature", settings.temperature),
        top_logprobs=overrides.get("top_logprobs", 0),
        seed=seed,
        stop=overrides.get("stop"),
    )
    return complete(backend, request, cache=cache)


def execute(
    strategy_plan: StrategyPlan,
    item: QAItem,
    backend: Backend,
    extraction_methods: Sequence[str] = ("token_prob",),
    settings: Optional[ExecutionSettings] = None,
    cache: Optional[ResponseCache] = None,
) -> tuple[Transcript, dict[str, ConfidenceResult]]:
    """Run a plan end to end and extract confidences on the final answer."""
    settings = settings or ExecutionSettings()
    priors: dict[str, str] = dict(strategy_plan.initial_priors)
    records: list[StepRecord] = []
    vote_detail: Optional[VoteDetail] = None

    def run(step: Step, seed: Optional[int] = None, temperature: Optional[float] = None) -> Completion:
        prompt = render_step(step, item.question, priors, settings.thought_char_budget)
        try:
            completion = _run_step(step, prompt, backend, settings, cache, seed, temperature)
        except Exception as exc:
            raise StrategyError(
                f"step {step.name!r} of strategy {strategy_plan.strategy_id!r} failed: {exc}"
            ) from exc
        records.append(StepRecord(step.name, prompt, completion))
        priors[step.name] = completion.text
        return completion

    if strategy_plan.control == "repeat_n_vote":
        step = strategy_plan.steps[0]
        candidates = []
        for i in range(strategy_plan.repeat_n):
            completion = run(step, seed=i, temperature=strategy_plan.repeat_temperature)
            candidates.append(ExtractedAnswer.from_text(completion.text, item.answer_kind))
        winner, counts = majority_vote(candidates)
        vote_detail = VoteDetail(
            candidates=[c.normalized for c in candidates], counts=counts, winner=winner.normalized
        )
        final_answer = winner
        # The winner's first sampled completion stands in as the final answer
        # record for confidence extraction.
        winner_index = vote_detail.candidates.index(winner.normalized)
        final_record = records[winner_index]
    elif strategy_plan.control == "conditional_branch":
        by_name = {s.name: s for s in strategy_plan.steps}
        check = run(by_name["followup_check"])
        priors["pairs"] = ""
        if normalize_answer(check.text).split()[:1] != ["no"]:
            for _ in range(strategy_plan.max_followups):
                fq = run(by_name["followup_question"])
                fa = run(by_name["followup_answer"])
                priors["pairs"] += (
                    f"Follow up: {fq.text} Intermediate answer: {fa.text} "
                )
        completion = run(by_name["answer"])
        final_answer = ExtractedAnswer.from_text(completion.text, item.answer_kind)
        final_record = records[-1]
    else:
        for step in strategy_plan.steps:
            completion = run(step)
        final_answer = ExtractedAnswer.from_text(completion.text, item.answer_kind)
        final_record = records[-1]

    transcript = Transcript(
        item_id=item.id,
        strategy_id=strategy_plan.strategy_id,
        step_records=records,
        final_answer=final_answer,
        vote_detail=vote_detail,
    )

    confidences: dict[str, ConfidenceResult] = {}
    final_context = f"{final_record.prompt} {final_record.completion.text}"
    for method in extraction_methods:
        if method == "token_prob":
            confidences[method] = token_prob_confidence(final_record.completion)
        elif method == "p_true":
            context = (
                final_context
                if settings.p_true_full_context
                else f"Question: {item.question}"
            )
            confidences[method] = p_true_confidence(
                backend,
                context,
                final_answer.raw_text,
                normalized=settings.p_true_normalized,
                cache=cache,
            )
        elif method == "verbalized":
            confidences[method] = verbalized_confidence(
                backend,
                final_context,
                clamp=settings.clamp_confidences,
                percent_interpretation=settings.percent_interpretation,
                cache=cache,
            )
        else:
            raise StrategyError(f"unknown extraction method {method!r}")
    return transcript, confidences
