"""Run orchestration: dataset loading, evaluation runs, reports, and sweeps.

Everything on disk is JSONL or JSON. Report bodies carry no timestamps
(those live in a sidecar) so identical configurations produce byte-identical
reports regardless of worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence

from . import metrics as cal
from .backend import Backend, HttpBackend, ResponseCache, load_mock_script
from .concern import ConcernLexicon, concern_rate, detect_concern
from .qa import EvalRecord, QAItem, exact_match
from .strategies import (
    ExecutionSettings,
    StrategyConfig,
    Transcript,
    execute,
    plan,
)

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    dataset_path: list[str]
    strategy_ids: list[str] = field(default_factory=lambda: ["standard"])
    extraction_method_ids: list[str] = field(default_factory=lambda: ["token_prob"])
    backend: dict = field(default_factory=dict)
    num_buckets: int = 10
    max_tokens: int = 120
    temperature: float = 1.2
    self_consistency_n: int = 10
    self_consistency_temperature: float = 0.7
    clamp_confidences: bool = True
    seed: int = 0
    demonstrations: list = field(default_factory=list)
    thought_char_budget: Optional[int] = None
    cache_path: Optional[str] = None
    out_dir: Optional[str] = None
    worker_count: int = 4
    concern_lexicon_path: Optional[str] = None
    p_true_normalized: bool = False
    p_true_full_context: bool = True
    kde_grid_size: int = 256

    def __post_init__(self) -> None:
        if isinstance(self.dataset_path, (str, Path)):
            self.dataset_path = [str(self.dataset_path)]
        else:
            self.dataset_path = [str(p) for p in self.dataset_path]
        if not self.dataset_path:
            raise ConfigError("at least one dataset path required")
        if not self.strategy_ids:
            raise ConfigError("at least one strategy required")
        if not self.extraction_method_ids:
            raise ConfigError("at least one extraction method required")
        if self.num_buckets < 1:
            raise ConfigError("num_buckets must be >= 1")
        if self.worker_count < 1:
            raise ConfigError("worker_count must be >= 1")

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        with Path(path).open("r", encoding="utf-8") as fh:
            data = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def snapshot(self) -> dict:
        return {
            "dataset_path": list(self.dataset_path),
            "strategy_ids": list(self.strategy_ids),
            "extraction_method_ids": list(self.extraction_method_ids),
            "backend": dict(self.backend),
            "num_buckets": self.num_buckets,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "self_consistency_n": self.self_consistency_n,
            "self_consistency_temperature": self.self_consistency_temperature,
            "clamp_confidences": self.clamp_confidences,
            "seed": self.seed,
            "demonstrations": [list(d) for d in self.demonstrations],
            "thought_char_budget": self.thought_char_budget,
        }


def load_dataset(path: str | Path) -> list[QAItem]:
    """Read a JSONL dataset; duplicate ids and invalid items are rejected."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    items: list[QAItem] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            try:
                item = QAItem(
                    id=str(raw["id"]),
                    question=raw["question"],
                    gold_answers=tuple(raw["answers"]),
                    answer_kind=raw.get("answer_kind", "free_form"),
                    gold_facts=tuple(raw["gold_facts"]) if raw.get("gold_facts") else None,
                    external_knowledge=raw.get("external_knowledge"),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: invalid item: {exc}") from exc
            if item.id in seen:
                raise DataError(
                    f"{path}:{lineno}: duplicate id {item.id!r} (first seen on line {seen[item.id]})"
                )
            seen[item.id] = lineno
            items.append(item)
    return items


def write_dataset(items: Sequence[QAItem], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for item in items:
            row = {
                "id": item.id,
                "question": item.question,
                "answers": list(item.gold_answers),
                "answer_kind": item.answer_kind,
            }
            if item.gold_facts:
                row["gold_facts"] = list(item.gold_facts)
            if item.external_knowledge:
                row["external_knowledge"] = item.external_knowledge
            fh.write(json.dumps(row, sort_keys=True) + "\n")


@dataclass
class RunReport:
    config: dict
    datasets: list[dict]
    macro: Optional[dict] = None
    transcripts_path: Optional[str] = None

    def to_dict(self) -> dict:
        # transcripts_path is environment-specific and stays out of the body
        # so reports remain byte-reproducible across machines and runs.
        d = {"config": self.config, "datasets": self.datasets}
        if self.macro is not None:
            d["macro"] = self.macro
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def records(self, dataset_index: int = 0, strategy_id: Optional[str] = None) -> list[EvalRecord]:
        out = []
        for row in self.datasets[dataset_index]["records"]:
            if strategy_id is not None and row["strategy_id"] != strategy_id:
                continue
            out.append(
                EvalRecord(
                    item_id=row["item_id"],
                    correct=row["correct"],
                    confidences=row["confidences"],
                    concern=row["concern"],
                    strategy_id=row["strategy_id"],
                )
            )
        return out

    @classmethod
    def from_json(cls, path: str | Path) -> "RunReport":
        with Path(path).open("r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(
            config=data["config"],
            datasets=data["datasets"],
            macro=data.get("macro"),
            transcripts_path=data.get("transcripts_path"),
        )


def build_backend(config: RunConfig) -> Backend:
    kind = config.backend.get("kind")
    if kind == "mock":
        script = config.backend.get("script_path")
        if not script:
            raise ConfigError("mock backend requires script_path")
        return load_mock_script(script)
    if kind == "http":
        base_url = config.backend.get("base_url")
        model = config.backend.get("model")
        if not base_url or not model:
            raise ConfigError("http backend requires base_url and model")
        return HttpBackend(base_url, model)
    raise ConfigError(f"unknown backend kind {kind!r}")


_MACRO_KEYS = (
    "ece",
    "ice_pos",
    "ice_neg",
    "macro_ce",
    "avg_confidence",
    "accuracy",
)


def _strategy_config(config: RunConfig) -> StrategyConfig:
    return StrategyConfig(
        self_consistency_n=config.self_consistency_n,
        self_consistency_temperature=config.self_consistency_temperature,
        demonstrations=tuple(tuple(d) for d in config.demonstrations),
        thought_char_budget=config.thought_char_budget,
    )


def _settings(config: RunConfig) -> ExecutionSettings:
    return ExecutionSettings(
        max_tokens=config.max_tokens,
        temperature=config.temperature,
        clamp_confidences=config.clamp_confidences,
        p_true_normalized=config.p_true_normalized,
        p_true_full_context=config.p_true_full_context,
        thought_char_budget=config.thought_char_budget,
    )


def run_eval(
    config: RunConfig,
    backend: Optional[Backend] = None,
    lexicon: Optional[ConcernLexicon] = None,
) -> RunReport:
    """Run every (item x strategy), then aggregate metrics in a single pass.

    Item-level work may run on a bounded worker pool; aggregation happens
    after all transcripts have landed, so worker count never affects the
    report.
    """
    if backend is None:
        backend = build_backend(config)
    if lexicon is None:
        lexicon = (
            ConcernLexicon.from_file(config.concern_lexicon_path)
            if config.concern_lexicon_path
            else ConcernLexicon()
        )
    cache = ResponseCache(config.cache_path) if config.cache_path else None
    strategy_config = _strategy_config(config)
    settings = _settings(config)

    out_dir = Path(config.out_dir) if config.out_dir else None
    transcripts_path: Optional[Path] = None
    transcripts_lock = threading.Lock()
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        transcripts_path = out_dir / "transcripts.jsonl"
        transcripts_path.write_text("", encoding="utf-8")

    def persist(transcript: Transcript) -> None:
        if transcripts_path is None:
            return
        line = json.dumps(transcript.to_dict(), sort_keys=True)
        with transcripts_lock:
            with transcripts_path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def evaluate(item: QAItem, strategy_id: str) -> tuple[EvalRecord, Transcript]:
        try:
            strategy_plan = plan(strategy_id, item, strategy_config)
            transcript, confidences = execute(
                strategy_plan,
                item,
                backend,
                extraction_methods=config.extraction_method_ids,
                settings=settings,
                cache=cache,
            )
        except Exception as exc:
            raise RuntimeError(
                f"evaluation failed for item {item.id!r}, strategy {strategy_id!r}: {exc}"
            ) from exc
        persist(transcript)
        concern, _ = detect_concern(transcript.final_answer.raw_text, lexicon)
        record = EvalRecord(
            item_id=item.id,
            correct=exact_match(transcript.final_answer, item),
            confidences={m: r.value for m, r in confidences.items()},
            concern=concern,
            strategy_id=strategy_id,
        )
        return record, transcript

    dataset_blocks: list[dict] = []
    for ds_path in config.dataset_path:
        items = load_dataset(ds_path)
        if not items:
            raise DataError(f"dataset {ds_path} is empty")
        tasks = [(item, sid) for sid in config.strategy_ids for item in items]
        results: dict[tuple[str, str], tuple[EvalRecord, Transcript]] = {}
        if config.worker_count == 1:
            for item, sid in tasks:
                results[(sid, item.id)] = evaluate(item, sid)
        else:
            with ThreadPoolExecutor(max_workers=config.worker_count) as pool:
                futures = {
                    pool.submit(evaluate, item, sid): (sid, item.id) for item, sid in tasks
                }
                for future, key in futures.items():
                    results[key] = future.result()

        block: dict = {"path": str(ds_path), "n_items": len(items), "strategies": {}}
        records_out: list[dict] = []
        ece_rows: list[dict] = []
        macro_rows: list[dict] = []
        for sid in config.strategy_ids:
            records = [results[(sid, item.id)][0] for item in items]
            transcripts = [results[(sid, item.id)][1] for item in items]
            strat_block: dict = {
                "accuracy": sum(r.correct for r in records) / len(records),
                "concern_rate": concern_rate(transcripts, lexicon),
                "extractions": {},
            }
            ece_row: dict = {}
            macro_row: dict = {}
            for method in config.extraction_method_ids:
                summary = cal.summarize(records, method, config.num_buckets)
                confs = [r.confidence(method) for r in records]
                curves = {
                    "histogram": cal.distribution_curve(
                        confs, "histogram", config.num_buckets
                    ).to_dict(),
                    "kde": cal.distribution_curve(
                        confs, "kde", config.kde_grid_size
                    ).to_dict(),
                }
                entry = summary.to_dict()
                entry["curves"] = curves
                strat_block["extractions"][method] = entry
                ece_row[method] = summary.ece
                macro_row[method] = summary.macro_ce
            block["strategies"][sid] = strat_block
            ece_rows.append(ece_row)
            macro_rows.append(macro_row)
            records_out.extend(
                {
                    "item_id": r.item_id,
                    "strategy_id": r.strategy_id,
                    "correct": r.correct,
                    "concern": r.concern,
                    "confidences": dict(sorted(r.confidences.items())),
                }
                for r in records
            )
        block["wins"] = {
            "ece": cal.wins_table(ece_rows),
            "macro_ce": cal.wins_table(macro_rows),
        }
        block["records"] = records_out
        dataset_blocks.append(block)

    macro_block: Optional[dict] = None
    if len(dataset_blocks) >= 2:
        macro_block = {"strategies": {}}
        for sid in config.strategy_ids:
            strat: dict = {
                "accuracy": _mean(
                    b["strategies"][sid]["accuracy"] for b in dataset_blocks
                ),
                "concern_rate": _mean(
                    b["strategies"][sid]["concern_rate"] for b in dataset_blocks
                ),
                "extractions": {},
            }
            for method in config.extraction_method_ids:
                strat["extractions"][method] = {
                    key: _mean(
                        b["strategies"][sid]["extractions"][method][key]
                        for b in dataset_blocks
                    )
                    for key in _MACRO_KEYS
                }
            macro_block["strategies"][sid] = strat

    report = RunReport(
        config=config.snapshot(),
        datasets=dataset_blocks,
        macro=macro_block,
        transcripts_path=str(transcripts_path) if transcripts_path else None,
    )
    if out_dir:
        emit_report(report, out_dir)
    return report


def _mean(values) -> Optional[float]:
    values = [v for v in values if v is not None]
    if not values:
        return None
    return sum(values) / len(values)


CSV_COLUMNS = (
    "dataset",
    "strategy",
    "extraction",
    "n",
    "accuracy",
    "avg_conf",
    "gap",
    "ece",
    "ice_pos",
    "ice_neg",
    "macro_ce",
    "concern_rate",
)


def emit_report(
    report: RunReport,
    out_dir: str | Path,
    formats: Sequence[Literal["json", "csv"]] = ("json", "csv"),
) -> dict[str, Path]:
    """Write report.json, records.jsonl, metrics.csv, and per-curve CSVs.

    Wall-clock metadata goes to a sidecar so the report body stays
    byte-reproducible.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    if "json" in formats:
        path = out_dir / "report.json"
        path.write_text(report.to_json() + "\n", encoding="utf-8")
        written["report"] = path
        records_path = out_dir / "records.jsonl"
        with records_path.open("w", encoding="utf-8") as fh:
            for block in report.datasets:
                for row in block["records"]:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
        written["records"] = records_path
        import time

        meta_path = out_dir / "run_meta.json"
        meta = {"written_at": time.time()}
        if report.transcripts_path:
            meta["transcripts_path"] = report.transcripts_path
        meta_path.write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
        written["meta"] = meta_path
    if "csv" in formats:
        path = out_dir / "metrics.csv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for block in report.datasets:
                for sid, strat in block["strategies"].items():
                    for method, entry in strat["extractions"].items():
                        writer.writerow(
                            [
                                block["path"],
                                sid,
                                method,
                                entry["n"],
                                entry["accuracy"],
                                entry["avg_confidence"],
                                entry["avg_confidence"] - entry["accuracy"],
                                entry["ece"],
                                entry["ice_pos"],
                                entry["ice_neg"],
                                entry["macro_ce"],
                                strat["concern_rate"],
                            ]
                        )
        written["metrics"] = path
        curves_dir = out_dir / "curves"
        curves_dir.mkdir(exist_ok=True)
        for block in report.datasets:
            ds_tag = Path(block["path"]).stem
            for sid, strat in block["strategies"].items():
                for method, entry in strat["extractions"].items():
                    for kind, curve in entry["curves"].items():
                        cpath = curves_dir / f"{ds_tag}__{sid}__{method}__{kind}.csv"
                        with cpath.open("w", encoding="utf-8", newline="") as fh:
                            writer = csv.writer(fh)
                            writer.writerow(["x", "density"])
                            writer.writerows(curve["points"])
        written["curves"] = curves_dir
    return written


SWEEP_AXES = ("thought_char_budget", "demonstrations_count")


def sweep(
    config: RunConfig,
    axis: str,
    values: Sequence,
    backend: Optional[Backend] = None,
) -> dict:
    """Re-run the evaluation once per axis value, sharing the cache."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if not values:
        raise ConfigError("sweep requires at least one value")
    reports: dict = {}
    for value in values:
        variant = RunConfig(**{**_config_kwargs(config)})
        if axis == "thought_char_budget":
            variant.thought_char_budget = int(value)
        else:
            count = int(value)
            if count > len(config.demonstrations):
                raise ConfigError(
                    f"demonstrations_count {count} exceeds the {len(config.demonstrations)} "
                    "configured demonstrations"
                )
            variant.demonstrations = list(config.demonstrations[:count])
        if variant.out_dir:
            variant.out_dir = str(Path(variant.out_dir) / f"{axis}_{value}")
        reports[value] = run_eval(variant, backend=backend)
    return reports


def _config_kwargs(config: RunConfig) -> dict:
    return {name: getattr(config, name) for name in config.__dataclass_fields__}
