"""Rubric scoring, score tables and comparison statistics."""

from __future__ import annotations

import csv
import io
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateLabel,
    IncompleteGrouping,
    MalformedJudgment,
    NonNumericCell,
    PreconditionError,
    RaggedTable,
)
from .pipeline import Mode
from .prompts import JUDGE, PromptTemplate, load_prompts
from .providers.base import ChatProvider, ChatRequest

logger = logging.getLogger(__name__)

METRICS = ("completeness", "standardization", "correctness", "relevance", "readability")

REFERENCE_SCORES = "reference_scores.csv"

_METRIC_LINE_RE = re.compile(
    r"^\W*(" + "|".join(METRICS) + r")\W*\s*[:=]\s*(-?\d+(?:\.\d+)?)", re.IGNORECASE
)

UNKNOWN_QUESTION = "(question not recorded)"
CORRECTIVE_INSTRUCTION = (
    "\n\nYour previous grading was missing: {missing}. Reply with exactly five lines"
    " of the form 'metric: integer' for " + ", ".join(METRICS) + "."
)


@dataclass(frozen=True)
class Rubric:
    """Five-metric, 100-point scoring scheme."""

    weights: Mapping[str, int] = field(
        default_factory=lambda: {
            "completeness": 30,
            "standardization": 20,
            "correctness": 30,
            "relevance": 10,
            "readability": 10,
        }
    )

    def __post_init__(self) -> None:
        if tuple(self.weights) != METRICS:
            raise PreconditionError(f"rubric metrics must be {', '.join(METRICS)} in order")
        if any(w <= 0 for w in self.weights.values()):
            raise PreconditionError("rubric weights must be positive")
        if sum(self.weights.values()) != 100:
            raise PreconditionError("rubric weights must sum to 100")


DEFAULT_RUBRIC = Rubric()


class ScoreSource(str, Enum):
    JUDGE = "JUDGE"
    IMPORTED = "IMPORTED"


@dataclass(frozen=True)
class ScoreCard:
    query_id: str
    method_label: str
    per_metric: Mapping[str, float]
    source: ScoreSource = ScoreSource.JUDGE
    warnings: tuple[str, ...] = ()

    @property
    def total(self) -> float:
        return sum(self.per_metric[m] for m in METRICS)


def clamp_scores(
    raw: Mapping[str, float], rubric: Rubric = DEFAULT_RUBRIC
) -> tuple[dict[str, float], list[str]]:
    """Clamp each metric into [0, weight]; returns scores and warnings."""
    scores: dict[str, float] = {}
    warnings: list[str] = []
    for metric in METRICS:
        value = float(raw[metric])
        weight = rubric.weights[metric]
        clamped = min(max(value, 0.0), float(weight))
        if clamped != value:
            warnings.append(f"{metric} {value:g} clamped to {clamped:g}")
        scores[metric] = clamped
    return scores, warnings


def parse_judgment(completion: str) -> dict[str, float]:
    """Read ``metric: number`` lines; the first occurrence of each metric wins."""
    found: dict[str, float] = {}
    for line in completion.splitlines():
        m = _METRIC_LINE_RE.match(line.strip())
        if m:
            found.setdefault(m.group(1).lower(), float(m.group(2)))
    missing = [metric for metric in METRICS if metric not in found]
    if missing:
        raise MalformedJudgment(missing, raw=completion)
    return found


async def judge(
    result_text: str,
    query_id: str,
    method_label: str,
    chat: ChatProvider,
    rubric: Rubric = DEFAULT_RUBRIC,
    prompt: PromptTemplate | None = None,
    *,
    question: str = "",
    temperature: float = 0.0,
    retries: int = 1,
) -> ScoreCard:
    """Score one modeling result with an LLM judge.

    The judge sees the question next to the answer so relevance can be graded.
    """
    if not result_text or not result_text.strip():
        raise PreconditionError("cannot judge an empty result")
    prompt = prompt or load_prompts()[JUDGE]
    weights = {m: str(w) for m, w in rubric.weights.items()}
    system_prompt, user_content = prompt.render(
        result=result_text, question=question.strip() or UNKNOWN_QUESTION, **weights
    )

    content = user_content
    attempt = 0
    while True:
        completion = await chat.chat(
            ChatRequest(
                system_prompt=system_prompt,
                user_content=content,
                temperature=temperature,
                max_output=256,
                prompt_name=JUDGE,
            )
        )
        try:
            raw = parse_judgment(completion)
            break
        except MalformedJudgment as e:
            if attempt >= retries:
                raise
            attempt += 1
            logger.warning("Judgment for %s missing %s; retrying", query_id, ", ".join(e.missing))
            content = user_content + CORRECTIVE_INSTRUCTION.format(missing=", ".join(e.missing))

    scores, warnings = clamp_scores(raw, rubric)
    for warning in warnings:
        logger.warning("%s/%s: %s", query_id, method_label, warning)
    return ScoreCard(query_id, method_label, scores, ScoreSource.JUDGE, tuple(warnings))


# --- score tables ---


@dataclass(frozen=True)
class ScoreTable:
    """Totals with method labels as rows and question ids as columns."""

    rows: tuple[str, ...]
    columns: tuple[str, ...]
    cells: np.ndarray

    def __post_init__(self) -> None:
        if self.cells.shape != (len(self.rows), len(self.columns)):
            raise RaggedTable(
                f"cells shape {self.cells.shape} does not match"
                f" {len(self.rows)} rows x {len(self.columns)} columns"
            )
        for name, labels in (("row", self.rows), ("column", self.columns)):
            dupes = [label for label, c in Counter(labels).items() if c > 1]
            if dupes:
                raise DuplicateLabel(f"duplicate {name} labels: {', '.join(dupes)}")

    def cell(self, row: str, column: str) -> float:
        return float(self.cells[self.rows.index(row), self.columns.index(column)])

    def row(self, label: str) -> np.ndarray:
        return self.cells[self.rows.index(label)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScoreTable):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.columns == other.columns
            and np.array_equal(self.cells, other.cells)
        )

    @classmethod
    def from_cards(cls, cards: Sequence[ScoreCard]) -> "ScoreTable":
        """Table of totals from judged cards; every (method, query) pair must be present."""
        rows = tuple(dict.fromkeys(c.method_label for c in cards))
        columns = tuple(dict.fromkeys(c.query_id for c in cards))
        totals: dict[tuple[str, str], float] = {}
        for card in cards:
            key = (card.method_label, card.query_id)
            if key in totals:
                raise DuplicateLabel(f"two score cards for {key}")
            totals[key] = card.total
        missing = [f"{r}/{c}" for r in rows for c in columns if (r, c) not in totals]
        if missing:
            raise RaggedTable(f"no score for {', '.join(missing)}")
        cells = np.array([[totals[(r, c)] for c in columns] for r in rows], dtype=float)
        return cls(rows, columns, cells)


def _parse_table(reader: Iterable[list[str]], source: str) -> ScoreTable:
    rows_iter = iter(reader)
    try:
        header = next(rows_iter)
    except StopIteration:
        raise RaggedTable(f"{source}: empty score table") from None
    columns = tuple(h.strip() for h in header[1:])
    if not columns:
        raise RaggedTable(f"{source}: header has no question columns")

    labels: list[str] = []
    values: list[list[float]] = []
    for raw in rows_iter:
        if not raw or not any(cell.strip() for cell in raw):
            continue
        label = raw[0].strip()
        cells = [c.strip() for c in raw[1:]]
        if len(cells) != len(columns) or any(c == "" for c in cells):
            raise RaggedTable(
                f"{source}: row {label!r} has {sum(1 for c in cells if c)} of {len(columns)} cells"
            )
        parsed: list[float] = []
        for column, cell in zip(columns, cells):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise NonNumericCell(label, column, cell) from None
        labels.append(label)
        values.append(parsed)

    if not labels:
        raise RaggedTable(f"{source}: score table has no method rows")
    return ScoreTable(tuple(labels), columns, np.array(values, dtype=float))


def import_scores(path: str | Path) -> ScoreTable:
    """Read a ``method,Q1..Qn`` CSV of totals."""
    with open(path, newline="", encoding="utf-8") as f:
        return _parse_table(csv.reader(f), str(path))


def reference_scores() -> ScoreTable:
    """The published overall-score table shipped with the package."""
    text = resources.files("mag_rag.data").joinpath(REFERENCE_SCORES).read_text(encoding="utf-8")
    return _parse_table(csv.reader(io.StringIO(text)), REFERENCE_SCORES)


def _format_cell(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def export_scores(table: ScoreTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["method", *table.columns])
        for label, values in zip(table.rows, table.cells):
            writer.writerow([label, *(_format_cell(v) for v in values)])


# --- statistics ---


def winners_per_question(table: ScoreTable) -> dict[str, frozenset[str]]:
    """Per column, every row achieving the maximum (ties included)."""
    if not table.rows:
        raise PreconditionError("score table is empty")
    winners: dict[str, frozenset[str]] = {}
    for j, column in enumerate(table.columns):
        values = table.cells[:, j]
        best = values.max()
        winners[column] = frozenset(r for r, v in zip(table.rows, values) if v == best)
    return winners


def parse_method_label(label: str) -> tuple[str, Mode]:
    """Split a method label into (base_model, mode).

    Accepts ``base:CODE`` (judged results) and the compact ``<base><CODE>``
    form of the reference table, e.g. ``G3.5G`` -> ("G3.5", MAG_RAG).
    """
    base, sep, code = label.rpartition(":")
    if not sep:
        base, code = label[:-1], label[-1:]
    try:
        return base, Mode.from_code(code)
    except ValueError:
        raise IncompleteGrouping(f"cannot parse method label {label!r}") from None


def default_grouping(labels: Iterable[str]) -> dict[str, tuple[str, Mode]]:
    return {label: parse_method_label(label) for label in labels}


@dataclass
class GainCounts:
    positive: int = 0
    negative: int = 0
    zero: int = 0

    def add(self, delta: float) -> None:
        if delta > 0:
            self.positive += 1
        elif delta < 0:
            self.negative += 1
        else:
            self.zero += 1

    @property
    def total(self) -> int:
        return self.positive + self.negative + self.zero


COMPARISONS = {
    "G-vs-D": (Mode.MAG_RAG,),
    "T-vs-D": (Mode.PURE_MA,),
    "prior-vs-D": (Mode.MAG_RAG, Mode.PURE_MA),
}


@dataclass
class GainSummary:
    """Sign counts of score gains over the pure-LLM baseline."""

    per_base: dict[str, dict[str, GainCounts]]
    overall: dict[str, GainCounts]
    negative_by_question: dict[str, Counter]


def gain_frequencies(
    table: ScoreTable, grouping: Mapping[str, tuple[str, Mode]] | None = None
) -> GainSummary:
    """
    Count positive, negative and zero gains of G and T rows over D per base model.

    ``prior-vs-D`` pools both knowledge-augmented modes. ``negative_by_question``
    records, per comparison, which questions the declines came from.
    """
    grouping = dict(grouping) if grouping is not None else default_grouping(table.rows)
    rows_by_base: dict[str, dict[Mode, str]] = defaultdict(dict)
    for label in table.rows:
        if label not in grouping:
            continue
        base, mode = grouping[label]
        if mode in rows_by_base[base]:
            raise IncompleteGrouping(f"base model {base!r} has two {mode.value} rows")
        rows_by_base[base][mode] = label

    for base, modes in rows_by_base.items():
        missing = [m.code for m in Mode if m not in modes]
        if missing:
            raise IncompleteGrouping(f"base model {base!r} lacks rows for {', '.join(missing)}")
    if not rows_by_base:
        raise IncompleteGrouping("no rows matched the grouping")

    per_base: dict[str, dict[str, GainCounts]] = {}
    overall = {name: GainCounts() for name in COMPARISONS}
    negative_by_question: dict[str, Counter] = {name: Counter() for name in COMPARISONS}
    for base in sorted(rows_by_base):
        modes = rows_by_base[base]
        baseline = table.row(modes[Mode.PURE_LLM])
        per_base[base] = {name: GainCounts() for name in COMPARISONS}
        for name, compared in COMPARISONS.items():
            for mode in compared:
                deltas = table.row(modes[mode]) - baseline
                for column, delta in zip(table.columns, deltas):
                    per_base[base][name].add(float(delta))
                    overall[name].add(float(delta))
                    if delta < 0:
                        negative_by_question[name][column] += 1
    return GainSummary(per_base, overall, negative_by_question)


def winner_mode_share(
    winners: Mapping[str, frozenset[str]], grouping: Mapping[str, tuple[str, Mode]] | None = None
) -> Counter:
    """How many winner slots each mode holds (a tie gives every tied row a slot)."""
    share: Counter = Counter()
    for labels in winners.values():
        for label in labels:
            mode = grouping[label][1] if grouping else parse_method_label(label)[1]
            share[mode] += 1
    return share


def questions_won_by(
    winners: Mapping[str, frozenset[str]], mode: Mode, grouping: Mapping[str, tuple[str, Mode]] | None = None
) -> list[str]:
    """Questions where at least one row of ``mode`` wins or ties."""
    lookup: Callable[[str], Mode] = (
        (lambda label: grouping[label][1]) if grouping else (lambda label: parse_method_label(label)[1])
    )
    return [q for q, labels in winners.items() if any(lookup(l) is mode for l in labels)]


def mean_by_base(table: ScoreTable, grouping: Mapping[str, tuple[str, Mode]] | None = None) -> dict[str, float]:
    grouping = grouping or default_grouping(table.rows)
    sums: dict[str, list[float]] = defaultdict(list)
    for label in table.rows:
        sums[grouping[label][0]].extend(table.row(label).tolist())
    return {base: float(np.mean(v)) for base, v in sorted(sums.items())}


def mean_by_mode(table: ScoreTable, grouping: Mapping[str, tuple[str, Mode]] | None = None) -> dict[Mode, float]:
    grouping = grouping or default_grouping(table.rows)
    sums: dict[Mode, list[float]] = defaultdict(list)
    for label in table.rows:
        sums[grouping[label][1]].extend(table.row(label).tolist())
    return {mode: float(np.mean(sums[mode])) for mode in Mode if mode in sums}


def metric_aggregates(cards: Sequence[ScoreCard]) -> dict[str, dict[str, float]]:
    """Mean score per metric for each method label (judged cards only)."""
    grouped: dict[str, list[ScoreCard]] = defaultdict(list)
    for card in cards:
        if card.source is not ScoreSource.JUDGE:
            continue
        grouped[card.method_label].append(card)
    return {
        label: {m: float(np.mean([c.per_metric[m] for c in group])) for m in METRICS}
        for label, group in sorted(grouped.items())
    }


def metric_winner_share(cards: Sequence[ScoreCard]) -> dict[str, Counter]:
    """Per metric, winner slots by mode across questions (ties share slots)."""
    by_query: dict[str, list[ScoreCard]] = defaultdict(list)
    for card in cards:
        if card.source is ScoreSource.JUDGE:
            by_query[card.query_id].append(card)

    share: dict[str, Counter] = {m: Counter() for m in METRICS}
    for group in by_query.values():
        for metric in METRICS:
            best = max(c.per_metric[metric] for c in group)
            for card in group:
                if card.per_metric[metric] == best:
                    share[metric][parse_method_label(card.method_label)[1]] += 1
    return share


# --- report ---


def _winner_section(table: ScoreTable, title: str) -> list[str]:
    winners = winners_per_question(table)
    lines = [f"## {title}", "", "| Question | Winner(s) | Score |", "| --- | --- | --- |"]
    for column, labels in winners.items():
        best = table.cell(next(iter(labels)), column)
        lines.append(f"| {column} | {', '.join(sorted(labels))} | {_format_cell(best)} |")
    lines.append("")

    try:
        grouping = default_grouping(table.rows)
    except IncompleteGrouping:
        return lines
    share = winner_mode_share(winners, grouping)
    slots = sum(share.values())
    lines.extend(["| Mode | Winner slots | Share | Questions won or tied |", "| --- | --- | --- | --- |"])
    for mode in Mode:
        won = questions_won_by(winners, mode, grouping)
        pct = 100.0 * share[mode] / slots if slots else 0.0
        lines.append(f"| {mode.value} | {share[mode]} | {pct:.0f}% | {len(won)}/{len(winners)} |")
    lines.append("")

    lines.extend(["| Base model | Mean total |", "| --- | --- |"])
    for base, mean in mean_by_base(table, grouping).items():
        lines.append(f"| {base} | {mean:.1f} |")
    lines.append("")
    return lines


def _gain_section(table: ScoreTable, title: str) -> list[str]:
    try:
        summary = gain_frequencies(table)
    except IncompleteGrouping as e:
        return [f"## {title}", "", f"_Gain statistics unavailable: {e}_", ""]

    lines = [
        f"## {title}",
        "",
        "| Base model | Comparison | Positive | Negative | Zero |",
        "| --- | --- | --- | --- | --- |",
    ]
    for base, comparisons in summary.per_base.items():
        for name, counts in comparisons.items():
            lines.append(f"| {base} | {name} | {counts.positive} | {counts.negative} | {counts.zero} |")
    for name, counts in summary.overall.items():
        lines.append(f"| **all** | {name} | {counts.positive} | {counts.negative} | {counts.zero} |")
    lines.append("")
    declines = summary.negative_by_question["prior-vs-D"]
    if declines:
        lines.append(
            "Declines by question (prior-vs-D): "
            + ", ".join(f"{q}={n}" for q, n in declines.most_common())
        )
        lines.append("")
    return lines


def render_report(
    imported: ScoreTable | None = None,
    cards: Sequence[ScoreCard] = (),
    judged: ScoreTable | None = None,
) -> str:
    """Markdown report with winner, gain and per-metric tables."""
    lines = ["# MAG-RAG Evaluation Report", ""]

    if imported is not None:
        lines.extend(_winner_section(imported, "Imported Scores: Winners per Question"))
        lines.extend(_gain_section(imported, "Imported Scores: Gains over Pure LLM"))

    if cards:
        lines.extend(["## Judged Score Cards", ""])
        header = "| Query | Method | " + " | ".join(m.capitalize() for m in METRICS) + " | Total |"
        lines.extend([header, "|" + " --- |" * (len(METRICS) + 3)])
        for card in cards:
            metrics = " | ".join(_format_cell(card.per_metric[m]) for m in METRICS)
            lines.append(f"| {card.query_id} | {card.method_label} | {metrics} | {_format_cell(card.total)} |")
        lines.append("")

        lines.extend(["## Per-metric Means", ""])
        lines.extend(["| Method | " + " | ".join(METRICS) + " |", "|" + " --- |" * (len(METRICS) + 1)])
        for label, means in metric_aggregates(cards).items():
            lines.append(f"| {label} | " + " | ".join(f"{means[m]:.1f}" for m in METRICS) + " |")
        lines.append("")

        try:
            share = metric_winner_share(cards)
        except IncompleteGrouping:
            share = None
        if share is not None:
            lines.extend(["## Per-metric Winner Slots by Mode", ""])
            lines.extend(["| Metric | " + " | ".join(m.value for m in Mode) + " |", "|" + " --- |" * (len(Mode) + 1)])
            for metric, counts in share.items():
                lines.append(f"| {metric} | " + " | ".join(str(counts[m]) for m in Mode) + " |")
            lines.append("")

    if judged is not None:
        lines.extend(_winner_section(judged, "Judged Results: Winners per Question"))
        lines.extend(_gain_section(judged, "Judged Results: Gains over Pure LLM"))

    return "\n".join(lines)
