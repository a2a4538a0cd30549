"""Tests for rubric scoring, score tables and comparison statistics."""

import asyncio

import numpy as np
import pytest

from mag_rag.errors import (
    DuplicateLabel,
    IncompleteGrouping,
    MalformedJudgment,
    NonNumericCell,
    PreconditionError,
    RaggedTable,
)
from mag_rag.evaluation import (
    DEFAULT_RUBRIC,
    METRICS,
    UNKNOWN_QUESTION,
    Rubric,
    ScoreCard,
    ScoreSource,
    ScoreTable,
    clamp_scores,
    export_scores,
    gain_frequencies,
    import_scores,
    judge,
    mean_by_base,
    mean_by_mode,
    metric_aggregates,
    metric_winner_share,
    parse_judgment,
    parse_method_label,
    questions_won_by,
    reference_scores,
    render_report,
    winner_mode_share,
    winners_per_question,
)
from mag_rag.pipeline import Mode
from mag_rag.prompts import JUDGE, load_prompts
from mag_rag.providers import ScriptedChatProvider

GOOD_JUDGMENT = "completeness: 24\nstandardization: 16\ncorrectness: 25\nrelevance: 9\nreadability: 8\n"

EXPECTED_WINNERS = {
    "Q1": {"G4G"},
    "Q2": {"G4T"},
    "Q3": {"SG"},
    "Q4": {"SG"},
    "Q5": {"SG"},
    "Q6": {"SG"},
    "Q7": {"SD"},
    "Q8": {"SG"},
    "Q9": {"HT", "SG"},
    "Q10": {"SG"},
}


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def card(query_id, label, values, source=ScoreSource.JUDGE):
    return ScoreCard(query_id, label, dict(zip(METRICS, values)), source)


def test_default_rubric():
    assert dict(DEFAULT_RUBRIC.weights) == {
        "completeness": 30,
        "standardization": 20,
        "correctness": 30,
        "relevance": 10,
        "readability": 10,
    }
    assert sum(DEFAULT_RUBRIC.weights.values()) == 100


def test_rubric_validation():
    with pytest.raises(PreconditionError):
        Rubric({"completeness": 50, "standardization": 20, "correctness": 30, "relevance": 10, "readability": 10})
    with pytest.raises(PreconditionError):
        Rubric({"completeness": 30, "correctness": 30})


def test_random_cards_conserve_totals():
    """1000 random cards: total is the metric sum and clamping respects weights"""
    rng = np.random.default_rng(1000)
    for _ in range(1000):
        raw = {m: float(rng.integers(-10, 45)) for m in METRICS}
        scores, warnings = clamp_scores(raw)
        sc = ScoreCard("Q", "m:G", scores)

        assert sc.total == sum(scores[m] for m in METRICS)
        assert 0 <= sc.total <= 100
        for m in METRICS:
            assert 0 <= scores[m] <= DEFAULT_RUBRIC.weights[m]
        clamped = [m for m in METRICS if raw[m] != scores[m]]
        assert len(warnings) == len(clamped)


def test_parse_judgment_formats():
    text = "Scores:\n**Completeness**: 25\n- standardization = 15\nCorrectness: 28.5\nrelevance: 10\nReadability: 7\ncompleteness: 3\n"
    assert parse_judgment(text) == {
        "completeness": 25.0,
        "standardization": 15.0,
        "correctness": 28.5,
        "relevance": 10.0,
        "readability": 7.0,
    }


def test_parse_judgment_missing_metrics():
    with pytest.raises(MalformedJudgment) as exc:
        parse_judgment("completeness: 20\nrelevance: 5")
    assert exc.value.missing == ["standardization", "correctness", "readability"]


def test_judge_scores_result():
    chat = ScriptedChatProvider({"judge:*": GOOD_JUDGMENT})
    sc = asyncio.run(judge("some model", "Q1", "scripted:G", chat))

    assert sc.total == 82
    assert sc.source is ScoreSource.JUDGE
    assert sc.warnings == ()
    assert "completeness: 30" in chat.calls[0].system_prompt


def test_judge_clamps_with_warning():
    chat = ScriptedChatProvider({"judge:*": GOOD_JUDGMENT.replace("completeness: 24", "completeness: 45")})
    sc = asyncio.run(judge("some model", "Q1", "scripted:G", chat))
    assert sc.per_metric["completeness"] == 30
    assert len(sc.warnings) == 1


def test_judge_retries_once_then_fails():
    weights = {m: str(w) for m, w in DEFAULT_RUBRIC.weights.items()}
    _, user = load_prompts()[JUDGE].render(result="answer", question=UNKNOWN_QUESTION, **weights)
    chat = ScriptedChatProvider({user: "completeness: 20", "judge:*": GOOD_JUDGMENT})
    sc = asyncio.run(judge("answer", "Q1", "m:T", chat))
    assert sc.total == 82
    assert len(chat.calls) == 2

    broken = ScriptedChatProvider({"judge:*": "I liked it."})
    with pytest.raises(MalformedJudgment):
        asyncio.run(judge("answer", "Q1", "m:T", broken))
    assert len(broken.calls) == 2

    with pytest.raises(PreconditionError):
        asyncio.run(judge("  ", "Q1", "m:T", broken))


def test_judge_sees_the_question():
    chat = ScriptedChatProvider({"judge:*": GOOD_JUDGMENT})
    question = "Place 8 sensors to localize 3 talkers with minimum CRB"
    asyncio.run(judge("some model", "Q1", "scripted:G", chat, question=question))

    user = chat.calls[0].user_content
    assert question in user
    assert user.index(question) < user.index("some model")

    asyncio.run(judge("some model", "Q1", "scripted:G", chat))
    assert UNKNOWN_QUESTION in chat.calls[1].user_content


def test_reference_table_winners():
    table = reference_scores()

    assert table.columns == tuple(f"Q{i}" for i in range(1, 11))
    assert len(table.rows) == 12
    winners = winners_per_question(table)
    assert {q: set(w) for q, w in winners.items()} == EXPECTED_WINNERS


def test_reference_table_mode_share():
    table = reference_scores()
    winners = winners_per_question(table)

    share = winner_mode_share(winners)
    assert share[Mode.MAG_RAG] == 8
    assert share[Mode.PURE_MA] == 2
    assert share[Mode.PURE_LLM] == 1
    assert len(questions_won_by(winners, Mode.MAG_RAG)) == 8


def test_reference_table_gains():
    summary = gain_frequencies(reference_scores())

    h = summary.per_base["H"]["G-vs-D"]
    assert (h.positive, h.negative, h.zero) == (3, 7, 0)
    g4 = summary.per_base["G4"]["T-vs-D"]
    assert (g4.positive, g4.negative, g4.zero) == (6, 3, 1)
    assert summary.overall["G-vs-D"].total == 30
    assert summary.overall["T-vs-D"].total == 30
    assert summary.overall["prior-vs-D"].total == 60
    assert sum(summary.negative_by_question["prior-vs-D"].values()) == summary.overall["prior-vs-D"].negative


def test_means_by_base_and_mode():
    table = reference_scores()
    by_base = mean_by_base(table)
    assert set(by_base) == {"H", "S", "G3.5", "G4"}
    assert by_base["G4"] == pytest.approx(np.mean(table.cells[9:12]))
    assert set(mean_by_mode(table)) == set(Mode)


def test_parse_method_label():
    assert parse_method_label("G3.5G") == ("G3.5", Mode.MAG_RAG)
    assert parse_method_label("HD") == ("H", Mode.PURE_LLM)
    assert parse_method_label("llama-3.3-70b:T") == ("llama-3.3-70b", Mode.PURE_MA)
    with pytest.raises(IncompleteGrouping):
        parse_method_label("HX")


def test_gain_frequencies_needs_all_three_modes(tmp_path):
    path = write_csv(tmp_path / "s.csv", "method,Q1\nHD,1\nHG,2\n")
    with pytest.raises(IncompleteGrouping):
        gain_frequencies(import_scores(path))


def test_import_errors(tmp_path):
    with pytest.raises(RaggedTable):
        import_scores(write_csv(tmp_path / "a.csv", "method,Q1,Q2\nHD,1\n"))
    with pytest.raises(NonNumericCell) as exc:
        import_scores(write_csv(tmp_path / "b.csv", "method,Q1,Q2\nHD,1,abc\n"))
    assert (exc.value.row, exc.value.column) == ("HD", "Q2")
    with pytest.raises(DuplicateLabel):
        import_scores(write_csv(tmp_path / "c.csv", "method,Q1\nHD,1\nHD,2\n"))
    with pytest.raises(RaggedTable):
        import_scores(write_csv(tmp_path / "d.csv", ""))


def test_export_then_import(tmp_path):
    table = reference_scores()
    path = tmp_path / "out.csv"
    export_scores(table, path)
    assert import_scores(path) == table


def test_table_from_cards():
    cards = [
        card("Q1", "m:G", [30, 20, 30, 10, 10]),
        card("Q1", "m:D", [10, 10, 10, 5, 5]),
        card("Q2", "m:G", [20, 20, 20, 5, 5]),
        card("Q2", "m:D", [25, 20, 25, 5, 5]),
    ]
    table = ScoreTable.from_cards(cards)
    assert table.rows == ("m:G", "m:D")
    assert table.columns == ("Q1", "Q2")
    assert table.cell("m:G", "Q1") == 100
    assert table.cell("m:D", "Q2") == 80

    with pytest.raises(RaggedTable):
        ScoreTable.from_cards(cards[:3])


def test_metric_aggregates_use_judged_cards_only():
    cards = [
        card("Q1", "m:G", [30, 20, 30, 10, 10]),
        card("Q2", "m:G", [10, 20, 30, 10, 10]),
        card("Q1", "m:D", [0, 0, 0, 0, 0], ScoreSource.IMPORTED),
    ]
    means = metric_aggregates(cards)
    assert set(means) == {"m:G"}
    assert means["m:G"]["completeness"] == 20


def test_metric_winner_share():
    cards = [
        card("Q1", "m:G", [30, 10, 30, 10, 10]),
        card("Q1", "m:D", [20, 20, 30, 10, 5]),
    ]
    share = metric_winner_share(cards)
    assert share["completeness"][Mode.MAG_RAG] == 1
    assert share["standardization"][Mode.PURE_LLM] == 1
    assert share["correctness"][Mode.MAG_RAG] == 1
    assert share["correctness"][Mode.PURE_LLM] == 1


def test_render_report():
    cards = [card("Q1", "m:G", [30, 20, 30, 10, 10]), card("Q1", "m:D", [10, 10, 10, 5, 5])]
    report = render_report(reference_scores(), cards, ScoreTable.from_cards(cards))

    assert report.startswith("# MAG-RAG Evaluation Report")
    assert "| Q1 | G4G | 92 |" in report
    assert "| Q9 | HT, SG | 92 |" in report
    assert "## Judged Score Cards" in report
    assert "| Q1 | m:G | 30 | 20 | 30 | 10 | 10 | 100 |" in report
    assert "base model 'm' lacks rows for T" in report


def test_winners_match_a_max_scan_on_random_tables():
    """Small integer scores so ties are common"""
    rng = np.random.default_rng(31)
    for _ in range(200):
        n_rows, n_cols = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        rows = tuple(f"r{i}" for i in range(n_rows))
        columns = tuple(f"Q{j}" for j in range(n_cols))
        cells = rng.integers(0, 5, size=(n_rows, n_cols)).astype(float)

        expected = {}
        for j, column in enumerate(columns):
            best = max(cells[i][j] for i in range(n_rows))
            expected[column] = {rows[i] for i in range(n_rows) if cells[i][j] == best}

        winners = winners_per_question(ScoreTable(rows, columns, cells))
        assert {q: set(w) for q, w in winners.items()} == expected


def test_swapping_g_and_d_rows_swaps_gain_signs():
    rng = np.random.default_rng(97)
    rows = ("a:G", "a:T", "a:D", "b:G", "b:T", "b:D")
    columns = tuple(f"Q{j}" for j in range(8))
    for _ in range(100):
        cells = rng.integers(0, 5, size=(len(rows), len(columns))).astype(float)
        swapped = cells[[2, 1, 0, 5, 4, 3]]

        before = gain_frequencies(ScoreTable(rows, columns, cells))
        after = gain_frequencies(ScoreTable(rows, columns, swapped))
        for base in ("a", "b"):
            g, h = before.per_base[base]["G-vs-D"], after.per_base[base]["G-vs-D"]
            assert (h.positive, h.negative, h.zero) == (g.negative, g.positive, g.zero)
        g, h = before.overall["G-vs-D"], after.overall["G-vs-D"]
        assert (h.positive, h.negative, h.zero) == (g.negative, g.positive, g.zero)
