import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hakka_asr import scoring

from oracles import edit_distance_recursive

tokens = st.lists(st.sampled_from("abcd"), max_size=8)


@settings(max_examples=300, deadline=None)
@given(tokens, tokens)
def test_edit_distance_matches_recursion(ref, hyp):
    d, s, de, i = scoring.edit_distance(ref, hyp)
    assert d == edit_distance_recursive(ref, hyp)
    assert d == s + de + i
    assert de - i == len(ref) - len(hyp)


@settings(max_examples=200, deadline=None)
@given(tokens, tokens, tokens)
def test_metric_properties(a, b, c):
    d = lambda x, y: scoring.edit_distance(x, y)[0]  # noqa: E731
    assert d(a, a) == 0
    assert d(a, b) == d(b, a)
    assert (d(a, b) == 0) == (a == b)
    assert d(a, c) <= d(a, b) + d(b, c)


def test_tie_break_prefers_substitution():
    assert scoring.edit_distance("ab", "ba") == (2, 2, 0, 0)
    assert scoring.edit_distance("a", "") == (1, 0, 1, 0)
    assert scoring.edit_distance("", "ab") == (2, 0, 0, 2)


def test_character_tokenizer_folds_width_and_drops_punctuation():
    assert scoring.tokenize("客家，人！ ＡＢ1") == ["客", "家", "人", "A", "B", "1"]
    assert scoring.tokenize("hag2  ga24\tngin11", "syllable") == ["hag2", "ga24", "ngin11"]
    with pytest.raises(ValueError):
        scoring.tokenize("x", "word")


def table2_pairs(read_rate, spont_rate):
    """Precomputed counts: 13% of the reference tokens read, 87% spontaneous."""
    read_tokens, spont_tokens = 13_000, 87_000
    return [
        scoring.ScoredPair("r", ["x"] * read_tokens, [], "read", sub=round(read_rate * read_tokens / 100), dele=0, ins=0),
        scoring.ScoredPair("s", ["x"] * spont_tokens, [], "spontaneous",
                           sub=round(spont_rate * spont_tokens / 100), dele=0, ins=0),
    ]


@pytest.mark.parametrize("read, spont, target", [(4.27, 19.14, 17.15), (7.33, 18.90, 17.42)])
def test_table2_pooled_average(read, spont, target):
    rep = scoring.error_rate(table2_pairs(read, spont))
    assert rep.rate_read == read and rep.rate_spont == spont
    assert abs(rep.rate_average - target) <= 0.10


@pytest.mark.parametrize("base, system, expected", [(28.87, 18.17, 37.06), (42.43, 19.65, 53.69), (5.0, 5.0, 0.0)])
def test_relative_improvement(base, system, expected):
    assert scoring.relative_improvement(base, system) == expected


def test_pooled_differs_from_macro():
    pairs = [scoring.ScoredPair("a", list("abcd"), list("abcd"), "read"),
             scoring.ScoredPair("b", list("ab"), list("xy"), "read")]
    assert scoring.error_rate(pairs).rate_average == round(100 * 2 / 6, 2)
    assert scoring.error_rate(pairs, macro=True).rate_average == 50.0


def test_round_half_up():
    assert scoring.round_rate(17.155) == 17.16
    assert scoring.round_rate(0.005) == 0.01


def test_missing_hypothesis_counts_deletions(caplog):
    pairs = scoring.score_transcripts({"a": "客家", "b": "人"}, {"a": "客家"})
    rep = scoring.error_rate(pairs)
    assert rep.counts == {"sub": 0, "del": 1, "ins": 0}
    assert "no hypothesis for b" in caplog.text
    assert len(scoring.score_transcripts({"a": "客家", "b": "人"}, {"a": "客家"}, intersect=True)) == 1


def test_hypothesis_without_reference_is_error():
    with pytest.raises(ValueError, match="without reference"):
        scoring.score_transcripts({"a": "x"}, {"a": "x", "z": "y"})


def test_insertions_against_empty_reference_still_count():
    pairs = [scoring.ScoredPair("a", [], ["x"], "read"), scoring.ScoredPair("b", ["y"], ["y"], "read")]
    rep = scoring.error_rate(pairs)
    assert rep.rate_average == 100.0 and rep.errors == 1 and rep.ref_tokens == 1


def test_report_table_layout():
    rep = scoring.error_rate(table2_pairs(4.27, 19.14))
    text = scoring.format_report([rep], {"character": 27.23})
    assert "Hakka Character (CER)" in text and "Rel. Improve." in text
    assert "4.27" in text and "19.14" in text


def test_relative_improvement_needs_positive_baseline():
    with pytest.raises(ValueError):
        scoring.relative_improvement(0.0, 1.0)


def test_syllable_track_name():
    pairs = [scoring.ScoredPair("a", ["ga24"], ["ga24"], "read")]
    assert scoring.error_rate(pairs, tokenizer="syllable").track == "pinyin"
    assert np.isclose(scoring.error_rate(pairs, "syllable").rate_average, 0.0)
