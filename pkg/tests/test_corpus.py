import gzip
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hakka_asr import corpus, toy
from hakka_asr.cli import TABLE1_FIXTURE

TABLE1 = {
    "Official Dataset (train)": (59.43, 20591, 10.39),
    "Official Dataset (pilot-test)": (10.01, 3595, 10.02),
    "Hakka Dictionary": (5.84, 15250, 1.38),
    "HAC": (11.26, 4216, 9.61),
}


@pytest.fixture(scope="module")
def fixture_records():
    return corpus.load_manifest(TABLE1_FIXTURE)


def test_bundled_fixture_reproduces_table(fixture_records):
    rows, totals = corpus.compute_stats(fixture_records)
    assert {r.source: (r.hours, r.num_utts, r.spu) for r in rows} == TABLE1
    assert (totals.hours, totals.num_utts, totals.spu) == (86.54, 43652, 7.14)


def test_bundled_fixture_matches_generator(fixture_records):
    assert fixture_records == toy.table1_records(0)


def test_half_up_rounding():
    assert corpus.round_half_up(0.125) == 0.13
    assert corpus.round_half_up(2.675) == 2.68
    assert corpus.round_half_up(1.005) == 1.01


def test_gz_and_plain_manifests_agree(tmp_path):
    recs = [corpus.UtteranceRecord("a", "s", 1.5, style="read"),
            corpus.UtteranceRecord("b", "s", 2.0, transcript_char="客家")]
    corpus.write_manifest(tmp_path / "m.jsonl", recs)
    corpus.write_manifest(tmp_path / "m.jsonl.gz", recs)
    assert corpus.load_manifest(tmp_path / "m.jsonl") == recs
    assert corpus.load_manifest(tmp_path / "m.jsonl.gz") == recs
    with gzip.open(tmp_path / "m.jsonl.gz", "rt", encoding="utf-8") as f:
        assert "客家" in f.read()


def test_duplicate_ids_name_both_lines(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text('{"utt_id": "a", "source": "s", "duration_s": 1}\n'
                    '{"utt_id": "b", "source": "s", "duration_s": 1}\n'
                    '{"utt_id": "a", "source": "s", "duration_s": 2}\n')
    with pytest.raises(corpus.ManifestError) as err:
        corpus.load_manifest(path)
    assert err.value.line == 3 and "line 1" in str(err.value)


@pytest.mark.parametrize("bad", [
    '{"utt_id": "a", "source": "s", "duration_s": -1}',
    '{"utt_id": "a", "source": "s"}',
    '{"utt_id": "a", "source": "s", "duration_s": 1, "style": "sung"}',
    'not json',
])
def test_malformed_records_rejected(tmp_path, bad):
    path = tmp_path / "m.jsonl"
    path.write_text(bad + "\n")
    with pytest.raises(corpus.ManifestError):
        corpus.load_manifest(path)


def test_unknown_fields_warn(tmp_path, caplog):
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps({"utt_id": "a", "source": "s", "duration_s": 1, "speaker": "x"}) + "\n")
    assert len(corpus.load_manifest(path)) == 1
    assert "speaker" in caplog.text


def test_empty_input():
    with pytest.raises(ValueError, match="no records"):
        corpus.compute_stats([])


def test_duration_filter_keeps_boundary():
    recs = [corpus.UtteranceRecord(str(i), "s", d) for i, d in enumerate([1.0, 5.0, 5.01])]
    kept, dropped = corpus.filter_by_duration(recs, 5.0)
    assert [r.utt_id for r in kept] == ["0", "1"] and [r.utt_id for r in dropped] == ["2"]


@given(st.lists(st.tuples(st.sampled_from("abc"), st.integers(1, 100_000)), min_size=1, max_size=40))
def test_totals_equal_pooled_groups(items):
    recs = [corpus.UtteranceRecord(str(i), s, ms / 1000.0) for i, (s, ms) in enumerate(items)]
    rows, totals = corpus.compute_stats(recs)
    assert sum(r.num_utts for r in rows) == totals.num_utts == len(recs)
    assert totals.spu == corpus.round_half_up(sum(ms for _, ms in items) / 1000.0 / len(items))


def test_empty_manifest(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    assert corpus.load_manifest(tmp_path / "m.jsonl") == []


def test_long_utterance_exclusion_count():
    r = np.random.default_rng(0)
    durations = np.concatenate([r.uniform(1, 30, 5529), r.uniform(30.5, 90, 384)])
    recs = [corpus.UtteranceRecord(f"u{i}", "test", float(d)) for i, d in enumerate(r.permutation(durations))]
    kept, dropped = corpus.filter_by_duration(recs, 30.0)
    assert (len(kept), len(dropped)) == (5529, 384)


@given(st.lists(st.tuples(st.sampled_from("ab"), st.integers(1, 60_000)), min_size=1, max_size=30),
       st.randoms(use_true_random=False), st.integers(1, 60_000))
def test_stats_invariants(items, shuffle, cutoff_ms):
    recs = [corpus.UtteranceRecord(str(i), s, ms / 1000.0) for i, (s, ms) in enumerate(items)]
    rows, totals = corpus.compute_stats(recs)
    for r in rows + [totals]:
        assert abs(r.spu - r.hours * 3600 / r.num_utts) <= 0.005 * 3600 / r.num_utts + 0.005
    shuffled = list(recs)
    shuffle.shuffle(shuffled)
    assert totals == corpus.compute_stats(shuffled)[1]
    kept, dropped = corpus.filter_by_duration(recs, cutoff_ms / 1000.0)
    assert sorted(kept + dropped, key=lambda r: int(r.utt_id)) == recs
