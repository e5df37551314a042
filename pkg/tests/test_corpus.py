"""Corpus tests: CSV/lexicon round trips, windowing, the synthetic generator,
and noise injection."""

import numpy as np
import pytest

from wordspot import (
    AlignmentRecord,
    GridConfig,
    Lexicon,
    build_lexicon,
    extract_clips,
    inject_noise,
    normalize_word,
    prepare_clips,
    read_alignment_csv,
    synth_corpus,
    write_alignment_csv,
    write_synth_corpus,
)
from wordspot.corpus import (
    SYNTH_SAMPLE_RATE,
    keyword_word,
    render_template,
    synth_split,
)

CFG3 = GridConfig(duration=1.0, n_cells=6, n_boxes=2, n_keywords=3)


# --- normalization and lexicon -------------------------------------------------


def test_normalize_word_folds_case_and_strips_punctuation():
    assert normalize_word("Hello!") == "hello"
    assert normalize_word("DON'T") == "dont"
    assert normalize_word("okay") == "okay"


def test_lexicon_bijection_and_text_round_trip(tmp_path):
    lex = Lexicon(["bravo", "alpha", "charlie"])
    assert len(lex) == 3
    assert lex.index("alpha") == 1
    assert lex.word(2) == "charlie"
    assert "alpha" in lex and "delta" not in lex
    path = tmp_path / "lex.txt"
    lex.save(path)
    assert Lexicon.load(path) == lex


def test_lexicon_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        Lexicon(["a", "a"])
    with pytest.raises(ValueError):
        Lexicon([])


def test_build_lexicon_ranks_by_count_then_alphabetically():
    records = [
        AlignmentRecord("u", w, 0.1 * i, 0.1 * i + 0.05)
        for i, w in enumerate(["bee", "ant", "bee", "cat", "ant", "dog"])
    ]
    lex = build_lexicon(records, 3)
    # ant and bee tie at 2 (alphabetical), then cat/dog tie at 1.
    assert lex.words == ("ant", "bee", "cat")


def test_build_lexicon_requires_enough_distinct_words():
    records = [AlignmentRecord("u", "only", 0.0, 0.1)]
    with pytest.raises(ValueError):
        build_lexicon(records, 2)


# --- alignment CSV --------------------------------------------------------------


def test_alignment_csv_round_trip_is_exact():
    records = [
        AlignmentRecord("utt1", "hello", 0.15, 0.42),
        AlignmentRecord("utt2", "guy", 1.2, 1.45),
    ]
    text = write_alignment_csv(records)
    assert text.splitlines()[0] == "utt_id,word,start,end"
    assert read_alignment_csv(text) == records


def test_alignment_csv_four_decimals_survive_exactly():
    # Times on the hundredth-of-a-second lattice serialize losslessly.
    records = [AlignmentRecord("u", "w", n / 100, (n + 17) / 100) for n in range(0, 80, 7)]
    back = read_alignment_csv(write_alignment_csv(records))
    for a, b in zip(records, back):
        assert b.start == a.start
        assert b.end == a.end


def test_alignment_csv_errors_carry_line_numbers():
    with pytest.raises(ValueError, match="line 1"):
        read_alignment_csv("wrong,header,entirely,x\n")
    good = "utt_id,word,start,end\n"
    with pytest.raises(ValueError, match="line 3"):
        read_alignment_csv(good + "u,w,0.1,0.2\nu,w,zero,0.3\n")
    with pytest.raises(ValueError, match="line 2"):
        read_alignment_csv(good + "u,w,0.5,0.2\n")  # start after end


# --- windowing ------------------------------------------------------------------


def _lex(*words):
    return Lexicon(list(words))


def test_extract_clips_window_count():
    lex = _lex("w")
    # 3 s source, 1 s windows, 1 s stride -> 3 windows.
    clips = extract_clips("u", [], 3.0, CFG3, 1.0, lex)
    assert [c.utt_id for c in clips] == ["u_000", "u_001", "u_002"]
    assert [c.offset for c in clips] == [0.0, 1.0, 2.0]
    # Shorter than one window -> exactly one window named after the source.
    clips = extract_clips("u", [], 0.4, CFG3, 1.0, lex)
    assert [c.utt_id for c in clips] == ["u"]
    # 2.5 s at stride 0.5 -> offsets 0.0 .. 1.5.
    clips = extract_clips("u", [], 2.5, CFG3, 0.5, lex)
    assert [c.offset for c in clips] == [0.0, 0.5, 1.0, 1.5]


def test_extract_clips_rebases_contained_words():
    lex = _lex("guy")
    records = [AlignmentRecord("u", "guy", 1.20, 1.45)]
    clips = extract_clips("u", records, 3.0, CFG3, 1.0, lex)
    assert clips[0].events == ()
    assert clips[2].events == ()
    (event,) = clips[1].events
    assert event.word == "guy"
    assert event.start == pytest.approx(0.20)
    assert event.end == pytest.approx(0.45)


def test_extract_clips_drops_straddling_words():
    lex = _lex("guy")
    records = [AlignmentRecord("u", "guy", 0.9, 1.1)]
    clips = extract_clips("u", records, 2.0, CFG3, 1.0, lex)
    assert all(c.events == () for c in clips)


def test_extract_clips_skips_words_outside_lexicon():
    lex = _lex("known")
    records = [
        AlignmentRecord("u", "Known!", 0.1, 0.3),  # normalizes into lexicon
        AlignmentRecord("u", "unknown", 0.5, 0.7),
    ]
    (clip,) = extract_clips("u", records, 1.0, CFG3, 1.0, lex)
    assert [e.word for e in clip.events] == ["known"]


def test_extract_clips_rejects_foreign_records():
    lex = _lex("w")
    with pytest.raises(ValueError, match="other"):
        extract_clips("u", [AlignmentRecord("other", "w", 0.1, 0.2)], 1.0, CFG3, 1.0, lex)


def test_prepare_clips_splits_every_fifth_source():
    lex = _lex("w")
    paths = {f"u{i}": f"u{i}.wav" for i in range(10)}
    durs = {u: 1.0 for u in paths}
    clips = prepare_clips([], paths, durs, CFG3, 1.0, lex)
    splits = {c.utt_id: c.split for c in clips}
    assert splits["u4"] == "test" and splits["u9"] == "test"
    assert sum(1 for s in splits.values() if s == "test") == 2


def test_prepare_clips_rejects_orphan_alignments():
    lex = _lex("w")
    with pytest.raises(ValueError, match="ghost"):
        prepare_clips(
            [AlignmentRecord("ghost", "w", 0.1, 0.2)], {"u": "u.wav"}, {"u": 1.0},
            CFG3, 1.0, lex,
        )


# --- synthetic corpus -----------------------------------------------------------


def test_synth_corpus_is_deterministic():
    a, words_a = synth_corpus(20, 3, CFG3, seed=7)
    b, words_b = synth_corpus(20, 3, CFG3, seed=7)
    assert words_a == words_b == ["kw000", "kw001", "kw002"]
    for ca, cb in zip(a, b):
        assert ca.utt_id == cb.utt_id
        assert ca.events == cb.events
        assert np.array_equal(ca.waveform, cb.waveform)
    c, _ = synth_corpus(20, 3, CFG3, seed=8)
    assert any(not np.array_equal(x.waveform, y.waveform) for x, y in zip(a, c))


def test_synth_corpus_covers_every_keyword_early():
    clips, words = synth_corpus(10, 3, CFG3, seed=0)
    for i, word in enumerate(words):
        assert any(e.word == word for e in clips[i].events)


def test_synth_event_times_sit_on_the_hundredth_lattice():
    clips, _ = synth_corpus(30, 3, CFG3, seed=1)
    for clip in clips:
        for e in clip.events:
            assert round(e.start * 100) == pytest.approx(e.start * 100, abs=1e-9)
            assert round(e.end * 100) == pytest.approx(e.end * 100, abs=1e-9)
            assert 0.15 - 1e-9 <= e.end - e.start <= 0.30 + 1e-9


def test_synth_events_never_overlap_and_keep_a_gap():
    clips, _ = synth_corpus(100, 3, CFG3, seed=2)
    for clip in clips:
        spans = sorted((e.start, e.end) for e in clip.events)
        for (s0, e0), (s1, e1) in zip(spans, spans[1:]):
            assert s1 - e0 >= 0.05 - 1e-9
        assert len(clip.events) <= 2


def test_synth_split_pattern():
    assert [synth_split(i) for i in range(6)] == [
        "train", "train", "train", "train", "test", "train"
    ]


def test_synth_events_match_their_templates_exactly():
    # A nearest-template matcher over the aligned segment must identify
    # every event: the corpus is separable by construction.
    clips, words = synth_corpus(40, 3, CFG3, seed=3)
    templates = [render_template(i, 3) for i in range(3)]
    checked = 0
    for clip in clips:
        for e in clip.events:
            a = round(e.start * SYNTH_SAMPLE_RATE)
            scores = []
            for tmpl in templates:
                seg = clip.waveform[a : a + len(tmpl)]
                if len(seg) != len(tmpl):
                    scores.append(-np.inf)
                    continue
                scores.append(float(np.dot(seg, tmpl) / np.linalg.norm(tmpl) ** 2))
            assert words[int(np.argmax(scores))] == e.word
            checked += 1
    assert checked > 20


def test_write_synth_corpus_layout_and_round_trip(tmp_path):
    out = tmp_path / "corpus"
    manifest_clips, lexicon = write_synth_corpus(out, 12, 3, CFG3, seed=7)
    assert (out / "manifest.json").exists()
    assert (out / "alignments.csv").exists()
    assert (out / "clips.json").exists()
    assert lexicon == Lexicon.load(out / "lexicon.txt")
    assert len(list((out / "wavs").glob("*.wav"))) == 12
    assert len(manifest_clips) == 12
    # Alignment times written to 4 decimals parse back bit-exactly and
    # match the clip manifest's rebased events.
    records = read_alignment_csv((out / "alignments.csv").read_text())
    by_utt = {}
    for rec in records:
        by_utt.setdefault(rec.utt_id, []).append(rec)
    for clip in manifest_clips:
        recs = by_utt.get(clip.utt_id, [])
        assert len(recs) == len(clip.events)
        for rec, event in zip(recs, clip.events):
            assert rec.start == event.start
            assert rec.end == event.end


def test_keyword_word_formatting():
    assert keyword_word(0) == "kw000"
    assert keyword_word(42) == "kw042"


# --- noise injection -------------------------------------------------------------


@pytest.mark.parametrize("kind", ["gaussian", "speckle", "babble"])
def test_alpha_zero_is_an_exact_copy(kind):
    rng = np.random.default_rng(4)
    x = rng.normal(scale=0.3, size=8000)
    out = inject_noise(x, kind, 0.0, seed=5)
    assert np.array_equal(out, x)
    assert out is not x  # a copy, not the same buffer


def test_gaussian_noise_adds_unit_rms_at_alpha_one():
    rng = np.random.default_rng(6)
    x = rng.standard_normal(32000)
    x /= np.sqrt(np.mean(x**2))  # unit RMS input
    out = inject_noise(x, "gaussian", 1.0, seed=7)
    rms = np.sqrt(np.mean(out**2))
    # Independent unit-RMS signals add in power: RMS ~= sqrt(2).
    assert rms == pytest.approx(np.sqrt(2.0), rel=0.05)


def test_gaussian_noise_may_exceed_unit_range():
    x = np.ones(8000) * 0.9
    out = inject_noise(x, "gaussian", 1.0, seed=8)
    assert np.max(np.abs(out)) > 1.0


def test_speckle_noise_keeps_silence_silent():
    x = np.zeros(4000)
    out = inject_noise(x, "speckle", 0.8, seed=9)
    assert np.array_equal(out, x)
    y = np.ones(4000)
    noisy = inject_noise(y, "speckle", 0.5, seed=9)
    assert not np.array_equal(noisy, y)


def test_babble_noise_is_deterministic_per_seed():
    x = np.zeros(16000)
    a = inject_noise(x, "babble", 0.7, seed=10)
    b = inject_noise(x, "babble", 0.7, seed=10)
    c = inject_noise(x, "babble", 0.7, seed=11)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    # The packaged texture has unit RMS, so alpha scales the added power.
    assert np.sqrt(np.mean(a**2)) == pytest.approx(0.7, rel=0.05)


def test_noise_seed_accepts_sequences():
    x = np.zeros(4000)
    a = inject_noise(x, "gaussian", 0.5, seed=[3, 1, 0])
    b = inject_noise(x, "gaussian", 0.5, seed=[3, 1, 0])
    c = inject_noise(x, "gaussian", 0.5, seed=[3, 1, 1])
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_unknown_noise_kind_rejected():
    with pytest.raises(ValueError):
        inject_noise(np.zeros(10), "pink", 0.5, seed=0)


def test_negative_alpha_rejected():
    with pytest.raises(ValueError):
        inject_noise(np.zeros(10), "gaussian", -0.1, seed=0)
