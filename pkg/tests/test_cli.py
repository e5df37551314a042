"""Command-line contract tests: exit codes, atomic outputs, determinism,
flag precedence, and serialization formats."""

import csv
import json

import pytest

from conftest import run_cli


def read_json(path):
    return json.loads(path.read_text())


# --- synth ---------------------------------------------------------------------


def test_synth_is_idempotent_per_seed(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    run_cli("synth", "--n-clips", 15, "--n-keywords", 3, "--seed", 9, "--out", a)
    run_cli("synth", "--n-clips", 15, "--n-keywords", 3, "--seed", 9, "--out", b)
    for rel in ("alignments.csv", "lexicon.txt", "clips.json", "manifest.json"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
    wavs = sorted(p.name for p in (a / "wavs").glob("*.wav"))
    assert len(wavs) == 15
    for name in wavs:
        assert (a / "wavs" / name).read_bytes() == (b / "wavs" / name).read_bytes()


def test_synth_seed_changes_the_corpus(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    run_cli("synth", "--n-clips", 10, "--n-keywords", 2, "--seed", 1, "--out", a)
    run_cli("synth", "--n-clips", 10, "--n-keywords", 2, "--seed", 2, "--out", b)
    assert (a / "alignments.csv").read_bytes() != (b / "alignments.csv").read_bytes()


# --- prepare -------------------------------------------------------------------


def test_prepare_reproduces_the_synth_clip_manifest(tmp_path, small_corpus):
    out = tmp_path / "prep"
    run_cli(
        "prepare", "--manifest", small_corpus / "manifest.json",
        "--alignments", small_corpus / "alignments.csv",
        "--out", out, "--lexicon-size", 3,
    )
    assert (out / "clips.json").read_bytes() == (small_corpus / "clips.json").read_bytes()
    assert (out / "lexicon.txt").read_bytes() == (small_corpus / "lexicon.txt").read_bytes()


def test_prepare_rejects_malformed_rows_with_line_numbers(tmp_path, small_corpus):
    bad = tmp_path / "bad.csv"
    bad.write_text(
        "utt_id,word,start,end\n"
        "clip_0000,kw001,0.10,0.30\n"
        "clip_0000,kw001,mangled,0.50\n"
    )
    result = run_cli(
        "prepare", "--manifest", small_corpus / "manifest.json",
        "--alignments", bad, "--out", tmp_path / "out", check=False,
    )
    assert result.returncode == 2
    assert "line 3" in result.stderr
    assert not (tmp_path / "out" / "clips.json").exists()


def test_prepare_empty_manifest_warns_but_succeeds(tmp_path):
    manifest = tmp_path / "m.json"
    manifest.write_text('{"sample_rate": 8000, "utterances": {}}')
    align = tmp_path / "a.csv"
    align.write_text("utt_id,word,start,end\n")
    out = tmp_path / "out"
    result = run_cli("prepare", "--manifest", manifest, "--alignments", align, "--out", out)
    assert "empty" in result.stderr.lower()
    doc = read_json(out / "clips.json")
    assert doc["clips"] == []


def test_prepare_missing_inputs_fail_cleanly(tmp_path):
    result = run_cli(
        "prepare", "--manifest", tmp_path / "none.json",
        "--alignments", tmp_path / "none.csv", "--out", tmp_path / "o", check=False,
    )
    assert result.returncode == 2
    assert "not found" in result.stderr


# --- train ---------------------------------------------------------------------


def test_train_writes_checkpoint_and_step_log(tmp_path, small_corpus):
    out = tmp_path / "m.pt"
    run_cli(
        "train", "--clips", small_corpus / "clips.json",
        "--lexicon", small_corpus / "lexicon.txt",
        "--out", out, "--epochs", 2, "--seed", 0,
    )
    assert out.exists()
    log_lines = [
        json.loads(line)
        for line in (tmp_path / "m.log.jsonl").read_text().splitlines()
    ]
    steps = [l for l in log_lines if "step" in l]
    summaries = [l for l in log_lines if "epoch_summary" in l]
    # 48 training clips at the default batch size of 32 -> 2 steps/epoch.
    assert len(steps) == 4
    assert len(summaries) == 2
    assert all("total" in s for s in steps)
    assert all("val_f1" in s["epoch_summary"] for s in summaries)


def test_train_resume_matches_uninterrupted_run(tmp_path, small_corpus):
    import torch

    kwargs = ["--clips", small_corpus / "clips.json",
              "--lexicon", small_corpus / "lexicon.txt", "--seed", 4]
    straight = tmp_path / "straight.pt"
    run_cli("train", *kwargs, "--out", straight, "--epochs", 2)
    staged = tmp_path / "staged.pt"
    run_cli("train", *kwargs, "--out", staged, "--epochs", 1)
    run_cli("train", *kwargs, "--out", staged, "--epochs", 2, "--resume")
    a = torch.load(straight, weights_only=False)["model_state"]
    b = torch.load(staged, weights_only=False)["model_state"]
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_train_rejects_lexicon_mismatch(tmp_path, small_corpus):
    wrong = tmp_path / "lex.txt"
    wrong.write_text("kw000\nkw001\n")  # corpus also uses kw002
    result = run_cli(
        "train", "--clips", small_corpus / "clips.json", "--lexicon", wrong,
        "--out", tmp_path / "m.pt", "--epochs", 1, check=False,
    )
    assert result.returncode == 2
    assert "lexicon mismatch" in result.stderr


# --- config file ------------------------------------------------------------------


def test_config_supplies_defaults_and_flags_override(tmp_path, small_corpus):
    config = tmp_path / "run.toml"
    config.write_text("[optimizer]\nepochs = 1\nseed = 4\n")
    out = tmp_path / "m.pt"
    # --epochs beats the config; seed comes from the config.
    run_cli(
        "train", "--config", config, "--clips", small_corpus / "clips.json",
        "--lexicon", small_corpus / "lexicon.txt", "--out", out, "--epochs", 2,
    )
    summaries = [
        json.loads(line)["epoch_summary"]
        for line in (tmp_path / "m.log.jsonl").read_text().splitlines()
        if "epoch_summary" in line
    ]
    assert len(summaries) == 2


def test_unknown_config_keys_are_rejected(tmp_path, small_corpus):
    config = tmp_path / "run.toml"
    config.write_text("[optimizer]\nlearning_rate = 0.1\n")
    result = run_cli(
        "train", "--config", config, "--clips", small_corpus / "clips.json",
        "--lexicon", small_corpus / "lexicon.txt", "--out", tmp_path / "m.pt",
        "--epochs", 1, check=False,
    )
    assert result.returncode == 2
    assert "unknown keys" in result.stderr


def test_invalid_toml_is_rejected(tmp_path):
    config = tmp_path / "run.toml"
    config.write_text("[optimizer\nepochs = 1\n")
    result = run_cli("synth", "--config", config, "--n-clips", 1,
                     "--n-keywords", 1, "--out", tmp_path / "c", check=False)
    assert result.returncode == 2
    assert "TOML" in result.stderr


# --- evaluate ----------------------------------------------------------------------


def test_evaluate_report_contents_and_determinism(tmp_path, small_corpus, quick_model):
    out1 = tmp_path / "r1.json"
    out2 = tmp_path / "r2.json"
    args = ["evaluate", "--checkpoint", quick_model,
            "--clips", small_corpus / "clips.json", "--sweep", "--seed", 7]
    run_cli(*args, "--out", out1)
    run_cli(*args, "--out", out2)
    assert out1.read_bytes() == out2.read_bytes()
    report = read_json(out1)
    for key in ("precision", "recall", "f1", "actual_accuracy", "mean_iou_matched",
                "atwv", "mtwv", "theta", "counts", "seed", "theta_curve"):
        assert key in report
    assert report["seed"] == 7
    assert report["swept"] is True
    assert any(abs(report["theta"] - t) < 1e-9 for t in
               [round(0.05 * i, 2) for i in range(1, 20)])


def test_evaluate_fixed_theta_skips_the_sweep(tmp_path, small_corpus, quick_model):
    out = tmp_path / "r.json"
    run_cli("evaluate", "--checkpoint", quick_model,
            "--clips", small_corpus / "clips.json", "--theta", 0.4, "--out", out)
    report = read_json(out)
    assert report["theta"] == 0.4
    assert report["swept"] is False


def test_evaluate_theta_and_sweep_conflict(tmp_path, small_corpus, quick_model):
    result = run_cli(
        "evaluate", "--checkpoint", quick_model,
        "--clips", small_corpus / "clips.json", "--theta", 0.4, "--sweep",
        "--out", tmp_path / "r.json", check=False,
    )
    assert result.returncode == 2
    assert "mutually exclusive" in result.stderr


def test_evaluate_writes_theta_curve_csv(tmp_path, small_corpus, quick_model):
    out = tmp_path / "r.json"
    curves = tmp_path / "curve.csv"
    run_cli("evaluate", "--checkpoint", quick_model,
            "--clips", small_corpus / "clips.json", "--sweep",
            "--out", out, "--curves", curves)
    rows = list(csv.DictReader(curves.open()))
    assert len(rows) == 19
    assert set(rows[0]) == {"theta", "precision", "recall", "f1"}


def test_evaluate_oracle_detections_score_perfectly(tmp_path, small_corpus):
    clips = read_json(small_corpus / "clips.json")["clips"]
    test_clips = [c for c in clips if c["split"] == "test"]
    lines = []
    for clip in test_clips:
        for event in clip["events"]:
            lines.append(json.dumps({
                "utt_id": clip["utt_id"], "keyword": event["word"],
                "start_s": event["start"], "end_s": event["end"], "score": 1.0,
            }))
    dets = tmp_path / "oracle.jsonl"
    dets.write_text("\n".join(lines) + "\n")
    out = tmp_path / "r.json"
    run_cli(
        "evaluate", "--detections", dets, "--lexicon", small_corpus / "lexicon.txt",
        "--clips", small_corpus / "clips.json", "--sweep", "--out", out,
    )
    report = read_json(out)
    assert report["precision"] == 1.0
    assert report["recall"] == 1.0
    assert report["f1"] == 1.0
    assert report["actual_accuracy"] == 1.0
    assert report["mean_iou_matched"] == pytest.approx(1.0)
    assert report["mtwv"] == 1.0


def test_evaluate_requires_checkpoint_or_detections(tmp_path, small_corpus):
    result = run_cli(
        "evaluate", "--clips", small_corpus / "clips.json",
        "--out", tmp_path / "r.json", check=False,
    )
    assert result.returncode == 2


# --- decode ------------------------------------------------------------------------


def test_decode_output_is_sorted_and_duplicates_duplicate(tmp_path, small_corpus, quick_model):
    wavs = sorted((small_corpus / "wavs").glob("*.wav"))[:3]
    out = tmp_path / "dets.jsonl"
    # Pass files out of order and one of them twice.
    run_cli("decode", "--checkpoint", quick_model, "--theta", 0.0,
            "--out", out, wavs[2], wavs[0], wavs[0])
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert rows, "theta 0 should emit at least one detection"
    keys = [(r["utt_id"], r["start_s"]) for r in rows]
    assert keys == sorted(keys)
    first = [r for r in rows if r["utt_id"] == wavs[0].name]
    # The duplicated file contributes each detection twice.
    assert len(first) % 2 == 0
    assert first[::2] == first[1::2]


def test_decode_csv_format(tmp_path, small_corpus, quick_model):
    wav = next(iter(sorted((small_corpus / "wavs").glob("*.wav"))))
    out = tmp_path / "dets.csv"
    run_cli("decode", "--checkpoint", quick_model, "--theta", 0.0,
            "--format", "csv", "--out", out, wav)
    lines = out.read_text().splitlines()
    assert lines[0] == "utt_id,keyword,start_s,end_s,score,cell"


def test_decode_partial_failure_keeps_going(tmp_path, small_corpus, quick_model):
    wav = next(iter(sorted((small_corpus / "wavs").glob("*.wav"))))
    out = tmp_path / "dets.jsonl"
    result = run_cli("decode", "--checkpoint", quick_model, "--theta", 0.0,
                     "--out", out, tmp_path / "missing.wav", wav, check=False)
    assert result.returncode == 0
    assert "missing.wav" in result.stderr
    assert out.exists()


def test_decode_total_failure_is_an_error(tmp_path, quick_model):
    result = run_cli("decode", "--checkpoint", quick_model,
                     "--out", tmp_path / "d.jsonl",
                     tmp_path / "a.wav", tmp_path / "b.wav", check=False)
    assert result.returncode == 1
    assert not (tmp_path / "d.jsonl").exists()


# --- noise-eval ----------------------------------------------------------------------


def test_noise_eval_rows_and_seed_echo(tmp_path, small_corpus, quick_model):
    out = tmp_path / "curve.csv"
    run_cli("noise-eval", "--checkpoint", quick_model,
            "--clips", small_corpus / "clips.json", "--kind", "speckle",
            "--alphas", "0,0.5", "--theta", 0.4, "--seed", 3, "--out", out)
    rows = list(csv.DictReader(out.open()))
    assert [r["alpha"] for r in rows] == ["0.0", "0.5"]
    assert all(r["seed"] == "3" for r in rows)
    assert all(r["theta"] == "0.4" for r in rows)
    assert set(rows[0]) == {"alpha", "precision", "recall", "f1",
                            "actual_accuracy", "theta", "seed"}


def test_noise_eval_alpha_zero_matches_clean_evaluation(tmp_path, small_corpus, quick_model):
    curve = tmp_path / "curve.csv"
    run_cli("noise-eval", "--checkpoint", quick_model,
            "--clips", small_corpus / "clips.json", "--kind", "gaussian",
            "--alphas", "0", "--theta", 0.4, "--out", curve)
    report = tmp_path / "r.json"
    run_cli("evaluate", "--checkpoint", quick_model,
            "--clips", small_corpus / "clips.json", "--theta", 0.4, "--out", report)
    row = next(csv.DictReader(curve.open()))
    clean = read_json(report)
    for key in ("precision", "recall", "f1", "actual_accuracy"):
        assert float(row[key]) == clean[key]


def test_noise_eval_rejects_unknown_kind(tmp_path, small_corpus, quick_model):
    result = run_cli("noise-eval", "--checkpoint", quick_model,
                     "--clips", small_corpus / "clips.json", "--kind", "pink",
                     "--alphas", "0,1", "--out", tmp_path / "c.csv", check=False)
    assert result.returncode == 2


# --- general -----------------------------------------------------------------------


def test_unknown_subcommand_is_a_usage_error():
    result = run_cli("frobnicate", check=False)
    assert result.returncode == 2


def test_missing_checkpoint_fails_cleanly(tmp_path, small_corpus):
    result = run_cli(
        "evaluate", "--checkpoint", tmp_path / "none.pt",
        "--clips", small_corpus / "clips.json", "--out", tmp_path / "r.json",
        check=False,
    )
    assert result.returncode == 2
    assert "not found" in result.stderr
