import json
import subprocess
import sys

import numpy as np
import pytest

from seilab import cli
from seilab import harness as H
from seilab.iqfile import read_seiq, write_seiq
from seilab import sei
from seilab.sei import Outcome

from conftest import small_config


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 1, "lab": small_config().to_dict()}))
    return path


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_unknown_flag_prints_usage(capsys):
    code, _, err = run(["--bogus"], capsys)
    assert code == 1 and "usage" in err
    code, _, err = run(["synth", "--nope"], capsys)
    assert code == 1 and "usage" in err


def test_console_module_entry():
    p = subprocess.run([sys.executable, "-m", "seilab.cli", "evaluate", "--snr", "15"], capture_output=True,
                       text=True)
    assert p.returncode == 1 and "usage" in p.stderr


def test_validation_errors_exit_1(tmp_path, capsys):
    assert run(["--out", tmp_path, "synth", "--count", "0"], capsys)[0] == 1
    assert run(["synth", "--emitter", "nobody", "--out", tmp_path], capsys)[0] == 1
    assert run(["pipeline", tmp_path / "missing.seiq"], capsys)[0] == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"lab": {"n_trian": 1}}')
    assert run(["gradcheck", "--config", bad], capsys)[0] == 1
    assert run(["synth", "--seed", "-4"], capsys)[0] == 1
    junk = tmp_path / "junk.seiq"
    junk.write_bytes(b"garbage!")
    assert run(["fingerprint", junk], capsys)[0] == 1


def test_runtime_failure_exits_2(tmp_path, capsys):
    noise = tmp_path / "noise.seiq"
    rng = np.random.default_rng(0)
    write_seiq(noise, rng.standard_normal(5000) + 1j * rng.standard_normal(5000), sample_rate=20e6)
    code, _, err = run(["pipeline", noise, "--out", tmp_path], capsys)
    assert code == 2 and "no preambles" in err


def test_synth_pipeline_fingerprint_chain(tmp_path, tiny_config, capsys):
    code, out, _ = run(["synth", "--config", tiny_config, "--count", "3", "--emitter", "E2", "--out", tmp_path],
                       capsys)
    assert code == 0
    rec, meta = read_seiq(tmp_path / "E2.seiq")
    assert meta["count"] == 3 and len(meta["frame_starts"]) == 3 and meta["seed"] == 1
    code, out, _ = run(["pipeline", tmp_path / "E2.seiq", "--out", tmp_path], capsys)
    assert code == 0 and "3 of 3 frames" in out
    pre, _ = read_seiq(tmp_path / "E2.preambles.seiq")
    assert pre.shape == (3, 320)
    code, out, _ = run(["fingerprint", tmp_path / "E2.preambles.seiq", "--out", tmp_path], capsys)
    assert code == 0 and "(3, 771)" in out


def test_gradcheck_exit_0(capsys):
    code, out, _ = run(["gradcheck"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert all(line.startswith("PASS") for line in lines[:-1]) and "all checks pass" in lines[-1]


def test_evaluate_prints_one_report(tmp_path, tiny_config, capsys):
    code, out, _ = run(["evaluate", "--config", tiny_config, "--out", tmp_path, "--snr", "9", "--decoy",
                        "--attack", "gan", "--classifier", "mda_gabor"], capsys)
    assert code == 0
    report = json.loads(out)
    assert report["scenario"] == {"snr_db": 9.0, "decoy": True, "residual": False, "sdr": "b210", "attack": "gan",
                                  "classifier": "mda_gabor", "defense": "none", "seed": 1}
    assert json.loads((tmp_path / "report.json").read_text()) == report


def _canned(self, spec, shuffle_labels=False):
    counts = {o.value: 0 for o in Outcome}
    counts["false_accept"] = 1
    return H.EvalReport(spec, counts, 0, 4, [], {}, [])


def test_matrix_all_emits_240_rows(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(H.Lab, "run", _canned)
    code, out, _ = run(["matrix", "--all", "--out", tmp_path], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].split(",") == H.MATRIX_COLUMNS
    assert len(lines) == 241
    assert all(",25.0%/0.0%," in line for line in lines[1:])
    assert (tmp_path / "matrix.csv").read_text() == out


def test_matrix_selection(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(H.Lab, "run", _canned)
    code, out, _ = run(["matrix", "--snr", "9", "--classifier", "cnn_time", "--sdr", "hackrf", "--out", tmp_path],
                       capsys)
    assert code == 0 and len(out.strip().splitlines()) == 1 + 2 * 2 * 3
    assert run(["matrix", "--out", tmp_path], capsys)[0] == 1


def test_train_commands(tmp_path, tiny_config, capsys):
    code, out, _ = run(["train-sei", "--config", tiny_config, "--out", tmp_path], capsys)
    assert code == 0 and json.loads(out)["test_accuracy"] >= 0.9
    model = sei.load_mda(tmp_path / "mda_gabor_30dB.mda")
    assert model.C == 8
    assert json.loads((tmp_path / "mda_gabor_30dB.report.json").read_text())["n_test"] == 8 * 15
    code, _, _ = run(["train-attack", "--config", tiny_config, "--attack", "replay", "--sdr", "hackrf",
                      "--out", tmp_path], capsys)
    assert code == 0
    x, meta = read_seiq(tmp_path / "replay_hackrf_E0.seiq")
    assert meta["kind"] == "replay" and x.shape == (20, 320)
    assert run(["train-attack", "--config", tiny_config, "--target", "E9", "--out", tmp_path], capsys)[0] == 1
