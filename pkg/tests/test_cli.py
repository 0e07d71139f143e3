import re
import subprocess
import sys

import numpy as np
import pytest

from jscclab.cli import main
from jscclab.experiments import read_records
from jscclab.metrics import report, si_sdr
from jscclab.signal_io import Signal, build_dataset, DatasetSpec, read_wav, write_wav

TINY = ["--items", "10", "--duration", "0.09"]


def _train(tmp_path, name, *extra):
    out = tmp_path / f"{name}.ckpt"
    code = main(["train", *TINY, "--out", str(out), *extra])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def codec(tmp_path_factory):
    d = tmp_path_factory.mktemp("codec")
    out = d / "tn.ckpt"
    assert main(["train", "--method", "separate-transnet", "--preset", "desk", "--items", "24",
                 "--duration", "0.09", "--max-epochs", "15", "--snr-w", "10", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def wavs(tmp_path_factory):
    d = tmp_path_factory.mktemp("wav")
    ex = build_dataset(DatasetSpec(count=2, test_count=1, test_duration_s=0.9, seed=7)).test[0]
    n = ex.clean.size - 13  # deliberately not a frame multiple
    write_wav(d / "clean.wav", Signal(ex.clean[:n]))
    write_wav(d / "noisy.wav", Signal(np.clip(ex.noisy[:n], -1, 1)))
    return d


# -- train -----------------------------------------------------------------------

def test_train_writes_checkpoint_and_log(tmp_path, capsys):
    out = _train(tmp_path, "enh", "--method", "separate-enhancer", "--latency-ms", "3", "--max-epochs", "4")
    assert out.is_file()
    log = (tmp_path / "enh.log").read_text().splitlines()
    assert len(log) == 4
    vals = [float(re.search(r"val_loss=(\S+)", ln).group(1)) for ln in log]
    assert vals[-1] < vals[0]
    assert "epoch=1 train_loss=" in capsys.readouterr().out


def test_train_same_seed_identical(tmp_path):
    a = _train(tmp_path, "a", "--method", "separate-transnet", "--max-epochs", "2", "--seed", "4")
    b = _train(tmp_path, "b", "--method", "separate-transnet", "--max-epochs", "2", "--seed", "4")
    c = _train(tmp_path, "c", "--method", "separate-transnet", "--max-epochs", "2", "--seed", "5")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_train_bad_ratio_is_usage_error(tmp_path, capsys):
    assert main(["train", "--method", "separate-transnet", "--ratio", "0.3", "--out", str(tmp_path / "x")]) == 2
    err = capsys.readouterr().err
    assert "0.25" in err and "0.5" in err and "1" in err


@pytest.mark.parametrize("argv", [
    ["train", "--method", "separate-enhancer", "--latency-ms", "4", "--out", "x"],
    ["train", "--method", "separate-enhancer", "--enhancer", "e.ckpt", "--out", "x"],
    ["train", "--method", "separate-enhancer", "--duration", "0.1", "--out", "x"],
    ["train", "--method", "nope", "--out", "x"],
    ["sweep", "--spec", "missing.spec"],
    ["transmit", "--in", "a.wav", "--out", "b.wav"],
    ["verify", "--only", "astrology"],
    [],
])
def test_usage_errors_exit_2(argv):
    assert main(argv) == 2


def test_divergence_exit_3(tmp_path, capsys):
    code = main(["train", "--method", "separate-transnet", *TINY, "--lr", "1e300", "--max-epochs", "3",
                 "--out", str(tmp_path / "d.ckpt")])
    assert code == 3
    assert "diverged" in capsys.readouterr().err


def test_joint_trains_missing_enhancer(tmp_path):
    out = _train(tmp_path, "joint", "--method", "joint", "--max-epochs", "1", "--preset", "desk")
    assert (tmp_path / "joint.enhancer.log").is_file()
    assert (tmp_path / "joint.transnet.log").is_file()
    assert out.is_file()


def test_log_level_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("JSCC_LOG_LEVEL", "error")
    _train(tmp_path, "q", "--method", "separate-enhancer", "--max-epochs", "1")
    assert "epoch=" not in capsys.readouterr().out
    monkeypatch.setenv("JSCC_LOG_LEVEL", "verbose")
    assert main(["verify", "--only", "channel"]) == 2


# -- transmit ----------------------------------------------------------------------

def _transmit(tmp_path, wavs, codec, snr, name, *extra):
    out = tmp_path / name
    argv = ["transmit", "--in", str(wavs / "clean.wav"), "--out", str(out), "--transnet", str(codec),
            "--snr-w", snr, "--seed", "3", *extra]
    assert main(argv) == 0
    return out


def test_transmit_duration_and_determinism(tmp_path, wavs, codec):
    a = _transmit(tmp_path, wavs, codec, "10", "a.wav")
    b = _transmit(tmp_path, wavs, codec, "10", "b.wav")
    assert read_wav(a).samples.size == read_wav(wavs / "clean.wav").samples.size
    assert a.read_bytes() == b.read_bytes()


def test_transmit_inf_beats_zero_db(tmp_path, wavs, codec):
    ref = read_wav(wavs / "clean.wav").samples
    clean_link = si_sdr(ref, read_wav(_transmit(tmp_path, wavs, codec, "inf", "i.wav")).samples)
    noisy_link = si_sdr(ref, read_wav(_transmit(tmp_path, wavs, codec, "0", "z.wav")).samples)
    assert clean_link > noisy_link


def test_transmit_prints_report_with_reference(tmp_path, wavs, codec, capsys):
    out = _transmit(tmp_path, wavs, codec, "10", "r.wav", "--reference", str(wavs / "clean.wav"))
    text = capsys.readouterr().out
    rep = report(read_wav(wavs / "clean.wav").samples, read_wav(out).samples)
    assert f"si_sdr_db: {rep.si_sdr_db:.4f}" in text
    assert "estoi:" in text


def test_transmit_frame_mismatch_names_both(tmp_path, wavs, codec, capsys):
    enh = _train(tmp_path, "e80", "--method", "separate-enhancer", "--latency-ms", "5", "--max-epochs", "1")
    code = main(["transmit", "--in", str(wavs / "noisy.wav"), "--out", str(tmp_path / "m.wav"),
                 "--enhancer", str(enh), "--transnet", str(codec)])
    assert code == 2
    err = capsys.readouterr().err
    assert "80" in err and "48" in err


def test_transmit_missing_checkpoint_fails(tmp_path, wavs):
    assert main(["transmit", "--in", str(wavs / "noisy.wav"), "--out", str(tmp_path / "m.wav"),
                 "--transnet", str(tmp_path / "absent.ckpt")]) == 1


# -- sweep -----------------------------------------------------------------------

MINI = """
snr_a = 0, 5
method = separate, noisy-baseline
[run]
seeds = {seeds}
output = {out}
[data]
count = 10
duration_s = 0.09
test_count = 2
test_duration_s = 0.9
[training]
enhancer_epochs = 1
transnet_epochs = 1
"""


def _sweep(tmp_path, name, seeds="0", out="out", extra=()):
    spec = tmp_path / name
    spec.write_text(MINI.format(seeds=seeds, out=out))
    return main(["sweep", "--spec", str(spec), *extra]), tmp_path / out


def test_sweep_rows_rerun_and_jobs(tmp_path, capsys):
    code, out = _sweep(tmp_path, "a.spec", seeds="0, 1")
    assert code == 0
    rows = read_records(out / "records.csv")
    cells = [r for r in rows if r["row_type"] == "cell"]
    assert len([r for r in cells if r["seed"] == "0"]) == 4
    assert len([r for r in cells if r["seed"] == "1"]) == 4
    first = (out / "records.csv").read_bytes()
    assert "SI-SDR (dB)" in capsys.readouterr().out
    assert _sweep(tmp_path, "a.spec", seeds="0, 1")[0] == 0
    assert (out / "records.csv").read_bytes() == first
    code, out2 = _sweep(tmp_path, "b.spec", seeds="1, 0", out="out2", extra=("--jobs", "2"))
    assert code == 0 and (out2 / "records.csv").read_bytes() == first


def test_sweep_summary_matches_items(tmp_path):
    _, out = _sweep(tmp_path, "s.spec")
    rows = read_records(out / "records.csv")
    items = read_records(out / "items.csv")
    for r in rows:
        sel = [float(i["si_sdr_db"]) for i in items if i["method"] == r["method"]
               and (r["snr_a_db"] == "all" or i["snr_a_db"] == r["snr_a_db"])]
        assert abs(float(r["si_sdr_mean"]) - np.mean(sel)) < 1e-9
        assert r["pesq"] == ""


def test_noisy_baseline_reproduces_mixture_metrics(tmp_path):
    _, out = _sweep(tmp_path, "n.spec")
    data = build_dataset(DatasetSpec(count=10, duration_s=0.09, test_count=2, test_duration_s=0.9, seed=0))
    items = [i for i in read_records(out / "items.csv") if i["method"] == "noisy-baseline"]
    for row in items:
        ex = data.test[int(row["item"])].at_snr(float(row["snr_a_db"]))
        rep = report(ex.clean, ex.noisy)
        assert float(row["si_sdr_db"]) == rep.si_sdr_db
        assert float(row["estoi"]) == rep.estoi


def test_sweep_missing_checkpoints_listed(tmp_path, capsys):
    code, out = _sweep(tmp_path, "m.spec", extra=("--no-train",))
    assert code == 1
    err = capsys.readouterr().err
    assert "separate-enhancer_3ms_s0" in err and "separate-transnet_3ms_R1_W10_s0" in err
    rows = read_records(out / "records.csv")
    assert {r["method"] for r in rows} == {"noisy-baseline"}


# -- verify ------------------------------------------------------------------------

def test_verify_passes(capsys):
    assert main(["verify"]) == 0
    text = capsys.readouterr().out
    assert text.count("PASS") == 5 and "5/5 checks passed" in text


def test_verify_detects_injected_causality_fault(capsys):
    assert main(["verify", "--only", "causality", "--inject-fault", "causal-padding"]) == 1
    text = capsys.readouterr().out
    assert "FAIL  causality" in text
    assert "transnet[3ms].enc_in" in text


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "jscclab.cli", "verify", "--only", "channel"],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert "PASS  channel" in proc.stdout
