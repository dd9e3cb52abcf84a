import numpy as np
import pytest

from pcsep import cli, dsp
from pcsep.gradsuite import GradResult
from pcsep.metrics import si_sdr
from pcsep.wavio import read_wav

TINY = ["--batch-size", "1", "--K", "4", "--vision-channels", "2", "--unet-channels", "2",
        "--unet-levels", "3", "--val-items", "1", "--lr-rest", "0.01", "--lr-vision", "0.001"]


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["make-synthetic", "--out", str(root / "syn"), "--identities", "6",
                     "--seconds", "7"]) == 0
    return root, str(root / "syn" / "manifest.csv")


@pytest.fixture(scope="module")
def trained(synth):
    root, manifest = synth
    depth, label = root / "depth", root / "label"
    assert cli.main(["train", "--manifest", manifest, "--out", str(depth), "--iterations", "2",
                     "--val-every", "2", *TINY]) == 0
    assert cli.main(["train", "--manifest", manifest, "--out", str(label), "--iterations", "2",
                     "--conditioning", "label", *TINY]) == 0
    return depth / "last.ckpt", label / "last.ckpt"


def test_help_and_usage_errors(capsys):
    assert cli.main(["--help"]) == 0
    assert cli.main(["train"]) == 2
    assert cli.main(["no-such-command"]) == 2


def test_config_error_exit_code(synth, tmp_path):
    _, manifest = synth
    assert cli.main(["train", "--manifest", manifest, "--out", str(tmp_path), "--momentum", "1.5"]) == 2
    bad = tmp_path / "c.json"
    bad.write_text('{"not_a_field": 1}')
    assert cli.main(["train", "--manifest", manifest, "--out", str(tmp_path), "--config", str(bad)]) == 2


def test_data_error_exit_code(tmp_path):
    assert cli.main(["train", "--manifest", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 3
    ply = tmp_path / "bad.ply"
    ply.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n")
    assert cli.main(["voxel-stats", str(ply)]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_abort_exit_code(synth, tmp_path):
    _, manifest = synth
    rc = cli.main(["train", "--manifest", manifest, "--out", str(tmp_path), "--iterations", "3",
                   *TINY, "--lr-rest", "1e300"])
    assert rc == 4
    assert (tmp_path / "last.ckpt").exists()


def test_gradcheck_command(capsys, monkeypatch):
    assert cli.main(["gradcheck", "--ops-only"]) == 0
    out = capsys.readouterr().out
    assert "conv2d[s2p1]" in out and "FAIL" not in out
    monkeypatch.setattr("pcsep.gradsuite.run_suite", lambda **kw: [GradResult("x", 1.0, 1e-4)])
    assert cli.main(["gradcheck"]) == 4


def test_voxel_stats(synth, capsys):
    root, _ = synth
    assert cli.main(["voxel-stats", str(root / "syn" / "video" / "cello00"), "--voxel-size", "0.1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("file\tpoints\tvoxels")
    assert len(lines) == 1 + 6


def test_train_resume_extends_curve(synth, trained, tmp_path):
    _, manifest = synth
    depth, _ = trained
    out = depth.parent
    assert cli.main(["train", "--manifest", manifest, "--out", str(out), "--resume", str(depth),
                     "--iterations", "3"]) == 0
    assert len(np.loadtxt(out / "loss.txt")) == 3
    assert (out / "loss.png").stat().st_size > 0


def test_evaluate_writes_reports(synth, trained, tmp_path, capsys):
    _, manifest = synth
    depth, label = trained
    assert cli.main(["evaluate", "--manifest", manifest, "--checkpoint", str(depth), "--checkpoint",
                     str(label), "--count", "1", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split("\t") == ["item_id", "instrument", "N", "method", "sdr", "sir", "sar", "si_sdr"]
    assert {ln.split("\t")[3] for ln in out[1:]} >= {"depth", "label", "ibm", "ones"}
    assert {p.name for p in tmp_path.iterdir()} >= {"metrics.tsv", "metrics.json", "metrics.png"}
    assert cli.main(["evaluate", "--manifest", manifest, "--methods", "depth", "--out", str(tmp_path)]) == 2
    assert cli.main(["evaluate", "--manifest", manifest, "--checkpoint", str(tmp_path / "x.ckpt"),
                     "--out", str(tmp_path)]) == 2


def test_separate_ones_returns_mixture(synth, tmp_path):
    root, _ = synth
    wav = root / "syn" / "audio" / "cello00.wav"
    assert cli.main(["separate", "--mixture", str(wav), "--ones", "--out", str(tmp_path)]) == 0
    x = read_wav(wav).samples
    y = read_wav(tmp_path / "separated.wav").samples
    assert len(y) == len(x)
    # one 16-bit quantisation step per sample
    assert np.abs(y - x).max() <= 1.5 / 32768
    head = (tmp_path / "mask.pgm").read_bytes()[:20]
    assert head.startswith(b"P5\n512 256\n255\n")


def test_separate_with_checkpoints(synth, trained, tmp_path):
    root, _ = synth
    depth, label = trained
    wav = str(root / "syn" / "audio" / "violin00.wav")
    frames = str(root / "syn" / "video" / "violin00")
    assert cli.main(["separate", "--mixture", wav, "--checkpoint", str(label), "--label", "guitar",
                     "--out", str(tmp_path / "l")]) == 0
    assert (tmp_path / "l" / "separated.wav").exists()
    assert cli.main(["separate", "--mixture", wav, "--checkpoint", str(depth), "--frames", frames,
                     "--out", str(tmp_path / "d")]) == 0
    assert cli.main(["separate", "--mixture", wav, "--checkpoint", str(depth),
                     "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["separate", "--mixture", wav, "--checkpoint", str(depth), "--frames",
                     str(tmp_path / "missing"), "--out", str(tmp_path / "x")]) == 3


def test_separate_rejects_malformed_wav(tmp_path):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"RIFX" + b"\0" * 40)
    assert cli.main(["separate", "--mixture", str(bad), "--ones", "--out", str(tmp_path)]) == 3


def test_oracle_ibm_disjoint_bands(tmp_path, capsys):
    from pcsep.wavio import write_wav

    t = np.arange(dsp.SNIPPET_LENGTH) / dsp.SAMPLE_RATE
    low, high = 0.3 * np.sin(2 * np.pi * 220 * t), 0.3 * np.sin(2 * np.pi * 3300 * t)
    write_wav(tmp_path / "a.wav", low, dsp.SAMPLE_RATE)
    write_wav(tmp_path / "b.wav", high, dsp.SAMPLE_RATE)
    assert cli.main(["oracle-ibm", str(tmp_path / "a.wav"), str(tmp_path / "b.wav"),
                     "--out", str(tmp_path / "o")]) == 0
    rows = [ln.split("\t") for ln in capsys.readouterr().out.strip().splitlines()[1:]]
    assert all(float(r[1]) > 20 for r in rows)
    est = read_wav(tmp_path / "o" / "source0.wav").samples
    assert si_sdr(low, est) > 20
