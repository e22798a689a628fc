import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from fewstep.cli import main
from fewstep.denoisers import init_params, load_checkpoint
from fewstep.geom import RngStream, Structure, format_structure
from fewstep.metrics import lddt

SMALL = """\
seed: 3
denoiser:
  n_blocks: 2
  width: 8
train:
  iterations: 12
  eval_every: 4
  lr: {lr}
  framework: {framework}
sampler:
  n_steps: 2
  n_seeds: 2
  n_samples: 2
sweep:
  etas: [1.0, 1.5]
  steps: [1, 2]
  n_seeds: 2
prune:
  ks: [1]
  seeds: [0, 1]
  iterations: 3
"""

ANALYTIC = """\
seed: 0
data:
  kind: gmm
  n_atoms: 5
  mixture_weights: [0.5, 0.5]
  mixture_means: [[4, 0, 0], [-4, 0, 0]]
denoiser:
  backend: gmm-analytic
sweep:
  modes: [ode]
  etas: [1.0, 1.5]
  steps: [1, 2, 10, 100]
  n_seeds: 3
"""


def _cfg(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _digests(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir()) if p.is_file()}


def _train(tmp_path, tag, lr="1.0e-5", framework="edm"):
    extra = "  parameterization: v-pred\n" if framework == "flow" else ""
    text = SMALL.format(lr=lr, framework=framework).replace("  width: 8\n", "  width: 8\n" + extra)
    out = tmp_path / tag
    assert main(["train", _cfg(tmp_path, f"{tag}.yaml", text), "--out", str(out)]) == 0
    return out


def test_train_writes_artifacts_deterministically(tmp_path):
    a, b = _train(tmp_path, "a"), _train(tmp_path, "b")
    names = {"checkpoint.bin", "train_curve.csv", "effective_config.yaml"} | {f"checkpoint_{i:06d}.bin" for i in (1, 2, 3)}
    assert set(_digests(a)) == names
    assert _digests(a) == _digests(b)
    assert len((a / "train_curve.csv").read_text().strip().split("\n")) == 13


def test_train_lr_zero_checkpoint_is_init(tmp_path):
    out = _train(tmp_path, "z", lr="0.0")
    params, spec = load_checkpoint(out / "checkpoint.bin")
    assert spec.n_blocks == 2 and params.equals(init_params(spec, 12 + 4, RngStream(3, 0)))


def test_flow_and_edm_checkpoints_differ(tmp_path):
    e, f = _train(tmp_path, "edm"), _train(tmp_path, "flow", framework="flow")
    pe, se = load_checkpoint(e / "checkpoint.bin")
    pf, sf = load_checkpoint(f / "checkpoint.bin")
    assert se.parameterization == "x-pred" and sf.parameterization == "v-pred"
    assert not pe.equals(pf)


def test_echo_reproduces_run(tmp_path):
    a = _train(tmp_path, "orig")
    b = tmp_path / "echoed"
    assert main(["train", str(a / "effective_config.yaml"), "--out", str(b)]) == 0
    assert _digests(a) == _digests(b)


def test_sample_and_prune_from_checkpoint(tmp_path):
    run = _train(tmp_path, "s")
    cfg = _cfg(tmp_path, "s2.yaml", SMALL.format(lr="1.0e-5", framework="edm"))
    ck = str(run / "checkpoint.bin")
    for tag in ("x", "y"):
        assert main(["sample", cfg, "--checkpoint", ck, "--out", str(tmp_path / f"samp_{tag}")]) == 0
    dx = _digests(tmp_path / "samp_x")
    assert dx == _digests(tmp_path / "samp_y")
    assert {"metrics.csv", "summary.json", "trajectory_000_000.jsonl", "sample_001_001.txt"} <= set(dx)
    summary = json.loads((tmp_path / "samp_x" / "summary.json").read_text())
    assert set(summary) == {"clash", "diversity"}
    assert main(["prune", cfg, "--checkpoint", ck, "--out", str(tmp_path / "pr")]) == 0
    rows = (tmp_path / "pr" / "prune.csv").read_text().strip().split("\n")
    assert rows[0] == "k,seed,baseline,zero_shot,finetuned" and len(rows) == 3


def test_sweep_analytic_grid(tmp_path):
    cfg = _cfg(tmp_path, "an.yaml", ANALYTIC)
    assert main(["sweep", cfg, "--out", str(tmp_path / "sw")]) == 0
    lines = (tmp_path / "sw" / "sweep.csv").read_text().strip().split("\n")
    assert lines[0] == "mode,eta,steps,n_seeds,mean,var,best,worst,spread" and len(lines) == 9
    for line in lines[1:]:
        assert all(np.isfinite(float(v)) for v in line.split(",")[4:])
    assert main(["sweep", cfg, "--workers", "2", "--out", str(tmp_path / "sw2")]) == 0
    assert _digests(tmp_path / "sw") == _digests(tmp_path / "sw2")


def test_sweep_missing_checkpoint(tmp_path):
    cfg = _cfg(tmp_path, "m.yaml", SMALL.format(lr="1.0e-5", framework="edm"))
    assert main(["sweep", cfg, "--out", str(tmp_path / "o")]) != 0
    assert main(["sweep", cfg, "--checkpoint", str(tmp_path / "nope.bin"), "--out", str(tmp_path / "o")]) == 3


def test_flops_outputs(tmp_path, capsys):
    assert main(["flops", "--preset", "mini", "--tokens", "384", "--msa", "2048", "--atoms", "8832"]) == 0
    out = capsys.readouterr().out.strip().split("\n")
    assert len(out) == 2 and out[1].startswith("mini,")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["flops", "--preset", "all", "--tokens", "256:768:128", "--out", str(p)]) == 0
    assert len(a.read_text().strip().split("\n")) == 16
    assert a.read_bytes() == b.read_bytes()


def test_flops_unknown_preset_lists_presets(capsys):
    assert main(["flops", "--preset", "huge"]) == 2
    err = capsys.readouterr().err
    assert "protenix" in err and "tiny" in err
    assert main(["flops", "--tokens", "5:1:1"]) == 2


def _write(tmp_path, name, s):
    p = tmp_path / name
    p.write_text(format_structure(s))
    return str(p)


def test_eval_reports(tmp_path, capsys):
    bonds = np.array([[0, 1]])
    s = Structure(np.array([[0.0, 0, 0], [3, 0, 0], [0, 4, 0]]), ["protein"] * 3, [0, 0, 0], bonds)
    t = _write(tmp_path, "t.txt", s)
    assert main(["eval", t, t]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["complex_lddt"] == 1.0 and "lig-prot" not in rep
    p = _write(tmp_path, "p.txt", s.with_coords(np.array([[0.0, 0, 0], [4.5, 0, 0], [0, 4, 0]])))
    assert main(["eval", p, t, "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["complex_lddt"] == pytest.approx(16 / 24)
    assert rep["complex_lddt"] == lddt(s.with_coords(np.array([[0.0, 0, 0], [4.5, 0, 0], [0, 4, 0]])), s)


def test_eval_parse_error_reports_offset(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 0 protein 0 0 0 1\n1 0 protein 1 2\n")
    good = tmp_path / "good.txt"
    good.write_text("0 0 protein 0 0 0 1\n1 0 protein 1 2 3 1\n")
    assert main(["eval", str(bad), str(good)]) == 3
    assert "byte offset 20" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main([]) == 2
    assert main(["bogus"]) == 2
    assert main(["train", str(tmp_path / "missing.yaml")]) == 2
    bad = _cfg(tmp_path, "bad.yaml", "train:\n  iterationz: 3\n")
    assert main(["train", bad]) == 2
    assert "bad.yaml:2:" in capsys.readouterr().err


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "fewstep.cli", "flops", "--preset", "tiny"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("model,n_tokens,")
