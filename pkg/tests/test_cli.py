import csv
import json

import numpy as np
import pytest

from fxprobe import pipeline
from fxprobe.audio_io import CorpusManifest
from fxprobe.cli import EXIT_FAILED, EXIT_INVALID, EXIT_OK, main
from fxprobe.config import SEED_ENV, load_config, parse_config
from fxprobe.effects import CLASS_ORDER
from fxprobe.errors import ValidationError

SMALL_SWEEP = [{"id": "HPF", "param": "cutoff_hz", "min": 50, "max": 10000, "steps": 4, "scale": "log"},
               {"id": "DIS", "param": "drive_db", "min": 0, "max": 30, "steps": 4}]


def small_doc(out, **extra):
    doc = {"seed": 3, "corpus": {"mode": "synth", "n_per_instrument": 4}, "output_dir": str(out),
           "sweep": SMALL_SWEEP, "sweep_clips_per_instrument": 1, "probe": {"max_epochs": 60, "patience": 20}}
    doc.update(extra)
    return doc


def write_cfg(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# ------------------------------------------------------------------- config


def test_defaults_filled():
    cfg = parse_config({"seed": 1, "corpus": {"mode": "synth", "n_per_instrument": 2}}, env={})
    assert cfg.target_lufs == -23.0
    assert cfg.probe.lr == 3e-4 and cfg.probe.batch_size == 32
    assert cfg.probe.max_epochs == 500 and cfg.probe.patience == 50
    assert cfg.probe.seed == 1
    assert [s.id.value for s in cfg.sweep] == ["DIS", "RVB", "HPF", "LPF"]
    assert cfg.encoder.encoder_id == "mel32"


@pytest.mark.parametrize("doc", [
    {"seed": 1, "corpus": {"mode": "synth", "n_per_instrument": 2}, "colour": "blue"},
    {"seed": 1, "corpus": {"mode": "synth", "n_per_instrument": 0}},
    {"seed": -1, "corpus": {"mode": "synth", "n_per_instrument": 2}},
    {"seed": 1, "corpus": {"mode": "external"}},
    {"seed": 1, "corpus": {"mode": "synth", "n_per_instrument": 2}, "probe": {"lr": 0}},
    {"seed": 1, "corpus": {"mode": "synth", "n_per_instrument": 2}, "encoder": {"kind": "external"}},
    {"corpus": {"mode": "synth", "n_per_instrument": 2}},
])
def test_invalid_configs(doc):
    with pytest.raises(ValidationError):
        parse_config(doc, env={})


def test_seed_environment_override():
    doc = {"seed": 1, "corpus": {"mode": "synth", "n_per_instrument": 2}}
    assert parse_config(doc, env={SEED_ENV: "42"}).seed == 42
    assert parse_config(doc, env={SEED_ENV: "42"}).probe.seed == 42
    with pytest.raises(ValidationError):
        parse_config(doc, env={SEED_ENV: "abc"})


def test_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ValidationError):
        load_config(p)


# ---------------------------------------------------------------- exit codes


def test_exit_invalid_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", {"seed": 1, "corpus": {"mode": "synth"}})
    assert main(["render", "--config", cfg]) == EXIT_INVALID
    assert "invalid input" in capsys.readouterr().err


def test_exit_failed_without_manifest(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", small_doc(tmp_path / "out"))
    assert main(["encode", "--config", cfg, "--jobs", "1"]) == EXIT_FAILED
    assert "render" in capsys.readouterr().err


def test_exit_failed_on_empty_external_input(tmp_path):
    (tmp_path / "in").mkdir()
    doc = small_doc(tmp_path / "out", corpus={"mode": "external", "input_dir": str(tmp_path / "in")})
    assert main(["render", "--config", write_cfg(tmp_path / "c.json", doc)]) == EXIT_FAILED


# ------------------------------------------------------------ pipeline smoke


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    cfg = write_cfg(root / "c.json", small_doc(root / "out"))
    codes = {}
    for cmd in (["render"], ["encode"], ["project"], ["probe"], ["probe", "--mode", "flatten"],
                ["mask"], ["sweep"]):
        codes[cmd[0] + ("-F" if len(cmd) > 1 else "")] = main([*cmd, "--config", cfg, "--jobs", "1"])
    return root, cfg, codes


def test_all_stages_succeed(small_run):
    _, _, codes = small_run
    assert all(c == EXIT_OK for c in codes.values()), codes


def test_manifest_contents(small_run):
    root, _, _ = small_run
    m = CorpusManifest.load(root / "out" / "manifest.json")
    assert len(m.entries) == 8 * 10
    assert sorted({e.effect for e in m.entries}) == sorted(CLASS_ORDER)
    m.validate(classification=True)
    assert CorpusManifest.from_json(m.to_json()) == m
    for e in m.entries:
        assert (root / "out" / "render" / f"{e.clip_id}.wav").is_file()


def test_result_tables(small_run):
    root, _, _ = small_run
    res = root / "out" / "results"
    (t,) = read_csv(res / "probe_timeavg.csv")
    assert t["encoder"] == "mel32-T" and t["dim"] == "32" and t["probe"] == "0.3 k"
    (f,) = read_csv(res / "probe_flatten.csv")
    assert f["dim"] == "16384" and f["probe"] == "163.9 k"
    assert list(t)[3:] == [*CLASS_ORDER, "AVG", "AVG_overall"]
    mask = read_csv(res / "mask.csv")
    assert [r["effect"] for r in mask] == [c for c in CLASS_ORDER if c != "CLN"]
    assert len(mask[0]) == 2 + 32
    proj = read_csv(res / "pca_projection_timeavg.csv")
    assert len(proj) == 80 and {"pc1", "pc2", "pc3"} <= set(proj[0])
    summary = read_csv(res / "sweep_summary.csv")
    assert [r["effect"] for r in summary] == ["HPF", "DIS"]
    assert all(r["n_paths"] == "2" for r in summary)
    paths = read_csv(res / "sweep_paths.csv")
    assert len(paths) == 2 * 2 * 4


def test_encode_is_resumable_and_repairs_corruption(small_run):
    root, cfg, _ = small_run
    emb = root / "out" / "embeddings" / "mel32"
    files = sorted(emb.glob("*.f32"))
    good = files[0].read_bytes()
    files[0].write_bytes(good[:100])
    stamp = files[1].stat().st_mtime_ns
    assert main(["encode", "--config", cfg, "--jobs", "1"]) == EXIT_OK
    assert files[0].read_bytes() == good
    assert files[1].stat().st_mtime_ns == stamp


def test_external_encoder_validation(small_run, tmp_path):
    root, _, _ = small_run
    emb = root / "out" / "embeddings" / "mel32"
    doc = small_doc(root / "out", encoder={"kind": "external", "directory": str(emb)})
    cfg = write_cfg(tmp_path / "ext.json", doc)
    assert main(["encode", "--config", cfg]) == EXIT_OK
    victim = sorted(emb.glob("*.f32"))[3]
    saved = victim.read_bytes()
    victim.write_bytes(saved[:-4])
    try:
        assert main(["encode", "--config", cfg]) == EXIT_FAILED
    finally:
        victim.write_bytes(saved)


def test_render_skips_when_up_to_date(small_run):
    root, cfg, _ = small_run
    wav = root / "out" / "render" / "g0000_CLN.wav"
    stamp = wav.stat().st_mtime_ns
    assert main(["render", "--config", cfg]) == EXIT_OK
    assert wav.stat().st_mtime_ns == stamp


def test_binary_datasets_are_balanced(small_run):
    root, cfg, _ = small_run
    rc = load_config(cfg)
    m = pipeline.load_manifest(rc)
    rows = pipeline.feature_matrix(rc, m, "timeavg").rows
    datasets, raw = pipeline.binary_datasets(m, rows)
    assert len(datasets) == 9
    d = datasets["LPF"]
    assert d.y_train.mean() == 0.5
    np.testing.assert_allclose(d.x_train.mean(axis=0), 0, atol=1e-9)
    assert raw["LPF"][0].shape == d.x_train.shape
