"""Pipeline stages behind the CLI subcommands.

Output layout under ``config.output_dir``::

    sources/            source clips (synthetic or sliced external audio)
    render/             one WAV per (source, effect class)
    manifest.json
    embeddings/<id>/    meta.json + <clip_id>.f32
    results/            CSV and JSON tables
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fxprobe.audio_io import (
    CLIP_SAMPLES,
    CorpusManifest,
    ManifestEntry,
    assign_splits,
    read_wav,
    slice_clips,
    synth_corpus,
    write_wav,
)
from fxprobe.config import RunConfig
from fxprobe.effects import (
    CLASS_ORDER,
    MANIPULATIONS,
    EffectId,
    apply_effect,
    classification_specs,
    sweep_specs,
)
from fxprobe.encoders import (
    EmbeddingSequence,
    encode,
    external_meta,
    read_meta,
    read_sequence,
    write_meta,
    write_sequence,
)
from fxprobe.errors import DataError, FxProbeError
from fxprobe.loudness import normalize_loudness
from fxprobe.probe import (
    BinaryDataset,
    evaluate,
    format_count,
    mask_sweep,
    parameter_count,
    train_probe,
)
from fxprobe.represent import (
    FeatureMatrix,
    apply_norm,
    fit_norm,
    pca_fit,
    pca_transform,
    time_average,
    trajectory_metrics,
)
from fxprobe.rng import derive_rng

log = logging.getLogger("fxprobe")


class StageFailure(FxProbeError):
    """Some clips failed; the others were written."""

    def __init__(self, stage: str, failures: dict[str, str]):
        self.failures = failures
        lines = "\n".join(f"  {k}: {v}" for k, v in sorted(failures.items()))
        super().__init__(f"{stage}: {len(failures)} clip(s) failed\n{lines}")


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".10g")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _guard(fn, key, *args):
    try:
        return key, fn(*args), None
    except (FxProbeError, OSError, ValueError) as exc:
        return key, None, f"{type(exc).__name__}: {exc}"


# ------------------------------------------------------------------- render


def _paths(cfg: RunConfig) -> dict[str, Path]:
    out = cfg.output_dir
    return {"out": out, "sources": out / "sources", "render": out / "render",
            "manifest": out / "manifest.json", "results": out / "results",
            "embeddings": out / "embeddings" / cfg.encoder.encoder_id
            if cfg.encoder.kind != "external" else Path(cfg.encoder.directory)}


def _external_sources(cfg: RunConfig, dest: Path) -> CorpusManifest:
    src_dir = Path(cfg.corpus["input_dir"])
    files = sorted(p for p in src_dir.glob("*") if p.suffix.lower() == ".wav") if src_dir.is_dir() else []
    if not files:
        raise DataError(f"no WAV files in {src_dir}")
    dest.mkdir(parents=True, exist_ok=True)
    ids = []
    for f in files:
        for clip in slice_clips(read_wav(f), CLIP_SAMPLES):
            clip_id = f"x{len(ids):04d}"
            write_wav(clip, dest / f"{clip_id}.wav")
            ids.append(clip_id)
    if not ids:
        raise DataError(f"no input file in {src_dir} is long enough for a {CLIP_SAMPLES}-sample clip")
    splits = assign_splits([("external", ids)], cfg.seed)
    return CorpusManifest([ManifestEntry(c, f"{c}.wav", "external", "CLN", None, splits[c]) for c in ids],
                          cfg.seed)


def _render_source(task):
    source_path, out_dir, src_id, target = task
    clean = normalize_loudness(read_wav(source_path), target)
    done = []
    for spec in classification_specs():
        clip_id = f"{src_id}_{spec.id.value}"
        y = normalize_loudness(apply_effect(clean, spec), target)
        write_wav(y, Path(out_dir) / f"{clip_id}.wav")
        done.append((clip_id, spec))
    return done


def _render_task(task):
    return _guard(_render_source, task[2], task)


def cmd_render(cfg: RunConfig, jobs: int = 1) -> CorpusManifest:
    """Sources -> normalise -> ten effect classes -> normalise -> WAVs + manifest."""
    p = _paths(cfg)
    stamp = cfg.section_hash("seed", "corpus", "target_lufs")
    if p["manifest"].is_file():
        old = CorpusManifest.load(p["manifest"])
        if old.extra.get("config_hash") == stamp and all(
                (p["render"] / f"{e.clip_id}.wav").is_file() for e in old.entries):
            log.info("render: up to date, skipping")
            return old

    if cfg.corpus["mode"] == "synth":
        sources = synth_corpus(cfg.corpus["n_per_instrument"], cfg.seed, p["sources"])
    else:
        sources = _external_sources(cfg, p["sources"])
    p["render"].mkdir(parents=True, exist_ok=True)
    tasks = [(str(p["sources"] / e.source), str(p["render"]), e.clip_id, cfg.target_lufs)
             for e in sources.entries]
    results = _map(_render_task, tasks, jobs)

    entries, failures = [], {}
    by_id = {e.clip_id: e for e in sources.entries}
    for src_id, done, err in results:
        if err:
            failures[src_id] = err
            continue
        src = by_id[src_id]
        for clip_id, spec in done:
            entries.append(ManifestEntry(clip_id, f"../sources/{src.source}", src.instrument,
                                         spec.id.value, spec.key_value, src.split, spec.to_dict()))
    manifest = CorpusManifest(entries, cfg.seed, {"config_hash": stamp if not failures else "",
                                                  "target_lufs": cfg.target_lufs})
    manifest.validate(classification=True)
    manifest.save(p["manifest"])
    if failures:
        raise StageFailure("render", failures)
    return manifest


def load_manifest(cfg: RunConfig) -> CorpusManifest:
    path = _paths(cfg)["manifest"]
    if not path.is_file():
        raise DataError(f"{path} not found; run 'fxprobe render' first")
    return CorpusManifest.load(path)


# ------------------------------------------------------------------- encode


def _expected_frames(cfg: RunConfig) -> int:
    return CLIP_SAMPLES // cfg.encoder.hop


def _encode_one(task):
    wav, out_dir, clip_id, enc = task
    clip_path = Path(wav)
    if not clip_path.is_file():
        raise DataError(f"{clip_id}: missing WAV {clip_path}")
    write_sequence(out_dir, clip_id, encode(read_wav(clip_path), enc))


def _encode_task(task):
    return _guard(_encode_one, task[2], task)


def _valid_file(path: Path, meta: dict, frames: int | None) -> bool:
    try:
        seq = read_sequence(path, meta)
    except (FxProbeError, OSError):
        return False
    return frames is None or seq.frames == frames


def cmd_encode(cfg: RunConfig, jobs: int = 1) -> Path:
    """Embed every manifest clip; existing valid files are kept."""
    manifest = load_manifest(cfg)
    p = _paths(cfg)
    emb = p["embeddings"]
    if cfg.encoder.kind == "external":
        meta = read_meta(emb)
        bad = {}
        for e in manifest.entries:
            f = emb / f"{e.clip_id}.f32"
            if not f.is_file():
                bad[e.clip_id] = "missing embedding file"
            elif not _valid_file(f, meta, None):
                bad[e.clip_id] = "corrupt embedding file"
        if bad:
            raise StageFailure("encode", bad)
        return emb

    enc = cfg.encoder
    dims = enc.dims if enc.kind == "random_projection" else enc.n_mels
    meta = external_meta(dims, 48000 / enc.hop, enc.encoder_id)
    meta["config_hash"] = cfg.section_hash("encoder")
    stale = True
    if (emb / "meta.json").is_file():
        stale = json.loads((emb / "meta.json").read_text(encoding="utf-8")) != meta
    write_meta(emb, meta)

    frames = _expected_frames(cfg)
    tasks = []
    for e in manifest.entries:
        f = emb / f"{e.clip_id}.f32"
        if not stale and f.is_file():
            if _valid_file(f, meta, frames):
                continue
            log.warning("encode: %s is corrupt, re-encoding", f.name)
        tasks.append((str(p["render"] / f"{e.clip_id}.wav"), str(emb), e.clip_id, enc))
    failures = {k: err for k, _, err in _map(_encode_task, tasks, jobs) if err}
    if failures:
        raise StageFailure("encode", failures)
    return emb


def load_embeddings(cfg: RunConfig, manifest: CorpusManifest) -> list[tuple[str, EmbeddingSequence]]:
    emb = _paths(cfg)["embeddings"]
    meta = read_meta(emb)
    out = []
    for e in manifest.entries:
        f = emb / f"{e.clip_id}.f32"
        if not f.is_file():
            raise DataError(f"{e.clip_id}: no embedding in {emb}; run 'fxprobe encode' first")
        out.append((e.clip_id, read_sequence(f, meta)))
    return out


def feature_matrix(cfg: RunConfig, manifest: CorpusManifest, mode: str) -> FeatureMatrix:
    return FeatureMatrix.from_sequences(load_embeddings(cfg, manifest), mode)


# ------------------------------------------------------------------ project


def cmd_project(cfg: RunConfig, mode: str = "timeavg") -> Path:
    """Three-component PCA of all clips' features, written as CSV."""
    manifest = load_manifest(cfg)
    fm = feature_matrix(cfg, manifest, mode)
    rows = fm.rows
    if cfg.project_normalize:
        rows = apply_norm(fit_norm(rows), rows)
    model = pca_fit(rows, 3)
    scores = pca_transform(model, rows)
    out = _paths(cfg)["results"] / f"pca_projection_{mode}.csv"
    _write_csv(out, ["clip_id", "instrument", "effect", "param_value", "pc1", "pc2", "pc3"],
               [[e.clip_id, e.instrument, e.effect, _fmt(e.param_value), *map(float, s)]
                for e, s in zip(manifest.entries, scores)])
    return out


# -------------------------------------------------------------------- probe


@dataclass
class SplitData:
    x: dict[str, np.ndarray] = field(default_factory=dict)
    y: dict[str, np.ndarray] = field(default_factory=dict)


def split_features(manifest: CorpusManifest, rows: np.ndarray, labels: np.ndarray) -> SplitData:
    out = SplitData()
    splits = np.array([e.split for e in manifest.entries])
    for s in ("train", "val", "test"):
        out.x[s] = rows[splits == s]
        out.y[s] = labels[splits == s]
    return out


def run_probe(cfg: RunConfig, manifest: CorpusManifest, fm: FeatureMatrix, shuffle_labels: bool = False):
    labels = np.array([CLASS_ORDER.index(e.effect) for e in manifest.entries])
    if shuffle_labels:
        labels = derive_rng(cfg.seed, "label-shuffle").permutation(labels)
    data = split_features(manifest, fm.rows, labels)
    stats = fit_norm(data.x["train"])
    norm = {s: apply_norm(stats, data.x[s]) for s in data.x}
    model = train_probe(norm["train"], data.y["train"], norm["val"], data.y["val"], cfg.probe,
                        n_classes=len(CLASS_ORDER))
    report = evaluate(model, norm["test"], data.y["test"], CLASS_ORDER)
    return model, report


REPORT_HEADER = ["encoder", "dim", "probe", *CLASS_ORDER, "AVG", "AVG_overall"]


def cmd_probe(cfg: RunConfig, mode: str = "timeavg") -> Path:
    """10-way effect probe; writes a one-row Table-3-style CSV plus a JSON report."""
    manifest = load_manifest(cfg)
    fm = feature_matrix(cfg, manifest, mode)
    model, report = run_probe(cfg, manifest, fm)
    tag = {"timeavg": "T", "flatten": "F"}[mode]
    dim = fm.rows.shape[1]
    row = report.row()
    res = _paths(cfg)["results"]
    out = res / f"probe_{mode}.csv"
    _write_csv(out, REPORT_HEADER,
               [[f"{cfg.encoder.encoder_id}-{tag}", str(dim), format_count(parameter_count(dim, 10)),
                 *[float(row[c]) for c in REPORT_HEADER[3:]]]])
    _write_json(res / f"probe_{mode}.json", {
        "encoder": cfg.encoder.encoder_id, "mode": mode, "dim": dim,
        "parameter_count": model.parameter_count, "best_epoch": model.best_epoch,
        "epochs_run": len(model.history), "best_val_acc": model.best_val_acc,
        "report": report.to_dict()})
    return out


# --------------------------------------------------------------------- mask


def binary_datasets(manifest: CorpusManifest, rows: np.ndarray, normalize: bool = True):
    """Effect-vs-clean datasets per manipulation, each z-scored on its own train split.

    Returns ``(datasets, raw)`` where ``raw`` holds the un-normalised splits.
    """
    effects = np.array([e.effect for e in manifest.entries])
    datasets, raw = {}, {}
    for eff in MANIPULATIONS:
        keep = (effects == eff.value) | (effects == EffectId.CLN.value)
        sub = CorpusManifest([e for e, k in zip(manifest.entries, keep) if k], manifest.seed)
        labels = (effects[keep] == eff.value).astype(np.int64)
        d = split_features(sub, rows[keep], labels)
        parts = [d.x[s] for s in ("train", "val", "test")]
        raw[eff.value] = tuple(parts)
        if normalize:
            stats = fit_norm(parts[0])
            parts = [apply_norm(stats, x) for x in parts]
        datasets[eff.value] = BinaryDataset(parts[0], d.y["train"], parts[1], d.y["val"], parts[2], d.y["test"])
    return datasets, raw


def cmd_mask(cfg: RunConfig, mode: str = "timeavg", jobs: int = 1) -> Path:
    """Dimension-masking sweep over the nine manipulations; writes a heatmap-ready CSV."""
    manifest = load_manifest(cfg)
    fm = feature_matrix(cfg, manifest, mode)
    datasets, raw = binary_datasets(manifest, fm.rows)
    mm = mask_sweep(datasets, cfg.probe, jobs=jobs, raw=raw if cfg.mask_raw else None)
    res = _paths(cfg)["results"]
    out = res / "mask.csv"
    _write_csv(out, ["effect", "baseline_acc", *[f"d{i}" for i in range(mm.dims)]],
               [[e, float(mm.baseline_acc[e]), *map(float, mm.delta_pp[i])] for i, e in enumerate(mm.effects)])
    _write_json(res / "mask.json", {"effects": mm.effects, "baseline_acc": mm.baseline_acc,
                                    "delta_pp": mm.delta_pp.tolist(), "masked_acc": mm.masked_acc.tolist(),
                                    "mode": mode, "mask_raw": cfg.mask_raw})
    return out


# -------------------------------------------------------------------- sweep


def sweep_sources(manifest: CorpusManifest, per_instrument: int) -> list[tuple[str, str]]:
    """First ``per_instrument`` sources of each instrument, in manifest order."""
    seen, picked = set(), []
    counts: dict[str, int] = {}
    for e in manifest.entries:
        if e.source in seen:
            continue
        seen.add(e.source)
        if counts.get(e.instrument, 0) < per_instrument:
            counts[e.instrument] = counts.get(e.instrument, 0) + 1
            picked.append((e.source, e.instrument))
    return picked


def _sweep_source(task):
    source, sweeps, enc, target = task
    clean = normalize_loudness(read_wav(source), target)
    paths = []
    for sweep in sweeps:
        vecs = []
        for spec in sweep_specs(sweep):
            y = normalize_loudness(apply_effect(clean, spec), target)
            vecs.append(time_average(encode(y, enc)))
        paths.append(np.stack(vecs))
    return paths


def _sweep_task(task):
    return _guard(_sweep_source, task[0], task)


def cmd_sweep(cfg: RunConfig, jobs: int = 1) -> Path:
    """Render parameter sweeps, embed them and measure path straightness."""
    if cfg.encoder.kind == "external":
        raise DataError("parameter sweeps need an in-process encoder")
    manifest = load_manifest(cfg)
    p = _paths(cfg)
    pca = pca_fit(feature_matrix(cfg, manifest, "timeavg").rows, 3)
    picked = sweep_sources(manifest, cfg.sweep_clips_per_instrument)
    tasks = [(str((p["render"] / src).resolve()), cfg.sweep, cfg.encoder, cfg.target_lufs) for src, _ in picked]
    results = _map(_sweep_task, tasks, jobs)

    path_rows, reports, failures = [], [], {}
    straight: dict[str, list[float]] = {s.id.value: [] for s in cfg.sweep}
    for (src, inst), (_, paths, err) in zip(picked, results):
        name = Path(src).stem
        if err:
            failures[name] = err
            continue
        for sweep, vecs in zip(cfg.sweep, paths):
            rep = trajectory_metrics(vecs, pca)
            straight[sweep.id.value].append(rep.straightness)
            reports.append({"source": name, "instrument": inst, "effect": sweep.id.value, "param": sweep.param,
                            "arc_length": rep.arc_length, "chord_length": rep.chord_length,
                            "straightness": rep.straightness})
            for i, (v, pc) in enumerate(zip(sweep.values(), rep.pca3_path)):
                path_rows.append([name, inst, sweep.id.value, sweep.param, str(i), float(v), *map(float, pc)])

    res = p["results"]
    _write_csv(res / "sweep_paths.csv",
               ["source", "instrument", "effect", "param", "step", "value", "pc1", "pc2", "pc3"], path_rows)
    summary = []
    for sweep in cfg.sweep:
        s = np.array(straight[sweep.id.value])
        if s.size:
            summary.append([sweep.id.value, sweep.param, str(s.size), float(np.median(s)), float(s.mean()),
                            float(s.min()), float(s.max()), str(int(np.sum(s < 1.0)))])
    out = res / "sweep_summary.csv"
    _write_csv(out, ["effect", "param", "n_paths", "median_straightness", "mean_straightness",
                     "min_straightness", "max_straightness", "n_curved"], summary)
    _write_json(res / "sweep_reports.json", reports)
    if failures:
        raise StageFailure("sweep", failures)
    return out
