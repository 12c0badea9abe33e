"""Stage runner: synth -> ingest -> embed -> train-predictor -> label ->
train-gan -> generate -> evaluate -> report.

Every stage writes only inside its own directory under the output root and
records its inputs, outputs (content hashes), seed and timing in
``manifest.json``. A stage whose fingerprint (config section, seed, mode and
upstream output hashes) matches the manifest and whose outputs are intact is
skipped. ``synth``, ``ingest`` and ``embed`` are shared by all modes; the
later stages live under ``<out>/<mode>/`` so the three modes can share one
output root.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import shutil
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .config import load_config
from .data import (Source, load_image, read_choice_records, read_label_set, read_templates, save_image,
                   write_choice_records, write_label_set, write_templates)
from .embeddings import EmbedderSpec, average_consumer_embedding, load_embeddings, save_embeddings
from .evaluation import compare_choice_probs, distance_metric, emit_histograms, select_top_bottom
from .exceptions import ConfigError, DataIntegrityError, DependencyError, EmptyDatasetError
from .gan import CcGAN, DCGAN
from .gan.estimators import _BaseGAN
from .ingest import (build_choice_records, external_positive, read_external_photos, read_order_log,
                     simulate_external_rank, split_external_photo, theme_pages, write_external_photo,
                     write_order_log)
from .labeling import PopularityLabeler, write_label_summary
from .predictor import (ChoicePredictor, aggregate_popularity_many, build_feature_matrix, evaluate_predictor,
                        load_predictor, save_predictor, write_metrics_report)
from .data import split_train_test
from .synth import (WorldParams, decode_design, generate_external, generate_world, load_world,
                    oracle_popularity, sample_order_events, save_world)

log = logging.getLogger(__name__)

STAGES = ("synth", "ingest", "embed", "train-predictor", "label", "train-gan", "generate", "evaluate", "report")
SHARED_STAGES = ("synth", "ingest", "embed")
PREDICTOR_STAGES = ("train-predictor", "label")
MANIFEST = "manifest.json"


def stage_seed(master_seed: int, stage: str) -> int:
    """Per-stage seed derived from the master seed by a stable hash of the stage name."""
    digest = hashlib.sha256(f"{int(master_seed)}/{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "big") % (2**31 - 1)


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_hashes(root) -> dict[str, str]:
    root = Path(root)
    return {p.relative_to(root).as_posix(): file_hash(p) for p in sorted(root.rglob("*")) if p.is_file()}


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def stages_for_mode(mode: str) -> tuple[str, ...]:
    """Stages run by ``run-all``; the DCGAN baseline needs no predictor or labels."""
    if mode == "baseline":
        return tuple(s for s in STAGES if s not in PREDICTOR_STAGES)
    return STAGES


@dataclass
class Context:
    pipeline: "Pipeline"
    stage: str
    seed: int
    params: dict[str, Any]
    dir: Path

    def path(self, stage: str) -> Path:
        return self.pipeline.stage_dir(stage)

    @property
    def mode(self) -> str:
        return self.pipeline.mode

    @property
    def cfg(self):
        return self.pipeline.cfg


class Pipeline:
    """One output root driven by one validated configuration."""

    def __init__(self, cfg: dict, out, seed: int | None = None):
        self.cfg = cfg
        self.out = Path(out)
        self.master_seed = int(cfg["run"]["seed"] if seed is None else seed)
        self.mode = cfg["run"]["mode"]

    @classmethod
    def from_files(cls, config_path, out=None, seed=None) -> "Pipeline":
        out = out or os.environ.get("PREFGEN_OUT") or "prefgen-out"
        return cls(load_config(config_path), out, seed)

    # ------------------------------------------------------------ layout

    def key(self, stage: str) -> str:
        return stage if stage in SHARED_STAGES else f"{self.mode}/{stage}"

    def stage_dir(self, stage: str) -> Path:
        return self.out / self.key(stage)

    def dependencies(self, stage: str) -> tuple[str, ...]:
        if stage == "ingest":
            return () if self.cfg["ingest"]["input_dir"] else ("synth",)
        if stage == "train-gan":
            return ("ingest",) if self.mode == "baseline" else ("ingest", "label")
        if stage == "evaluate":
            deps = ("ingest", "embed", "generate")
            return deps if self.mode == "baseline" else deps + ("train-predictor",)
        return {"synth": (), "embed": ("ingest",), "train-predictor": ("ingest", "embed"),
                "label": ("ingest", "embed", "train-predictor"), "generate": ("train-gan",),
                "report": ("evaluate",)}[stage]

    # ------------------------------------------------------------ manifest

    def load_manifest(self) -> dict:
        path = self.out / MANIFEST
        if path.exists():
            return json.loads(path.read_text())
        return {"version": __version__, "stages": {}}

    def _save_manifest(self, manifest: dict):
        self.out.mkdir(parents=True, exist_ok=True)
        tmp = self.out / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        os.replace(tmp, self.out / MANIFEST)

    def _intact(self, entry: dict, stage: str) -> bool:
        root = self.stage_dir(stage)
        return root.is_dir() and tree_hashes(root) == entry["outputs"]

    def _upstream(self, stage: str, manifest: dict) -> dict:
        upstream = {}
        if stage == "ingest" and self.cfg["ingest"]["input_dir"]:
            src = Path(self.cfg["ingest"]["input_dir"])
            if not src.is_dir():
                raise ConfigError(f"[ingest] input_dir {src} is not a directory")
            upstream["input_dir"] = tree_hashes(src)
        for dep in self.dependencies(stage):
            entry = manifest["stages"].get(self.key(dep))
            if entry is None or not self._intact(entry, dep):
                raise DependencyError(stage, dep)
            upstream[self.key(dep)] = entry["outputs"]
        if stage == "report":
            for mode in ("baseline", "enhanced", "advanced"):
                entry = manifest["stages"].get(f"{mode}/evaluate")
                if entry is not None:
                    upstream[f"{mode}/evaluate"] = entry["outputs"]
        return upstream

    # ------------------------------------------------------------ running

    def run_stage(self, stage: str, force: bool = False) -> bool:
        """Run one stage; returns ``False`` when it was skipped as up to date."""
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}")
        if stage in PREDICTOR_STAGES and self.mode == "baseline":
            raise ConfigError(f"stage {stage!r} is not part of the baseline mode")
        manifest = self.load_manifest()
        seed = stage_seed(self.master_seed, stage)
        params = self.cfg[stage]
        upstream = self._upstream(stage, manifest)
        fingerprint = _digest({"stage": stage, "mode": None if stage in SHARED_STAGES else self.mode,
                               "params": params, "seed": seed, "upstream": upstream})
        key = self.key(stage)
        entry = manifest["stages"].get(key)
        if not force and entry and entry["fingerprint"] == fingerprint and self._intact(entry, stage):
            log.info("%s: up to date", key)
            return False
        out_dir = self.stage_dir(stage)
        if out_dir.exists():
            shutil.rmtree(out_dir)
        out_dir.mkdir(parents=True)
        log.info("%s: running (seed %d)", key, seed)
        t0 = time.time()
        STAGE_FUNCS[stage](Context(self, stage, seed, params, out_dir))
        manifest = self.load_manifest()
        manifest["master_seed"] = self.master_seed
        manifest["stages"][key] = {
            "fingerprint": fingerprint,
            "config": params,
            "seed": seed,
            "inputs": sorted(upstream),
            "outputs": tree_hashes(out_dir),
            "seconds": round(time.time() - t0, 3),
        }
        manifest["run_id"] = _digest({"seed": self.master_seed, "config": self.cfg})[:16]
        self._save_manifest(manifest)
        return True

    def run_all_stages(self) -> tuple[str, ...]:
        skip_synth = bool(self.cfg["ingest"]["input_dir"])
        return tuple(s for s in stages_for_mode(self.mode) if not (s == "synth" and skip_synth))

    def run_all(self, force: bool = False) -> dict:
        for stage in self.run_all_stages():
            self.run_stage(stage, force=force)
        return self.load_manifest()


# ====================================================================== stages

def _subseeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def run_synth(ctx: Context):
    p = ctx.params
    s_world, s_orders, s_faces, s_external = _subseeds(ctx.seed, 4)
    world = generate_world(p["latent_dim"], p["n_consumers"], p["n_templates"],
                           WorldParams(p["alpha"], p["beta"], p["gamma"]), seed=s_world,
                           n_themes=p["n_themes"], image_size=p["image_size"])
    save_world(ctx.dir / "world.npz", world)
    write_templates(ctx.dir / "templates", world.templates())
    write_order_log(ctx.dir / "orders.csv", sample_order_events(world, s_orders))
    faces_dir = ctx.dir / "faces"
    faces_dir.mkdir()
    for cid, photos in world.face_photos(p["face_photos"], p["face_size"], p["face_noise"], s_faces).items():
        for k, img in enumerate(photos):
            save_image(faces_dir / f"{cid}_{k}.png", img)
    if p["n_external_templates"] > 0 and p["n_external_photos"] > 0:
        ext = generate_external(world, p["n_external_templates"], p["n_external_photos"], p["external_spread"],
                                p["external_face_size"], s_external)
        for photo in ext.photos:
            write_external_photo(ctx.dir / "external", photo)
        np.savez(ctx.dir / "external_truth.npz", template_ids=np.array(ext.template_ids), styles=ext.styles,
                 photo_ids=np.array([ph.photo_id for ph in ext.photos]),
                 photo_template_ids=np.array(ext.photo_template_ids))


def _ingest_source(ctx: Context) -> Path:
    return Path(ctx.params["input_dir"]) if ctx.params["input_dir"] else ctx.path("synth")


def run_ingest(ctx: Context):
    src = _ingest_source(ctx)
    internal = read_templates(src / "templates")
    pages = theme_pages(internal)
    records = build_choice_records(read_order_log(src / "orders.csv", pages))
    if not records:
        raise EmptyDatasetError("order log produced no choice records")
    consumers = {r.consumer_id: Source.INTERNAL for r in records}
    faces_dir = ctx.dir / "faces"
    faces_dir.mkdir()
    for face in sorted((src / "faces").glob("*.png")):
        shutil.copyfile(face, faces_dir / face.name)
    templates = list(internal)
    ranks = {t.template_id: (t.display_rank, 0) for t in internal}
    photos = read_external_photos(src / "external") if (src / "external").is_dir() else []
    simulated = simulate_external_rank([t.display_rank for t in internal], len(photos), ctx.seed)
    for photo, rank in zip(photos, simulated):
        template, face = split_external_photo(photo)
        consumer = f"ext-{photo.photo_id}"
        consumers[consumer] = Source.EXTERNAL
        records.append(external_positive(consumer, template.template_id))
        templates.append(template)
        ranks[template.template_id] = (rank, 1)
        save_image(faces_dir / f"{consumer}_0.png", face)
    write_choice_records(ctx.dir / "records.csv", records)
    write_templates(ctx.dir / "templates", templates)
    with open(ctx.dir / "ranks.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["template_id", "display_rank", "simulated"])
        writer.writerows([tid, r, s] for tid, (r, s) in ranks.items())
    with open(ctx.dir / "consumers.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["consumer_id", "source"])
        writer.writerows([cid, src_.value] for cid, src_ in consumers.items())


def _read_ranks(ingest_dir: Path) -> dict[str, int]:
    with open(ingest_dir / "ranks.csv", newline="", encoding="utf-8") as fh:
        return {r["template_id"]: int(r["display_rank"]) for r in csv.DictReader(fh)}


def _read_consumers(ingest_dir: Path) -> dict[str, Source]:
    with open(ingest_dir / "consumers.csv", newline="", encoding="utf-8") as fh:
        return {r["consumer_id"]: Source(r["source"]) for r in csv.DictReader(fh)}


def _embedders(cfg):
    return (EmbedderSpec("face", cfg["embed"]["face_dim"]).build(),
            EmbedderSpec("design", cfg["embed"]["design_dim"]).build())


def run_embed(ctx: Context):
    ingest_dir = ctx.path("ingest")
    face_embedder, design_embedder = _embedders(ctx.cfg)
    photos = defaultdict(list)
    for path in sorted((ingest_dir / "faces").glob("*.png")):
        photos[path.stem.rsplit("_", 1)[0]].append(load_image(path))
    known = _read_consumers(ingest_dir)
    missing = sorted(set(known) - set(photos))
    if missing:
        raise DataIntegrityError(f"no face photo for consumer {missing[0]!r} ({len(missing)} missing)")
    faces = {cid: average_consumer_embedding(face_embedder.transform(photos[cid])) for cid in known}
    save_embeddings(ctx.dir / "consumers.csv", faces)
    templates = read_templates(ingest_dir / "templates")
    vectors = design_embedder.transform([t.image for t in templates])
    save_embeddings(ctx.dir / "designs.csv", {t.template_id: v for t, v in zip(templates, vectors)})


def _load_embeddings(ctx: Context):
    embed_dir = ctx.path("embed")
    return (load_embeddings(embed_dir / "consumers.csv", ctx.cfg["embed"]["face_dim"]),
            load_embeddings(embed_dir / "designs.csv", ctx.cfg["embed"]["design_dim"]))


def run_train_predictor(ctx: Context):
    p = ctx.params
    ingest_dir = ctx.path("ingest")
    sources = _read_consumers(ingest_dir)
    records = read_choice_records(ingest_dir / "records.csv")
    internal = [r for r in records if sources[r.consumer_id] is Source.INTERNAL]
    external = [r for r in records if sources[r.consumer_id] is Source.EXTERNAL]
    train, test = split_train_test(internal, p["test_fraction"], ctx.seed)
    provenance = "internal"
    if ctx.mode == "advanced" and external:
        train = list(train) + external
        provenance = "internal+external"
    faces, designs = _load_embeddings(ctx)
    ranks = _read_ranks(ingest_dir)
    X_train, y_train = build_feature_matrix(train, faces, designs, ranks)
    X_test, y_test = build_feature_matrix(test, faces, designs, ranks)
    target = p["upsample_target"]
    if target == "balance":
        target = int(max(np.sum(y_train == 1), np.sum(y_train == 0)))
    model = ChoicePredictor(n_trees=p["n_trees"], class_weighting=p["class_weighting"], seed=ctx.seed,
                            upsample_target=target, provenance=provenance).fit(X_train, y_train)
    save_predictor(model, ctx.dir / "model.joblib", face_dim=ctx.cfg["embed"]["face_dim"])
    metrics = evaluate_predictor(model, X_test, y_test)
    write_metrics_report(ctx.dir / "metrics.csv", {f"predictor ({provenance})": metrics})
    with open(ctx.dir / "split.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["part", "rows", "positives"])
        writer.writerow(["train", len(y_train), int(y_train.sum())])
        writer.writerow(["test", len(y_test), int(y_test.sum())])


def _internal_faces(ctx: Context, faces: dict[str, np.ndarray]) -> np.ndarray:
    sources = _read_consumers(ctx.path("ingest"))
    return np.array([v for cid, v in faces.items() if sources.get(cid) is Source.INTERNAL])


def auto_score_range(scores, n_labels: int):
    """``(lo, hi, width)`` spanning the central 90% of the scores with ``n_labels`` grid values."""
    lo, hi = (round(float(q), 4) for q in np.quantile(np.asarray(scores, dtype=float), [0.05, 0.95]))
    if not hi > lo:
        raise EmptyDatasetError("popularity scores are constant; cannot build labels")
    if n_labels < 2:
        raise ConfigError("[label] n_labels must be at least 2")
    return max(lo, 1e-4), min(hi, 1.0), (min(hi, 1.0) - max(lo, 1e-4)) / (n_labels - 1)


def run_label(ctx: Context):
    p = ctx.params
    ingest_dir = ctx.path("ingest")
    predictor = load_predictor(ctx.path("train-predictor") / "model.joblib")
    faces, designs = _load_embeddings(ctx)
    ranks = _read_ranks(ingest_dir)
    ids = list(designs)
    scores = aggregate_popularity_many(predictor, np.array([designs[t] for t in ids]),
                                       [ranks[t] for t in ids], _internal_faces(ctx, faces))
    with open(ctx.dir / "popularity.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["template_id", "aggregate_popularity"])
        writer.writerows([t, repr(float(s))] for t, s in zip(ids, scores))
    if p["score_range"] == "auto":
        lo, hi, width = auto_score_range(scores, p["n_labels"])
    else:
        (lo, hi), width = p["score_range"], p["bin_width"]
    labeler = PopularityLabeler(score_range=(lo, hi), bin_width=width, per_label_cap=p["per_label_cap"],
                                min_per_label_replication=p["min_per_label_replication"], seed=ctx.seed)
    labels = labeler.fit_transform(dict(zip(ids, scores.tolist())))
    write_label_set(ctx.dir / "labels.csv", labels)
    write_label_summary(ctx.dir / "summary.csv", labeler.summary_)
    emit_histograms({"aggregate popularity": scores}, bins=20, out_dir=ctx.dir, name="popularity_hist",
                    title="Aggregate popularity of training designs")


def _gan_kwargs(p: dict) -> dict:
    kwargs = {"iterations": p["iterations"], "feature_map_base": p["feature_map_base"],
              "batch_size": p["batch_size"], "learning_rate": p["learning_rate"],
              "augment_policy": p["augment_policy"]}
    if p["latent_dim"] is not None:
        kwargs["latent_dim"] = p["latent_dim"]
    if p["d_steps_per_iter"] is not None:
        kwargs["d_steps_per_iter"] = p["d_steps_per_iter"]
    return kwargs


def run_train_gan(ctx: Context):
    p = ctx.params
    templates = {t.template_id: t.image for t in read_templates(ctx.path("ingest") / "templates")}
    if ctx.mode == "baseline":
        model = DCGAN(seed=ctx.seed, **_gan_kwargs(p)).fit(np.array(list(templates.values())))
    else:
        labels = read_label_set(ctx.path("label") / "labels.csv")
        images = np.array([templates[t] for t in labels.template_ids])
        model = CcGAN(seed=ctx.seed, vicinal=p["vicinal"], sigma=p["sigma"], kappa=p["kappa"],
                      kappa_factor=p["kappa_factor"], **_gan_kwargs(p)).fit(images, labels.normalized_labels)
    model.save(ctx.dir / "generator.pt")
    with open(ctx.dir / "losses.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss_d", "loss_g"])
        writer.writerows([it + 1, f"{d:.6f}", f"{g:.6f}"] for it, d, g in model.history_)


def run_generate(ctx: Context):
    p = ctx.params
    model = _BaseGAN.load(ctx.path("train-gan") / "generator.pt")
    label = None
    if model.conditional:
        lo, hi = model.label_range_
        label = {"top": hi, "bottom": lo}.get(p["label"], p["label"])
    elif p["label"] not in ("top", "bottom"):
        raise ConfigError("[generate] label applies to conditional generators only")
    images = model.sample(p["n_images"], label, seed=ctx.seed)
    out = ctx.dir / "images"
    out.mkdir()
    for k, img in enumerate(images):
        save_image(out / f"gen_{k:05d}.png", img)
    (ctx.dir / "label.txt").write_text("none\n" if label is None else f"{label!r}\n")


def _load_images(directory: Path) -> np.ndarray:
    return np.array([load_image(p) for p in sorted(directory.glob("*.png"))])


def generated_styles(images, latent_dim: int) -> np.ndarray:
    """Decoded ``(s0, s1)`` padded with zeros for the undecoded style dimensions."""
    decoded = decode_design(images)
    return np.hstack([decoded, np.zeros((decoded.shape[0], latent_dim - decoded.shape[1]))])


def run_evaluate(ctx: Context):
    p = ctx.params
    ingest_dir = ctx.path("ingest")
    generated = _load_images(ctx.path("generate") / "images")
    templates = read_templates(ingest_dir / "templates")
    internal = [t for t in templates if t.source is Source.INTERNAL]
    external = [t for t in templates if t.source is Source.EXTERNAL]
    summary: dict[str, Any] = {"mode": ctx.mode, "n_generated": int(len(generated))}

    synth_dir = ctx.path("synth")
    if not ctx.cfg["ingest"]["input_dir"] and (synth_dir / "world.npz").exists():
        world = load_world(synth_dir / "world.npz")
        rank = float(np.median(world.ranks))
        sets = {"generated": oracle_popularity(world, generated_styles(generated, world.latent_dim), rank),
                "internal": oracle_popularity(world, world.styles, rank)}
        if (synth_dir / "external_truth.npz").exists():
            with np.load(synth_dir / "external_truth.npz") as z:
                sets["external"] = oracle_popularity(world, z["styles"], rank)
        with open(ctx.dir / "oracle.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_set", "mean_oracle_popularity", "median_oracle_popularity", "n"])
            for name, v in sets.items():
                writer.writerow([name, repr(float(v.mean())), repr(float(np.median(v))), v.size])
        np.savetxt(ctx.dir / "oracle_generated.csv", sets["generated"], fmt="%.10g")
        emit_histograms(sets, bins=p["histogram_bins"], out_dir=ctx.dir, name="oracle_hist",
                        title="Oracle popularity")
        summary["oracle_mean"] = {k: float(v.mean()) for k, v in sets.items()}

    _, design_embedder = _embedders(ctx.cfg)
    if ctx.mode != "baseline":
        predictor = load_predictor(ctx.path("train-predictor") / "model.joblib")
        faces = load_embeddings(ctx.path("embed") / "consumers.csv", ctx.cfg["embed"]["face_dim"])
        image_sets = {"internal": [t.image for t in internal], "generated": list(generated)}
        if external:
            image_sets["external"] = [t.image for t in external]
        report = compare_choice_probs(predictor, image_sets, _internal_faces(ctx, faces),
                                      [t.display_rank for t in internal], design_embedder, "internal", ctx.seed)
        report.write(ctx.dir / "choice_probs.csv")
        emit_histograms(report.per_image, bins=p["histogram_bins"], out_dir=ctx.dir, name="choice_prob_hist",
                        title="Predicted choice probability")
        summary["choice_prob_mean"] = report.means

    adoption = {t.template_id: 0 for t in internal}
    for r in read_choice_records(ingest_dir / "records.csv"):
        if r.outcome == 1 and r.template_id in adoption:
            adoption[r.template_id] += 1
    top, bottom = select_top_bottom(adoption, p["n_reference"])
    images = {t.template_id: t.image for t in internal}
    dist = distance_metric({ctx.mode: generated}, [images[t] for t in top], [images[t] for t in bottom],
                           design_embedder)
    dist.write(ctx.dir / "distance.csv")
    summary["distance"] = {"mean": dist.mean[ctx.mode], "median": dist.median[ctx.mode],
                           "top": top, "bottom": bottom}
    (ctx.dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))


def run_report(ctx: Context):
    out = ctx.pipeline.out
    summaries = {}
    for mode in ("baseline", "enhanced", "advanced"):
        path = out / mode / "evaluate" / "summary.json"
        if path.exists():
            summaries[mode] = json.loads(path.read_text())
    lines = ["# prefgen run report", "", f"Mode of this run: {ctx.mode}", ""]
    oracle = {m: s["oracle_mean"]["generated"] for m, s in summaries.items() if "oracle_mean" in s}
    if oracle:
        lines += ["## Oracle popularity of generated designs", "", "| mode | mean |", "|---|---|"]
        lines += [f"| {m} | {v:.4f} |" for m, v in oracle.items()]
        lines.append("")
    probs = {m: s["choice_prob_mean"] for m, s in summaries.items() if "choice_prob_mean" in s}
    if probs:
        lines += ["## Predicted choice probability (mean over internal consumers)", "",
                  "| mode | internal | generated | generated / internal |", "|---|---|---|---|"]
        for m, v in probs.items():
            lines.append(f"| {m} | {v['internal']:.4f} | {v['generated']:.4f} | "
                         f"{v['generated'] / v['internal']:.4f} |")
        lines.append("")
    lines += ["## Distance to popular and unpopular templates (lower is better)", "",
              "| mode | mean | median |", "|---|---|---|"]
    lines += [f"| {m} | {s['distance']['mean']:.4f} | {s['distance']['median']:.4f} |" for m, s in summaries.items()]
    metrics = out / ctx.mode / "train-predictor" / "metrics.csv"
    if metrics.exists():
        lines += ["", "## Predictor test metrics", "", "```", metrics.read_text().strip(), "```"]
    (ctx.dir / "report.md").write_text("\n".join(lines) + "\n")
    (ctx.dir / "summary.json").write_text(json.dumps(summaries, indent=2, sort_keys=True))


STAGE_FUNCS: dict[str, Callable[[Context], None]] = {
    "synth": run_synth,
    "ingest": run_ingest,
    "embed": run_embed,
    "train-predictor": run_train_predictor,
    "label": run_label,
    "train-gan": run_train_gan,
    "generate": run_generate,
    "evaluate": run_evaluate,
    "report": run_report,
}
