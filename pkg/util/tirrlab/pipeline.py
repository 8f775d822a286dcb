# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0
#
# Pipeline stages: generate the synthetic service, pretrain the Siamese
# networks, train TIRR and the baselines, evaluate on the held-out split and
# emit reports and plot data.

import json
import logging as log
import pathlib
import re
from collections import OrderedDict

import numpy as np
from mako.lookup import TemplateLookup
from tabulate import tabulate

from .baselines import (AttributeProfiles, ImrecConfig, LatentFactors, ReconCheckpoint,
                        ImrecCheckpoint, LfrrCheckpoint, fit_recon, imrec_lite_score,
                        lfrr_lite_score, lfrr_lite_train, recon_lite_score)
from .checkpoint import sha256_file
from .core import (PROV_EVAL, SPLIT_NAMES, DatasetBundle, Side, extract_labeled_pairs,
                   read_event_log, split_three_way, validate_events, write_event_log)
from .errors import IoFailure, MissingUpstream, ProvenanceError, SplitContamination
from .evalkit import (ScoredPair, evaluate_pairs, project_embeddings, read_report,
                      write_projection_tsv, write_report, write_roc_tsv)
from .imgproc import ImageStore
from .siamese import (Embedder, SiameseCheckpoint, anchored_expressions, distance,
                      siamese_scored_pairs, train_siamese_sides)
from .synthgen import (WorldParams, generate_world, load_world, profile_variant, read_manifest,
                       render_face, sample_events, save_png, write_manifest)
from .tirr import HistoryPolicy, TirrCheckpoint, load_tirr_model, score_pairs, train_tirr

STAGES = ("siamese", "tirr", "baselines")
MODELS = ("tirr", "imrec", "recon", "lfrr", "siamese")

templates = TemplateLookup(directories=[pathlib.Path(__file__).parent / "templates"],
                           output_encoding="utf-8")

# Trim trailing whitespace on rendered lines.
re_trailws = re.compile(r'[ \t\r]+$', re.MULTILINE)


class Layout(object):
    """Artifact paths below one output directory."""
    def __init__(self, root):
        self.root = pathlib.Path(root)
        self.data = self.root / "data"
        self.events = self.data / "events.log"
        self.world = self.data / "world.hjson"
        self.images = self.data / "images"
        self.splits = self.data / "splits"
        self.split_manifest = self.splits / "manifest.json"
        self.models = self.root / "models"
        self.train = self.root / "train"
        self.reports = self.root / "reports"
        self.projection = self.root / "projection"

    def split(self, name):
        return self.splits / "{}.log".format(name)

    def model(self, name):
        return self.models / "{}.ckpt".format(name)

    def train_log(self, name):
        return self.train / "{}.tsv".format(name)

    def report(self, name):
        return self.reports / "{}.json".format(name)

    def roc(self, name):
        return self.reports / "{}.roc.tsv".format(name)

    def mkdir(self, path):
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IoFailure("Unable to create {}: {}".format(path, e))
        return path


def _write_json(obj, path):
    try:
        with open(path, "w") as f:
            f.write(json.dumps(obj, sort_keys=True, indent=4) + "\n")
    except OSError as e:
        raise IoFailure("Unable to write {}: {}".format(path, e))


def _read_json(path):
    try:
        with open(path, "r") as f:
            return json.load(f)
    except FileNotFoundError:
        raise MissingUpstream("{} does not exist; run the upstream stage first".format(path))
    except OSError as e:
        raise IoFailure("Unable to read {}: {}".format(path, e))


def _write_text(text, path):
    try:
        with open(path, "w") as f:
            f.write(text)
    except OSError as e:
        raise IoFailure("Unable to write {}: {}".format(path, e))


def write_loss_log(losses, path):
    _write_text("epoch\tloss\n" + "".join(
        "{}\t{!r}\n".format(i + 1, float(v)) for i, v in enumerate(losses)), path)


def history_policy(cfg):
    return HistoryPolicy(cfg["history"]["cap"], cfg.max_age)


# -------------------- generate --------------------

def cmd_generate(cfg, out):
    """Write the event log, world manifest, profile images and the three splits."""
    layout = Layout(out)
    layout.mkdir(layout.images)
    layout.mkdir(layout.splits)

    params = WorldParams.from_dict(cfg["world"]).as_dict()
    world = generate_world(params.pop("seed"), params.pop("n_x"), params.pop("n_y"), **params)
    ev = cfg["events"]
    log_ = validate_events(sample_events(world, ev["n_events"], ev["seed"], ev["respond_prob"]))
    write_event_log(log_, layout.events)
    write_manifest(world.manifest(ev, log_.digest()), layout.world)
    log.info("Generated %d events for %d users", len(log_), len(world.users))

    index = dict()
    for uid in sorted(world.users):
        img = render_face(world, uid, profile_variant(uid))
        save_png(img, layout.images / img.filename)
        index[str(uid)] = {"file": img.filename, "bbox": [float(v) for v in img.face_bbox]}
    _write_json(index, layout.images / "index.json")

    if not len(log_):
        log.warning("The event log is empty; no splits were written")
        return layout
    bundle = split_three_way(log_, cfg["split"]["fractions"], cfg["split"]["seed"])
    digests = OrderedDict()
    for name, split in bundle.splits().items():
        write_event_log(split, layout.split(name))
        digests[name] = split.digest()
    _write_json({"events": log_.digest(), "splits": digests}, layout.split_manifest)
    return layout


# -------------------- shared loading --------------------

def load_splits(layout):
    """Read the three splits and check them against the split manifest."""
    manifest = _read_json(layout.split_manifest)
    logs = list()
    for name in SPLIT_NAMES:
        path = layout.split(name)
        if not path.exists():
            raise MissingUpstream("Split {} is missing; run `generate` first".format(path))
        split = read_event_log(path, provenance=name)
        if split.digest() != manifest["splits"][name]:
            cls = SplitContamination if name == PROV_EVAL else ProvenanceError
            raise cls("Split {} no longer matches the digest recorded at generation".format(name))
        logs.append(split)
    return DatasetBundle(*logs)


def load_siamese(layout):
    ckpts = dict()
    for side in Side:
        path = layout.model("siamese_" + side.value)
        if not path.exists():
            raise MissingUpstream("{} is missing; run `train --stage siamese` first".format(path))
        ckpts[side] = SiameseCheckpoint.load(path)
    return ckpts


def _load_model(layout, name, cls, stage):
    path = layout.model(name)
    if not path.exists():
        raise MissingUpstream("{} is missing; run `train --stage {}` first".format(path, stage))
    return cls.load(path)


def _trained_on(log_):
    return [{"split": log_.provenance, "digest": log_.digest()}]


def _verify_digests(expected, siamese_ckpts, model):
    for side, ckpt in siamese_ckpts.items():
        if expected.get(side.value) != ckpt.digest():
            raise ProvenanceError("{} was fitted against other Siamese weights for side {}".format(
                model, side.value))


# -------------------- train --------------------

def cmd_train(cfg, out, stage):
    """Run one training stage and write its checkpoints and loss logs."""
    if stage not in STAGES:
        raise ValueError("Unknown stage {!r}".format(stage))
    layout = Layout(out)
    bundle = load_splits(layout)
    layout.mkdir(layout.models)
    layout.mkdir(layout.train)

    if stage == "siamese":
        images = ImageStore.from_directory(layout.images)
        ckpts = train_siamese_sides(bundle.siamese_set, images, cfg["siamese"])
        for side, ckpt in ckpts.items():
            name = "siamese_" + side.value
            ckpt.save(layout.model(name))
            write_loss_log(ckpt.losses, layout.train_log(name))
        return

    siamese = load_siamese(layout)
    if stage == "tirr":
        images = ImageStore.from_directory(layout.images)
        embedder = Embedder({s: c.to_net() for s, c in siamese.items()}, images)
        ckpt = train_tirr(bundle.match_set, siamese, embedder, cfg["tirr"], cfg["tirr"]["seed"],
                          history_policy(cfg))
        ckpt.save(layout.model("tirr"))
        write_loss_log(ckpt.losses, layout.train_log("tirr"))
        return

    base = cfg["baselines"]
    world = load_world(read_manifest(layout.world))
    attributes = {uid: world.attributes(uid) for uid in world.users}
    recon = fit_recon(bundle.match_set, attributes, world.params.attribute_buckets,
                      base["recon"]["alpha"]).to_checkpoint()
    recon.meta["trained_on"] = _trained_on(bundle.match_set)
    recon.save(layout.model("recon"))

    lf = base["lfrr"]
    factors = lfrr_lite_train(bundle.match_set, lf["dim"], lf["epochs"], lf["learning_rate"],
                              lf["reg"], lf["seed"])
    factors.to_checkpoint(dict(lf, trained_on=_trained_on(bundle.match_set))).save(
        layout.model("lfrr"))
    write_loss_log(factors.losses, layout.train_log("lfrr"))

    imrec = ImrecConfig(base["imrec"]["anchors"],
                        {s.value: c.digest() for s, c in siamese.items()}).to_checkpoint()
    imrec.meta["trained_on"] = _trained_on(bundle.siamese_set)
    imrec.save(layout.model("imrec"))


# -------------------- evaluate --------------------

def _pair_key(x, y):
    return (x, y) if x < y else (y, x)


def check_contamination(bundle, ckpts):
    """The evaluation split must share no user pair and no digest with training."""
    eval_keys = {_pair_key(e.actor, e.target) for e in bundle.eval_set}
    for split in (bundle.siamese_set, bundle.match_set):
        overlap = eval_keys & {_pair_key(e.actor, e.target) for e in split}
        if overlap:
            raise SplitContamination("{} user pairs of the evaluation split also occur in the {} split".format(
                len(overlap), split.provenance))
    eval_digest = bundle.eval_set.digest()
    for name, ckpt in ckpts.items():
        for entry in ckpt.meta.get("trained_on", []):
            if entry["split"] == PROV_EVAL or entry["digest"] == eval_digest:
                raise SplitContamination("Model {} was fitted on the evaluation split".format(name))


def _scored(pairs, scores):
    return [ScoredPair(p.x, p.y, float(s), p.label) for p, s in zip(pairs, scores)]


def _model_scorer(name, layout, cfg, images):
    """Return the checkpoints behind `name` and a `(log, pairs) -> scores` function."""
    if name == "tirr":
        siamese = load_siamese(layout)
        ckpt = _load_model(layout, "tirr", TirrCheckpoint, "tirr")
        embedder = Embedder({s: c.to_net() for s, c in siamese.items()}, images)
        model = load_tirr_model(ckpt, siamese, embedder, history_policy(cfg))
        return ckpt, lambda log_, pairs: score_pairs(
            model, log_, [(p.x, p.y, p.reference_time) for p in pairs])
    if name == "imrec":
        siamese = load_siamese(layout)
        ckpt = _load_model(layout, "imrec", ImrecCheckpoint, "baselines")
        conf = ImrecConfig.from_checkpoint(ckpt)
        _verify_digests(conf.siamese_digests, siamese, "ImRec-lite")
        nets = {s: c.to_net() for s, c in siamese.items()}
        embedder = Embedder(nets, images)
        return ckpt, lambda log_, pairs: [
            imrec_lite_score(p.x, p.y, nets, embedder, log_, p.reference_time, conf.anchors)
            for p in pairs]
    if name == "recon":
        ckpt = _load_model(layout, "recon", ReconCheckpoint, "baselines")
        profiles = AttributeProfiles.from_checkpoint(ckpt)
        return ckpt, lambda log_, pairs: [recon_lite_score(p.x, p.y, profiles) for p in pairs]
    if name == "lfrr":
        ckpt = _load_model(layout, "lfrr", LfrrCheckpoint, "baselines")
        factors = LatentFactors.from_checkpoint(ckpt)
        return ckpt, lambda log_, pairs: [lfrr_lite_score(p.x, p.y, factors) for p in pairs]
    raise ValueError("Unknown model {!r}".format(name))


def comparison_table(reports):
    rows = sorted(reports, key=lambda r: (-r.auc, r.model))
    return tabulate([[r.model, r.auc, r.precision, r.recall, r.f1, r.recall_standard,
                      r.f1_standard, r.threshold] for r in rows],
                    headers=["model", "AUC", "precision", "recall", "F1", "recall (std)",
                             "F1 (std)", "threshold"],
                    tablefmt="github", floatfmt=".4f")


def cmd_evaluate(cfg, out, models=None):
    """Score the shared evaluation pairs with every model and write the reports."""
    models = list(models or cfg["evaluate"]["models"])
    layout = Layout(out)
    bundle = load_splits(layout)
    images = ImageStore.from_directory(layout.images)
    layout.mkdir(layout.reports)

    train_pairs = extract_labeled_pairs(bundle.match_set)
    eval_pairs = extract_labeled_pairs(bundle.eval_set)
    reports = list()
    for name in models:
        if name == "siamese":
            siamese = load_siamese(layout)
            check_contamination(bundle, {"siamese_" + s.value: c for s, c in siamese.items()})
            nets = {s: c.to_net() for s, c in siamese.items()}
            train = [ScoredPair(*row) for row in siamese_scored_pairs(nets, bundle.siamese_set, images)]
            held = [ScoredPair(*row) for row in siamese_scored_pairs(nets, bundle.eval_set, images)]
        else:
            ckpt, scorer = _model_scorer(name, layout, cfg, images)
            check_contamination(bundle, {name: ckpt})
            train = _scored(train_pairs, scorer(bundle.match_set, train_pairs))
            held = _scored(eval_pairs, scorer(bundle.eval_set, eval_pairs))
        report = evaluate_pairs(name, train, held)
        write_report(report, layout.report(name))
        write_roc_tsv(report.roc, layout.roc(name))
        reports.append(report)

    _write_text(comparison_table(reports) + "\n", layout.reports / "comparison.md")
    return reports


# -------------------- project --------------------

def cmd_project(cfg, out):
    """Export 2-D projections of judge-relative difference vectors per judged side."""
    layout = Layout(out)
    bundle = load_splits(layout)
    siamese = load_siamese(layout)
    images = ImageStore.from_directory(layout.images)
    embedder = Embedder({s: c.to_net() for s, c in siamese.items()}, images)
    layout.mkdir(layout.projection)
    limit = cfg["project"]["max_points"]
    written = dict()
    for side in Side:
        rows = [r for r in anchored_expressions(bundle.eval_set) if r[2].side is side][:limit]
        if len(rows) < 2:
            log.warning("Too few anchored expressions to project side %s", side.value)
            continue
        diffs = np.stack([distance(embedder(a), embedder(t)) for _, a, t, _ in rows])
        labels = ["like" if label else "dislike" for *_, label in rows]
        points = project_embeddings(diffs, labels, cfg["project"]["method"])
        path = layout.projection / "{}.tsv".format(side.value)
        write_projection_tsv(points, path)
        written[side] = path
    return written


# -------------------- report --------------------

def cmd_report(cfg, out):
    """Render the markdown run summary from the evaluation reports."""
    layout = Layout(out)
    paths = sorted(layout.reports.glob("*.json")) if layout.reports.is_dir() else []
    if not paths:
        raise MissingUpstream("No evaluation reports in {}; run `evaluate` first".format(
            layout.reports))
    reports = sorted((read_report(p) for p in paths), key=lambda r: (-r.auc, r.model))
    split_manifest = _read_json(layout.split_manifest)
    losses = OrderedDict()
    for path in sorted(layout.train.glob("*.tsv")) if layout.train.is_dir() else []:
        losses[path.stem] = sha256_file(path)
    tpl = templates.get_template("summary.md.tpl")
    text = tpl.render_unicode(name=cfg["name"], cfg_digest=cfg.digest(), reports=reports,
                              table=comparison_table(reports), splits=split_manifest["splits"],
                              train_logs=losses)
    text = re_trailws.sub("", text)
    path = layout.reports / "summary.md"
    _write_text(text, path)
    return path

