"""End-to-end stages: features -> pool -> training -> anonymization -> evaluation."""

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from vqanon import anonymizer as anon
from vqanon.errors import DataError
from vqanon.evaluation import (compute_eer, compute_uar, load_emotion, load_trials,
                               render_results_table)
from vqanon.features import (extract_features, load_features, read_f0_sidecar, read_wav,
                             save_features, write_wav)
from vqanon.training import Trainer, latest_checkpoint, load_model_checkpoint, make_example

log = logging.getLogger(__name__)

MANIFEST = "manifest.csv"


def _speaker_map(input_dir):
    """Optional ``utt2spk`` file (``utterance_id speaker_id`` per line)."""
    path = os.path.join(input_dir, "utt2spk")
    mapping = {}
    if os.path.exists(path):
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected 'utterance_id speaker_id'")
                mapping[parts[0]] = parts[1]
    return mapping


def _default_speaker(utt):
    return utt.rsplit("_", 1)[0] if "_" in utt else utt


def _extract_one(job):
    wav_path, utt, spk, out_path, cfg = job
    clip = read_wav(wav_path, utt, spk)
    feats = extract_features(clip, cfg)
    sidecar = os.path.splitext(wav_path)[0] + ".f0"
    if os.path.exists(sidecar):
        ingested = read_f0_sidecar(sidecar, feats.n_frames)
        ingested.energy = feats.track.energy
        feats.track = ingested
    save_features(out_path, feats, {"wav_path": os.path.abspath(wav_path)})
    return utt, spk, feats.n_frames, os.path.abspath(wav_path)


def cmd_features(input_dir, out_dir, cfg, jobs=1):
    """Extract one feature cache per WAV plus a manifest.

    Returns ``(n_written, failures)``; failures are ``(path, message)`` pairs.
    """
    wavs = sorted(os.path.join(root, n) for root, _, names in os.walk(input_dir)
                  for n in names if n.lower().endswith(".wav"))
    if not wavs:
        raise DataError(f"no input audio in {input_dir}")
    os.makedirs(out_dir, exist_ok=True)
    spk_map = _speaker_map(input_dir)
    todo = []
    for w in wavs:
        utt = os.path.splitext(os.path.basename(w))[0]
        todo.append((w, utt, spk_map.get(utt, _default_speaker(utt)),
                     os.path.join(out_dir, f"{utt}.feat"), cfg.features))
    rows, failures = [], []
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            futures = [pool.submit(_extract_one, j) for j in todo]
            results = []
            for j, fut in zip(todo, futures):
                try:
                    results.append(fut.result())
                except DataError as exc:
                    results.append(exc)
    else:
        results = []
        for j in todo:
            try:
                results.append(_extract_one(j))
            except DataError as exc:
                results.append(exc)
    for j, res in zip(todo, results):
        if isinstance(res, Exception):
            log.warning("skipping %s: %s", j[0], res)
            failures.append((j[0], str(res)))
        else:
            rows.append(res)
    with open(os.path.join(out_dir, MANIFEST), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["utterance_id", "speaker_id", "n_frames", "wav_path"])
        w.writerows(rows)
    return len(rows), failures


def read_manifest(feature_dir):
    path = os.path.join(feature_dir, MANIFEST)
    if not os.path.exists(path):
        raise DataError(f"missing features: no {MANIFEST} in {feature_dir}")
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        r["n_frames"] = int(r["n_frames"])
    return rows


def _load_xvector(xvector_dir, utt):
    path = os.path.join(xvector_dir, f"{utt}.xvec")
    return anon.load_xvector(path) if os.path.exists(path) else None


def cmd_build_pool(feature_dir, xvector_dir, out_file):
    """Pool of per-speaker mean x-vectors and mean log-F0 over their utterances."""
    rows = read_manifest(feature_dir)
    xvs, tracks = [], {}
    for r in rows:
        xv = _load_xvector(xvector_dir, r["utterance_id"])
        if xv is None:
            log.warning("no x-vector for %s; left out of the pool", r["utterance_id"])
            continue
        xvs.append(replace(xv, speaker_id=r["speaker_id"]) if xv.speaker_id != r["speaker_id"] else xv)
        feats = load_features(os.path.join(feature_dir, f"{r['utterance_id']}.feat"))
        tracks.setdefault(r["speaker_id"], []).append(feats.track)
    pool = anon.build_speaker_pool(xvs, anon.speaker_log_f0_means(tracks))
    anon.save_pool(out_file, pool)
    return pool


def load_training_examples(feature_dir, xvector_dir):
    examples = []
    for r in read_manifest(feature_dir):
        utt = r["utterance_id"]
        feats = load_features(os.path.join(feature_dir, f"{utt}.feat"))
        clip = read_wav(r["wav_path"], utt, r["speaker_id"])
        xv = _load_xvector(xvector_dir, utt)
        if xv is None:
            log.info("no x-vector for %s; using the speaker stub", utt)
            xv = anon.stub_xvector(r["speaker_id"])
        examples.append(make_example(feats, clip.samples, xv.values))
    if not examples:
        raise DataError(f"no utterances listed in {feature_dir}")
    return examples


def cmd_train(feature_dir, cfg, run_dir, xvector_dir=None, resume=True):
    """Train (or resume) into ``run_dir``; echoes the effective config there."""
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as f:
        f.write(cfg.to_json())
    examples = load_training_examples(feature_dir, xvector_dir or cfg.paths.xvector_dir)
    trainer = Trainer(examples, cfg.training, cfg.encoder, cfg.prosody, cfg.generator)
    ckpt = latest_checkpoint(run_dir) if resume else None
    if ckpt is not None:
        try:
            trainer.load(ckpt)
        except (DataError, KeyError, RuntimeError, ValueError) as exc:
            raise DataError(f"corrupt checkpoint {ckpt}: {exc}") from exc
        log.info("resuming from %s (step %d, epoch %d)", ckpt, trainer.step, trainer.epoch)
    trainer.run(run_dir)
    return trainer


def _pseudo_hash(vec):
    return hashlib.sha256(np.asarray(vec, dtype="<f8").tobytes()).hexdigest()


def cmd_anonymize(feature_dir, xvector_dir, pool_file, checkpoint, system, out_dir, cfg):
    """Write one anonymized WAV and JSON sidecar per utterance. Returns the ids done."""
    if system not in anon.SYSTEM_STRATEGY:
        raise DataError(f"system must be 1, 2 or 3, got {system!r}")
    acfg = replace(cfg.anonymizer, f0_strategy=anon.SYSTEM_STRATEGY[system])
    pool = anon.load_pool(pool_file)
    model, _ = load_model_checkpoint(checkpoint)
    os.makedirs(out_dir, exist_ok=True)
    rows = read_manifest(feature_dir)
    by_speaker = {}
    if acfg.distance_reference == "speaker":
        for r in rows:
            xv = _load_xvector(xvector_dir, r["utterance_id"])
            if xv is not None:
                by_speaker.setdefault(r["speaker_id"], []).append(xv.values)
    done = []
    for r in rows:
        utt = r["utterance_id"]
        xv = _load_xvector(xvector_dir, utt)
        if xv is None:
            log.warning("skipping %s: no x-vector", utt)
            continue
        feats = load_features(os.path.join(feature_dir, f"{utt}.feat"))
        source = xv.values
        if acfg.distance_reference == "speaker":
            source = np.mean(by_speaker[r["speaker_id"]], axis=0)
        sel = anon.select_pseudo_xvector(source, pool, acfg, utt)
        f0n, info = anon.anonymize_f0(system, feats.track, acfg, utt, sel, pool)
        wave = model.infer(feats.mel, f0n, feats.track.energy, sel.pseudo)
        write_wav(os.path.join(out_dir, f"{utt}.wav"), wave)
        sidecar = {
            "utterance_id": utt,
            "system": system,
            "f0_strategy": acfg.f0_strategy,
            "alpha": info.get("alpha"),
            "target_log_f0": info.get("target_log_f0"),
            "selected_speaker_ids": sel.selected_speaker_ids,
            "pseudo_xvector_sha256": _pseudo_hash(sel.pseudo),
            "n_samples": int(wave.size),
            "seed": acfg.rng_seed,
        }
        with open(os.path.join(out_dir, f"{utt}.json"), "w") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
            f.write("\n")
        done.append(utt)
    return done


def system_eer(trials):
    """EER columns for one system: per gender plus their average when tagged."""
    if trials.genders:
        out = {}
        for g, col in (("f", "EER-F"), ("m", "EER-M")):
            sub = trials.subset(g)
            out[col] = compute_eer(sub)[0] if len(sub) else None
        vals = [v for v in out.values() if v is not None]
        out["EER-Avg"] = float(np.mean(vals)) if vals else None
        return out
    return {"EER": compute_eer(trials)[0]}


def cmd_evaluate(trials, emotion=None, out_dir=None, extra=None):
    """Metrics report over systems.

    ``trials`` and ``emotion`` map system names to score files; ``extra``
    maps system names to externally computed columns (e.g. WER).
    """
    emotion = emotion or {}
    extra = extra or {}
    systems = list(dict.fromkeys(list(trials) + list(emotion) + list(extra)))
    results = {s: {} for s in systems}
    direction = {}
    for s, path in trials.items():
        try:
            cols = system_eer(load_trials(path))
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from exc
        results[s].update(cols)
        direction.update({c: True for c in cols})
    for s, path in emotion.items():
        results[s]["UAR"] = compute_uar(load_emotion(path))
        direction["UAR"] = True
    for s, cols in extra.items():
        results[s].update(cols)
        direction.update({c: not c.upper().startswith("WER") for c in cols})
    if not emotion:
        for s in systems:
            results[s].setdefault("UAR", None)
        direction["UAR"] = True
    order = [c for c in ("EER-F", "EER-M", "EER-Avg", "EER") if c in direction]
    order += [c for c in direction if c not in order and c != "UAR"] + ["UAR"]
    direction = {c: direction[c] for c in order}
    report = {"results": results, "columns": direction,
              "uar_available": bool(emotion),
              "table_text": render_results_table(results, direction, "text"),
              "table_csv": render_results_table(results, direction, "csv")}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.json"), "w") as f:
            json.dump({"results": results, "uar_available": bool(emotion)}, f, indent=2, sort_keys=True)
            f.write("\n")
        with open(os.path.join(out_dir, "table.txt"), "w", encoding="utf-8") as f:
            f.write(report["table_text"])
        with open(os.path.join(out_dir, "table.csv"), "w", encoding="utf-8") as f:
            f.write(report["table_csv"])
    return report

