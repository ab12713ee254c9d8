"""Command-line entry point.

Subcommands wire the pipeline: manifest -> split -> trials -> augment ->
(external embeddings) -> train -> score -> eval -> det. Every run writes a
run.json with the resolved configuration; timestamps live only there, so
reruns with the same seed are byte-identical everywhere else.

Exit codes: 0 success, 2 config/validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

from . import augment as aug
from . import corpus, scoring, trainer
from .audio import AudioBuffer, load_audio, resample, write_wav, PIPELINE_RATE_HZ
from .errors import SvkitError

log = logging.getLogger("svkit")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class ConfigError(SvkitError):
    """Validation failure that should exit with code 2."""


def _seed_from(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SVKIT_SEED")
    return int(env) if env else 0


def _write_run_json(out_dir: str, command: str, args: argparse.Namespace) -> None:
    os.makedirs(out_dir, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    payload = {"command": command, "config": resolved, "timestamp": time.time()}
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump(payload, f, indent=2, default=str)
        f.write("\n")


def cmd_manifest(args) -> int:
    manifest, summary = corpus.build_manifest(args.source, min_duration_s=args.min_duration)
    corpus.write_manifest(manifest, args.out)
    _write_run_json(os.path.dirname(os.path.abspath(args.out)), "manifest", args)
    print(f"manifest: {summary.n_utterances} utterances, {summary.n_speakers} speakers, "
          f"{summary.hours:.2f} h, {summary.n_excluded} excluded (< {args.min_duration:g} s)")
    return EXIT_OK


def cmd_split(args) -> int:
    ratios = (args.train, args.val, args.test)
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    m = corpus.read_manifest(args.manifest)
    out = corpus.stratified_split(m, ratios=ratios, seed=_seed_from(args),
                                  speaker_disjoint=args.speaker_disjoint)
    corpus.write_manifest(out, args.out)
    _write_run_json(os.path.dirname(os.path.abspath(args.out)), "split", args)
    for split in ("train", "val", "test"):
        print(f"{split}: {len(out.subset(split))} utterances")
    return EXIT_OK


def cmd_trials(args) -> int:
    m = corpus.read_manifest(args.manifest)
    trials = corpus.generate_trials(m, args.split, args.n_target, args.n_nontarget,
                                    seed=_seed_from(args))
    corpus.write_trials(trials, args.out)
    _write_run_json(os.path.dirname(os.path.abspath(args.out)), "trials", args)
    print(f"trials: {args.n_target} target + {args.n_nontarget} nontarget -> {args.out}")
    return EXIT_OK


def _augment_one(rec, policy, noises, babble_pool, out_dir, master_seed):
    buf = load_audio(rec.path)
    if buf.sample_rate_hz != PIPELINE_RATE_HZ:
        buf = resample(buf, PIPELINE_RATE_HZ)
    rng = aug.derive_utterance_seed(master_seed, rec.utterance_id)
    out, entry = aug.augment_utterance(buf, policy, noises, rng,
                                       babble_pool=babble_pool,
                                       utterance_id=rec.utterance_id)
    out_path = os.path.join(out_dir, rec.utterance_id.replace("/", "__") + ".wav")
    write_wav(out, out_path)
    return entry


def cmd_augment(args) -> int:
    m = corpus.read_manifest(args.manifest)
    seed = _seed_from(args)
    policy = aug.AugmentPolicy(
        snr_db_min=args.snr_min, snr_db_max=args.snr_max,
        babble_speakers_min=args.babble_min, babble_speakers_max=args.babble_max,
        p_noise=args.p_noise, p_babble=args.p_babble, p_reverb=args.p_reverb,
        seed=seed,
    )
    noises = aug.load_noise_dir(args.noise_dir) if args.noise_dir else []
    babble_pool = list(m.records) if args.p_babble > 0 else None
    os.makedirs(args.out_dir, exist_ok=True)
    _write_run_json(args.out_dir, "augment", args)

    failures = 0
    entries = [None] * len(m.records)
    with ThreadPoolExecutor(max_workers=max(args.jobs, 1)) as pool:
        futures = [
            pool.submit(_augment_one, rec, policy, noises, babble_pool,
                        args.out_dir, seed)
            for rec in m.records
        ]
        for i, fut in enumerate(futures):
            try:
                entries[i] = fut.result()
            except SvkitError as exc:
                failures += 1
                log.error("augment failed for %s: %s", m.records[i].utterance_id, exc)
    with open(os.path.join(args.out_dir, "augment_log.jsonl"), "w") as f:
        for entry in entries:
            if entry is not None:
                f.write(entry.to_json() + "\n")
    print(f"augmented {len(m.records) - failures}/{len(m.records)} utterances -> {args.out_dir}")
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_train(args) -> int:
    train_archive = scoring.read_archive(args.train_archive)
    val_archive = scoring.read_archive(args.val_archive)
    m = corpus.read_manifest(args.train_manifest)
    trials = corpus.read_trials(args.val_trials)
    config = trainer.TrainerConfig(
        margin=args.margin, lr=args.lr,
        plateau_patience=args.plateau_patience, plateau_factor=args.plateau_factor,
        early_stop_patience=args.early_stop_patience, max_epochs=args.max_epochs,
        batch_speakers=args.batch_speakers, utts_per_speaker=args.utts_per_speaker,
        seed=_seed_from(args),
    )
    model = trainer.AdapterModel.init_random(train_archive.dim, args.d_out or train_archive.dim,
                                             seed=config.seed)
    best, history = trainer.train(model, train_archive, m, val_archive, trials, config)
    os.makedirs(args.out_dir, exist_ok=True)
    trainer.save_checkpoint(best, os.path.join(args.out_dir, "adapter.svad"))
    history.write_csv(os.path.join(args.out_dir, "history.csv"))
    _write_run_json(args.out_dir, "train", args)
    print(f"best val EER {history.best_val_eer * 100:.2f}% at epoch {history.best_epoch} "
          f"({history.stop_reason or 'running'})")
    return EXIT_OK


def _load_scored(args):
    archive = scoring.read_archive(args.archive)
    trials = corpus.read_trials(args.trials)
    if getattr(args, "checkpoint", None):
        import numpy as np
        model = trainer.load_checkpoint(args.checkpoint)
        ids = sorted(archive.entries)
        mapped = model.apply(np.stack([archive.entries[u] for u in ids]))
        archive = scoring.EmbeddingArchive(
            dim=model.d_out, model_id=archive.model_id + "+adapter",
            entries={u: mapped[i].astype(np.float32) for i, u in enumerate(ids)})
    records = scoring.score_trials(trials, archive)
    return archive, trials, records


def cmd_score(args) -> int:
    archive, _trials, records = _load_scored(args)
    if args.cohort:
        cohort = [line.strip() for line in open(args.cohort) if line.strip()]
        records = scoring.snorm(records, archive, cohort, top_k=args.top_k)
    with open(args.out, "w") as f:
        for r in records:
            f.write(f"{r.trial.enroll_utt} {r.trial.test_utt} {r.score:.8f}\n")
    _write_run_json(os.path.dirname(os.path.abspath(args.out)), "score", args)
    print(f"scored {len(records)} trials -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    archive, _trials, records = _load_scored(args)
    labels = [r.trial.label for r in records]
    raw_eer, raw_thr = scoring.compute_eer([r.raw_score for r in records], labels)
    report = {"eer_raw": raw_eer, "threshold_raw": raw_thr, "n_trials": len(records)}
    print(f"EER (raw cosine):   {raw_eer * 100:.2f}%  @ threshold {raw_thr:.4f}")
    if args.cohort:
        cohort = [line.strip() for line in open(args.cohort) if line.strip()]
        normed = scoring.snorm(records, archive, cohort, top_k=args.top_k)
        snorm_eer, snorm_thr = scoring.compute_eer(
            [r.normalized_score for r in normed], labels)
        report.update({"eer_snorm": snorm_eer, "threshold_snorm": snorm_thr})
        print(f"EER (s-norm):       {snorm_eer * 100:.2f}%  @ threshold {snorm_thr:.4f}")
    else:
        print("EER (s-norm):       skipped (no --cohort given)")
    if args.report:
        with open(args.report, "w") as f:
            json.dump(report, f, indent=2)
            f.write("\n")
        _write_run_json(os.path.dirname(os.path.abspath(args.report)), "eval", args)
    return EXIT_OK


def cmd_det(args) -> int:
    _archive, _trials, records = _load_scored(args)
    labels = [r.trial.label for r in records]
    rows = scoring.det_thresholds([r.raw_score for r in records], labels)
    with open(args.out, "w") as f:
        f.write("threshold,far,frr\n")
        for t, far, frr in rows:
            f.write(f"{t:.8f},{far:.8f},{frr:.8f}\n")
    _write_run_json(os.path.dirname(os.path.abspath(args.out)), "det", args)
    print(f"DET curve: {len(rows)} operating points -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svkit",
                                     description="Speaker-verification toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("manifest", help="build a manifest from a directory or table")
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-duration", type=float, default=corpus.DEFAULT_MIN_DURATION_S)
    p.set_defaults(func=cmd_manifest)

    p = sub.add_parser("split", help="stratified train/val/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=float, default=0.70)
    p.add_argument("--val", type=float, default=0.15)
    p.add_argument("--test", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--speaker-disjoint", action="store_true")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("trials", help="generate verification trial pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--n-target", type=int, required=True)
    p.add_argument("--n-nontarget", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trials)

    p = sub.add_parser("augment", help="apply noise/babble/reverb augmentation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--noise-dir", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--snr-min", type=float, default=5.0)
    p.add_argument("--snr-max", type=float, default=15.0)
    p.add_argument("--babble-min", type=int, default=12)
    p.add_argument("--babble-max", type=int, default=25)
    p.add_argument("--p-noise", type=float, default=0.0)
    p.add_argument("--p-babble", type=float, default=0.0)
    p.add_argument("--p-reverb", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train the embedding adapter")
    p.add_argument("--train-archive", required=True)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--val-archive", required=True)
    p.add_argument("--val-trials", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--d-out", type=int, default=None)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--plateau-patience", type=int, default=8)
    p.add_argument("--plateau-factor", type=float, default=0.5)
    p.add_argument("--early-stop-patience", type=int, default=8)
    p.add_argument("--max-epochs", type=int, default=50)
    p.add_argument("--batch-speakers", type=int, default=8)
    p.add_argument("--utts-per-speaker", type=int, default=4)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    for name, fn in (("score", cmd_score), ("eval", cmd_eval), ("det", cmd_det)):
        p = sub.add_parser(name)
        p.add_argument("--archive", required=True)
        p.add_argument("--trials", required=True)
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--cohort", default=None,
                       help="file of cohort utterance ids, one per line")
        p.add_argument("--top-k", type=int, default=scoring.DEFAULT_SNORM_TOP_K)
        if name == "score":
            p.add_argument("--out", required=True)
        elif name == "eval":
            p.add_argument("--report", default=None)
        else:
            p.add_argument("--out", required=True)
        p.set_defaults(func=fn)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"svkit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SvkitError as exc:
        # contract violations surfaced by user input are config errors
        print(f"svkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"svkit: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
