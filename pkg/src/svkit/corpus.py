"""Manifest ingestion, duration filtering, stratified splitting, trial lists.

Manifests are JSON-lines on disk: one record per line with keys
utterance_id, speaker_id, path, duration_s, split. Trial files are plain
text, one `<enroll_utt> <test_utt> <0|1>` per line (1 = target).
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .audio import wav_duration_s
from .errors import (
    BadRatios,
    EmptyManifest,
    InsufficientSpeakers,
    InsufficientUtterances,
    MalformedRow,
    NotEnoughDistinctPairs,
    UnreadableSource,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "unassigned")
DEFAULT_MIN_DURATION_S = 3.0


@dataclass(frozen=True)
class UtteranceRecord:
    utterance_id: str
    speaker_id: str
    path: str
    duration_s: float
    split: str = "unassigned"

    def __post_init__(self):
        if self.duration_s < 0:
            raise ValueError(f"negative duration for {self.utterance_id}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass
class Manifest:
    records: list[UtteranceRecord]
    name: str = ""

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.utterance_id in seen:
                raise ValueError(f"duplicate utterance_id {r.utterance_id!r}")
            if not r.speaker_id:
                raise ValueError(f"empty speaker_id for {r.utterance_id!r}")
            seen.add(r.utterance_id)

    def __len__(self) -> int:
        return len(self.records)

    def speakers(self) -> list[str]:
        return sorted({r.speaker_id for r in self.records})

    def by_speaker(self) -> dict[str, list[UtteranceRecord]]:
        out: dict[str, list[UtteranceRecord]] = {}
        for r in self.records:
            out.setdefault(r.speaker_id, []).append(r)
        return out

    def subset(self, split: str) -> list[UtteranceRecord]:
        return [r for r in self.records if r.split == split]

    def total_hours(self) -> float:
        return sum(r.duration_s for r in self.records) / 3600.0


@dataclass(frozen=True)
class TrialPair:
    enroll_utt: str
    test_utt: str
    label: str  # "target" | "nontarget"

    def __post_init__(self):
        if self.enroll_utt == self.test_utt:
            raise ValueError("trial pairs an utterance with itself")
        if self.label not in ("target", "nontarget"):
            raise ValueError(f"bad trial label {self.label!r}")


@dataclass
class ManifestSummary:
    n_utterances: int
    n_speakers: int
    hours: float
    n_excluded: int


_REQUIRED_KEYS = ("utterance_id", "speaker_id", "path")


def _record_from_row(row: dict, min_duration_s: float) -> UtteranceRecord | None:
    for key in _REQUIRED_KEYS:
        if not row.get(key):
            raise MalformedRow(f"row missing {key!r}: {row!r}")
    duration = row.get("duration_s")
    if duration in (None, ""):
        duration = wav_duration_s(row["path"])
    duration = float(duration)
    if duration < min_duration_s:
        return None
    return UtteranceRecord(
        utterance_id=str(row["utterance_id"]),
        speaker_id=str(row["speaker_id"]),
        path=str(row["path"]),
        duration_s=duration,
        split=row.get("split") or "unassigned",
    )


def build_manifest(
    source: str | os.PathLike,
    min_duration_s: float = DEFAULT_MIN_DURATION_S,
    name: str = "",
) -> tuple[Manifest, ManifestSummary]:
    """Build a manifest from a speaker_id/wavs directory tree, CSV, or JSONL.

    Recordings shorter than min_duration_s are excluded (boundary inclusive:
    a file of exactly min_duration_s stays).
    """
    source = os.fspath(source)
    rows: list[dict] = []
    if os.path.isdir(source):
        for speaker_id in sorted(os.listdir(source)):
            spk_dir = os.path.join(source, speaker_id)
            if not os.path.isdir(spk_dir):
                continue
            for fname in sorted(os.listdir(spk_dir)):
                if not fname.lower().endswith(".wav"):
                    continue
                path = os.path.join(spk_dir, fname)
                rows.append({
                    "utterance_id": f"{speaker_id}/{os.path.splitext(fname)[0]}",
                    "speaker_id": speaker_id,
                    "path": path,
                })
    elif os.path.isfile(source):
        try:
            if source.endswith(".csv"):
                with open(source, newline="") as f:
                    rows = list(csv.DictReader(f))
            else:
                with open(source) as f:
                    rows = [json.loads(line) for line in f if line.strip()]
        except (OSError, json.JSONDecodeError) as exc:
            raise UnreadableSource(f"cannot parse {source}: {exc}") from exc
    else:
        raise UnreadableSource(f"source does not exist: {source}")

    records = []
    n_excluded = 0
    for row in rows:
        rec = _record_from_row(row, min_duration_s)
        if rec is None:
            n_excluded += 1
        else:
            records.append(rec)
    manifest = Manifest(records, name=name or os.path.basename(source))
    summary = ManifestSummary(
        n_utterances=len(records),
        n_speakers=len(manifest.speakers()),
        hours=manifest.total_hours(),
        n_excluded=n_excluded,
    )
    log.info(
        "manifest %s: %d utterances, %d speakers, %.2f h (%d excluded < %.1f s)",
        manifest.name, summary.n_utterances, summary.n_speakers,
        summary.hours, n_excluded, min_duration_s,
    )
    return manifest, summary


def largest_remainder(n: int, ratios: tuple[float, ...]) -> list[int]:
    """Apportion n items over ratios; counts sum to n, each within 1 of exact."""
    exact = [n * r for r in ratios]
    counts = [int(x) for x in exact]
    remainder = n - sum(counts)
    # stable: ties broken by position (train before val before test)
    order = sorted(range(len(ratios)), key=lambda i: exact[i] - counts[i], reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def stratified_split(
    m: Manifest,
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
    speaker_disjoint: bool = False,
) -> Manifest:
    """Assign train/val/test per speaker with largest-remainder rounding.

    Speakers with a single utterance go entirely to train; speakers with two
    go to train and test. With speaker_disjoint=True, whole speakers are
    apportioned to splits instead (no speaker overlap across splits).
    """
    if len(m) == 0:
        raise EmptyManifest("cannot split an empty manifest")
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be positive and sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    by_speaker = m.by_speaker()
    assigned: dict[str, str] = {}

    if speaker_disjoint:
        speakers = sorted(by_speaker)
        rng.shuffle(speakers)
        counts = largest_remainder(len(speakers), ratios)
        bounds = np.cumsum(counts)
        for i, spk in enumerate(speakers):
            split = "train" if i < bounds[0] else "val" if i < bounds[1] else "test"
            for r in by_speaker[spk]:
                assigned[r.utterance_id] = split
    else:
        for spk in sorted(by_speaker):
            utts = sorted(by_speaker[spk], key=lambda r: r.utterance_id)
            rng.shuffle(utts)
            n = len(utts)
            if n == 1:
                counts = [1, 0, 0]
            elif n == 2:
                counts = [1, 0, 1]
            else:
                counts = largest_remainder(n, ratios)
            bounds = np.cumsum(counts)
            for i, r in enumerate(utts):
                split = "train" if i < bounds[0] else "val" if i < bounds[1] else "test"
                assigned[r.utterance_id] = split

    records = [replace(r, split=assigned[r.utterance_id]) for r in m.records]
    return Manifest(records, name=m.name)


def generate_trials(
    m: Manifest,
    split: str,
    n_target: int,
    n_nontarget: int,
    seed: int = 0,
) -> list[TrialPair]:
    """Sample target/nontarget trial pairs uniformly without replacement."""
    records = m.subset(split) if split != "all" else list(m.records)
    if not records:
        raise EmptyManifest(f"no records in split {split!r}")
    by_speaker: dict[str, list[str]] = {}
    for r in records:
        by_speaker.setdefault(r.speaker_id, []).append(r.utterance_id)
    for utts in by_speaker.values():
        utts.sort()
    speakers = sorted(by_speaker)

    if n_nontarget > 0 and len(speakers) < 2:
        raise InsufficientSpeakers("nontarget trials need at least 2 speakers")
    if n_target > 0 and not any(len(u) >= 2 for u in by_speaker.values()):
        raise InsufficientUtterances("target trials need a speaker with >= 2 utterances")

    rng = np.random.default_rng(seed)

    target_pool = [
        (a, b)
        for spk in speakers
        for a, b in combinations(by_speaker[spk], 2)
    ]
    if n_target > len(target_pool):
        raise NotEnoughDistinctPairs(
            f"requested {n_target} target trials, only {len(target_pool)} distinct pairs"
        )
    idx = rng.choice(len(target_pool), size=n_target, replace=False)
    trials = [TrialPair(*target_pool[i], label="target") for i in idx]

    # nontarget space can be huge; enumerate only when small
    total_nontarget = 0
    for i, s1 in enumerate(speakers):
        for s2 in speakers[i + 1:]:
            total_nontarget += len(by_speaker[s1]) * len(by_speaker[s2])
    if n_nontarget > total_nontarget:
        raise NotEnoughDistinctPairs(
            f"requested {n_nontarget} nontarget trials, only {total_nontarget} distinct pairs"
        )
    if total_nontarget <= 10 * max(n_nontarget, 1):
        pool = [
            (a, b)
            for i, s1 in enumerate(speakers)
            for s2 in speakers[i + 1:]
            for a in by_speaker[s1]
            for b in by_speaker[s2]
        ]
        idx = rng.choice(len(pool), size=n_nontarget, replace=False)
        chosen = [pool[i] for i in idx]
    else:
        seen: set[tuple[str, str]] = set()
        chosen = []
        spk_of = {u: spk for spk, utts in by_speaker.items() for u in utts}
        all_utts = sorted(spk_of)
        while len(chosen) < n_nontarget:
            a, b = (all_utts[i] for i in rng.integers(0, len(all_utts), size=2))
            if spk_of[a] == spk_of[b]:
                continue
            key = (a, b) if a < b else (b, a)
            if key in seen:
                continue
            seen.add(key)
            chosen.append(key)
    trials.extend(TrialPair(a, b, label="nontarget") for a, b in chosen)
    return trials


# --- file I/O ---

def write_manifest(m: Manifest, path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        for r in m.records:
            f.write(json.dumps({
                "utterance_id": r.utterance_id,
                "speaker_id": r.speaker_id,
                "path": r.path,
                "duration_s": r.duration_s,
                "split": r.split,
            }) + "\n")


def read_manifest(path: str | os.PathLike, name: str = "") -> Manifest:
    records = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            records.append(UtteranceRecord(
                utterance_id=row["utterance_id"],
                speaker_id=row["speaker_id"],
                path=row["path"],
                duration_s=float(row["duration_s"]),
                split=row.get("split", "unassigned"),
            ))
    return Manifest(records, name=name or os.path.basename(os.fspath(path)))


def write_trials(trials: list[TrialPair], path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        for t in trials:
            f.write(f"{t.enroll_utt} {t.test_utt} {1 if t.label == 'target' else 0}\n")


def read_trials(path: str | os.PathLike) -> list[TrialPair]:
    trials = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            enroll, test, label = line.split()
            trials.append(TrialPair(enroll, test, "target" if label == "1" else "nontarget"))
    return trials
