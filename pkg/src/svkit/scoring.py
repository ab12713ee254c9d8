"""Embedding archives, cosine scoring, adaptive s-norm, EER/DET.

Archive format (little-endian): magic `SVEM`, u32 version=1, u32 dim,
u64 count, u16 model_id length + UTF-8 model_id, then per entry
u16 id length + UTF-8 id + dim float32.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .corpus import TrialPair
from .errors import (
    BadMagic,
    DegenerateCohort,
    DimMismatch,
    LengthMismatch,
    MissingClass,
    TruncatedFile,
    UnknownId,
    ZeroVector,
)

ARCHIVE_MAGIC = b"SVEM"
ARCHIVE_VERSION = 1
DEFAULT_SNORM_TOP_K = 200


@dataclass
class EmbeddingArchive:
    dim: int
    model_id: str
    entries: dict[str, np.ndarray]

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("archive dim must be positive")
        for utt_id, vec in self.entries.items():
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (self.dim,):
                raise DimMismatch(
                    f"entry {utt_id!r} has length {vec.shape}, archive dim {self.dim}"
                )
            self.entries[utt_id] = vec

    def __len__(self) -> int:
        return len(self.entries)

    def vector(self, utt_id: str) -> np.ndarray:
        try:
            return self.entries[utt_id]
        except KeyError:
            raise UnknownId(f"no embedding for utterance {utt_id!r}") from None


@dataclass
class ScoreRecord:
    trial: TrialPair
    raw_score: float
    normalized_score: float | None = None

    @property
    def score(self) -> float:
        return self.raw_score if self.normalized_score is None else self.normalized_score


def write_archive(archive: EmbeddingArchive, path: str | os.PathLike) -> None:
    model_bytes = archive.model_id.encode()
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        f.write(struct.pack("<IIQH", ARCHIVE_VERSION, archive.dim, len(archive.entries),
                            len(model_bytes)))
        f.write(model_bytes)
        for utt_id in archive.entries:
            vec = np.asarray(archive.entries[utt_id], dtype="<f4")
            if vec.shape != (archive.dim,):
                raise DimMismatch(
                    f"entry {utt_id!r} length {vec.shape} != archive dim {archive.dim}"
                )
            id_bytes = utt_id.encode()
            f.write(struct.pack("<H", len(id_bytes)))
            f.write(id_bytes)
            f.write(vec.tobytes())


def read_archive(path: str | os.PathLike) -> EmbeddingArchive:
    with open(path, "rb") as f:
        data = f.read()

    def take(n: int, pos: int) -> tuple[bytes, int]:
        if pos + n > len(data):
            raise TruncatedFile(f"{path}: truncated at byte {pos}")
        return data[pos:pos + n], pos + n

    chunk, pos = take(4, 0)
    if chunk != ARCHIVE_MAGIC:
        raise BadMagic(f"{path}: bad magic {chunk!r}")
    chunk, pos = take(18, pos)
    version, dim, count, model_len = struct.unpack("<IIQH", chunk)
    if version != ARCHIVE_VERSION:
        raise BadMagic(f"{path}: unsupported version {version}")
    chunk, pos = take(model_len, pos)
    model_id = chunk.decode()
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        chunk, pos = take(2, pos)
        (id_len,) = struct.unpack("<H", chunk)
        chunk, pos = take(id_len, pos)
        utt_id = chunk.decode()
        chunk, pos = take(4 * dim, pos)
        vec = np.frombuffer(chunk, dtype="<f4").copy()
        if len(vec) != dim:
            raise DimMismatch(f"{path}: entry {utt_id!r} length {len(vec)} != dim {dim}")
        entries[utt_id] = vec
    return EmbeddingArchive(dim=dim, model_id=model_id, entries=entries)


def cosine_score(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"vector lengths differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def score_trials(trials: list[TrialPair], archive: EmbeddingArchive) -> list[ScoreRecord]:
    return [
        ScoreRecord(trial=t, raw_score=cosine_score(archive.vector(t.enroll_utt),
                                                    archive.vector(t.test_utt)))
        for t in trials
    ]


def snorm(
    scores: list[ScoreRecord],
    archive: EmbeddingArchive,
    cohort: list[str],
    top_k: int = DEFAULT_SNORM_TOP_K,
) -> list[ScoreRecord]:
    """Adaptive symmetric s-norm with top-k cohort selection.

    For trial (e, t): score e and t against the cohort, keep the top_k
    highest cosine scores per side, and normalize
    s' = ((s - mu_e)/sigma_e + (s - mu_t)/sigma_t) / 2.
    """
    if not cohort:
        raise DegenerateCohort("empty cohort")
    top_k = min(top_k, len(cohort))
    if top_k < 1:
        raise DegenerateCohort("top_k must be >= 1")
    cohort_mat = np.stack([archive.vector(u) for u in cohort]).astype(np.float64)
    norms = np.linalg.norm(cohort_mat, axis=1)
    if np.any(norms == 0):
        raise ZeroVector("cohort contains a zero embedding")
    cohort_unit = cohort_mat / norms[:, None]

    stats_cache: dict[str, tuple[float, float]] = {}

    def stats(utt_id: str) -> tuple[float, float]:
        if utt_id not in stats_cache:
            v = np.asarray(archive.vector(utt_id), dtype=np.float64)
            nv = np.linalg.norm(v)
            if nv == 0:
                raise ZeroVector(f"zero embedding for {utt_id!r}")
            sims = cohort_unit @ (v / nv)
            top = np.sort(sims)[-top_k:]
            mu = float(np.mean(top))
            sigma = float(np.std(top))
            if sigma == 0:
                raise DegenerateCohort(f"zero-variance cohort scores for {utt_id!r}")
            stats_cache[utt_id] = (mu, sigma)
        return stats_cache[utt_id]

    out = []
    for rec in scores:
        mu_e, sig_e = stats(rec.trial.enroll_utt)
        mu_t, sig_t = stats(rec.trial.test_utt)
        normalized = 0.5 * ((rec.raw_score - mu_e) / sig_e + (rec.raw_score - mu_t) / sig_t)
        out.append(replace(rec, normalized_score=normalized))
    return out


def _far_frr_at(threshold: float, targets: np.ndarray, nontargets: np.ndarray) -> tuple[float, float]:
    far = float(np.mean(nontargets >= threshold))
    frr = float(np.mean(targets < threshold))
    return far, frr


def _split_by_label(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = list(labels)
    if len(scores) != len(labels):
        raise LengthMismatch("scores and labels differ in length")
    targets = np.array([s for s, l in zip(scores, labels) if l == "target"])
    nontargets = np.array([s for s, l in zip(scores, labels) if l == "nontarget"])
    if len(targets) == 0 or len(nontargets) == 0:
        raise MissingClass("need at least one target and one nontarget score")
    return targets, nontargets


def compute_eer(scores, labels) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Sweeps thresholds over the score values (FRR = targets below, FAR =
    nontargets at-or-above) and linearly interpolates between adjacent
    operating points when the curves do not cross exactly.
    """
    targets, nontargets = _split_by_label(scores, labels)
    thresholds = np.unique(np.concatenate([targets, nontargets]))
    # below min: FAR=1, FRR=0; above max: FAR=0, FRR=1 — crossing always exists
    thresholds = np.concatenate([[thresholds[0] - 1.0], thresholds,
                                 [thresholds[-1] + 1.0]])
    prev_far, prev_frr, prev_t = None, None, None
    for t in thresholds:
        far, frr = _far_frr_at(t, targets, nontargets)
        if far == frr:
            return far, float(t)
        if prev_far is not None and (prev_far - prev_frr) * (far - frr) < 0:
            # sign change: interpolate between the two operating points
            d_prev = prev_far - prev_frr
            d_cur = far - frr
            w = d_prev / (d_prev - d_cur)
            eer = prev_far + w * (far - prev_far)
            thr = prev_t + w * (t - prev_t)
            return float(eer), float(thr)
        prev_far, prev_frr, prev_t = far, frr, t
    raise AssertionError("EER crossing not found")  # unreachable


def det_points(scores, labels) -> list[tuple[float, float]]:
    """Monotone (FAR, FRR) staircase over all distinct thresholds."""
    targets, nontargets = _split_by_label(scores, labels)
    thresholds = np.unique(np.concatenate([targets, nontargets]))
    thresholds = np.concatenate([[thresholds[0] - 1.0], thresholds,
                                 [thresholds[-1] + 1.0]])
    points = []
    for t in thresholds:
        pt = _far_frr_at(t, targets, nontargets)
        if not points or points[-1] != pt:
            points.append(pt)
    return points


def det_thresholds(scores, labels) -> list[tuple[float, float, float]]:
    """(threshold, FAR, FRR) rows for CSV export."""
    targets, nontargets = _split_by_label(scores, labels)
    thresholds = np.unique(np.concatenate([targets, nontargets]))
    return [(float(t), *_far_frr_at(t, targets, nontargets)) for t in thresholds]
