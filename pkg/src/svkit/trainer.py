"""Triplet-loss training of an affine embedding adapter.

Batch-hard online mining (hardest positive / hardest negative per anchor),
exact analytic gradients, Adam, plateau LR decay, and early stopping on
validation EER. The adapter output is always length-normalized, so
Euclidean distance in the loss is monotone in the cosine used at scoring.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import Manifest, TrialPair
from .errors import DegenerateBatch, DimMismatch, NonFiniteLoss
from .scoring import EmbeddingArchive, compute_eer, cosine_score

CHECKPOINT_MAGIC = b"SVAD"
CHECKPOINT_VERSION = 1

_DIST_EPS = 1e-12


@dataclass
class AdapterModel:
    weight: np.ndarray  # (d_out, d_in)
    bias: np.ndarray    # (d_out,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        d_out, d_in = self.weight.shape
        if self.bias.shape != (d_out,):
            raise DimMismatch("bias shape does not match weight rows")
        if d_out > d_in:
            raise ValueError("adapter must not expand dimensionality (d_out <= d_in)")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("non-finite adapter parameters")

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init_random(cls, d_in: int, d_out: int, seed: int = 0) -> "AdapterModel":
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(d_in)
        return cls(weight=rng.normal(0.0, scale, size=(d_out, d_in)),
                   bias=np.zeros(d_out))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Map vectors (n, d_in) through the adapter and length-normalize."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.d_in:
            raise DimMismatch(f"input dim {x.shape[1]} != adapter d_in {self.d_in}")
        y = x @ self.weight.T + self.bias
        norms = np.linalg.norm(y, axis=1, keepdims=True)
        norms = np.maximum(norms, _DIST_EPS)
        return y / norms

    def copy(self) -> "AdapterModel":
        return AdapterModel(self.weight.copy(), self.bias.copy())


@dataclass
class TrainerConfig:
    margin: float = 0.2
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_patience: int = 8
    plateau_factor: float = 0.5
    early_stop_patience: int = 8
    max_epochs: int = 50
    batch_speakers: int = 8   # P
    utts_per_speaker: int = 4  # K
    seed: int = 0
    drop_easy_triples: bool = False
    semi_hard: bool = False

    def __post_init__(self):
        if self.margin <= 0 or self.lr <= 0:
            raise ValueError("margin and lr must be positive")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.batch_speakers < 2 or self.utts_per_speaker < 2:
            raise ValueError("need P >= 2 speakers and K >= 2 utterances per batch")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_eer: float
    lr: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = -1
    best_val_eer: float = float("inf")

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "val_eer", "lr"])
            for e in self.epochs:
                w.writerow([e.epoch, f"{e.loss:.8f}", f"{e.val_eer:.8f}", f"{e.lr:.10g}"])


def triplet_loss(anchor: np.ndarray, positive: np.ndarray, negative: np.ndarray,
                 margin: float) -> float:
    """Hinge on Euclidean distances: max(0, d(a,p) - d(a,n) + margin)."""
    d_ap = float(np.linalg.norm(np.asarray(anchor) - np.asarray(positive)))
    d_an = float(np.linalg.norm(np.asarray(anchor) - np.asarray(negative)))
    return max(0.0, d_ap - d_an + margin)


def _pairwise_distances(z: np.ndarray) -> np.ndarray:
    sq = np.sum(z * z, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    return np.sqrt(np.maximum(d2, 0.0))


def mine_hard_batch(
    embeddings: np.ndarray,
    labels,
    margin: float,
    drop_easy: bool = False,
) -> list[tuple[int, int, int]]:
    """Batch-hard mining: per anchor, the farthest same-speaker positive and
    the closest different-speaker negative. Zero-loss triples are kept by
    default (batch-hard convention); drop_easy removes them."""
    z = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    labels = np.asarray(labels)
    n = len(z)
    if labels.shape != (n,):
        raise DimMismatch("labels length does not match embeddings")
    for lab in np.unique(labels):
        if np.sum(labels == lab) < 2:
            raise DegenerateBatch(f"speaker {lab!r} has < 2 utterances in batch")
    if len(np.unique(labels)) < 2:
        raise DegenerateBatch("batch needs at least 2 speakers")
    dist = _pairwise_distances(z)
    same = labels[:, None] == labels[None, :]
    triples = []
    for a in range(n):
        pos_mask = same[a].copy()
        pos_mask[a] = False
        neg_mask = ~same[a]
        pos_d = np.where(pos_mask, dist[a], -np.inf)
        neg_d = np.where(neg_mask, dist[a], np.inf)
        p = int(np.argmax(pos_d))
        nq = int(np.argmin(neg_d))
        if drop_easy and dist[a, p] - dist[a, nq] + margin <= 0:
            continue
        triples.append((a, p, nq))
    return triples


def forward_backward(
    model: AdapterModel,
    batch: np.ndarray,
    labels,
    margin: float,
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Mean batch-hard triplet loss over the adapter outputs, with exact
    analytic gradients w.r.t. weight and bias."""
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[1] != model.d_in:
        raise DimMismatch(f"batch dim {x.shape[1]} != adapter d_in {model.d_in}")
    y = x @ model.weight.T + model.bias
    norms = np.maximum(np.linalg.norm(y, axis=1, keepdims=True), _DIST_EPS)
    z = y / norms

    triples = mine_hard_batch(z, labels, margin)
    m = len(triples)
    dist = _pairwise_distances(z)

    loss = 0.0
    g_z = np.zeros_like(z)
    for a, p, nq in triples:
        d_ap = dist[a, p]
        d_an = dist[a, nq]
        h = d_ap - d_an + margin
        if h <= 0:
            continue
        loss += h
        if d_ap > _DIST_EPS:
            u = (z[a] - z[p]) / d_ap
            g_z[a] += u
            g_z[p] -= u
        if d_an > _DIST_EPS:
            v = (z[a] - z[nq]) / d_an
            g_z[a] -= v
            g_z[nq] += v
    loss /= m
    g_z /= m

    # back through length normalization: g_y = (g_z - (g_z . z) z) / ||y||
    g_y = (g_z - np.sum(g_z * z, axis=1, keepdims=True) * z) / norms
    g_w = g_y.T @ x
    g_b = g_y.sum(axis=0)
    return float(loss), (g_w, g_b)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> list[np.ndarray]:
    """Standard bias-corrected Adam update; mutates state, returns new params."""
    state.t += 1
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * g * g
        m_hat = state.m[i] / (1 - beta1 ** state.t)
        v_hat = state.v[i] / (1 - beta2 ** state.t)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return out


def _assemble_epoch_batches(
    utt_ids_by_speaker: dict[str, list[str]],
    p_speakers: int,
    k_utts: int,
    rng: np.random.Generator,
) -> list[list[str]]:
    """Shuffle speakers and emit P-speaker batches, K utterances each
    (sampled without replacement when a speaker has >= K, else with)."""
    speakers = sorted(s for s, utts in utt_ids_by_speaker.items() if len(utts) >= 2)
    if len(speakers) < p_speakers:
        raise DegenerateBatch(
            f"need {p_speakers} speakers with >= 2 utterances, have {len(speakers)}"
        )
    rng.shuffle(speakers)
    batches = []
    for start in range(0, len(speakers) - p_speakers + 1, p_speakers):
        batch = []
        for spk in speakers[start:start + p_speakers]:
            utts = sorted(utt_ids_by_speaker[spk])
            if len(utts) >= k_utts:
                idx = rng.choice(len(utts), size=k_utts, replace=False)
            else:
                idx = rng.integers(0, len(utts), size=k_utts)
            batch.extend((spk, utts[i]) for i in idx)
        batches.append(batch)
    return batches


def validation_eer(model: AdapterModel, archive: EmbeddingArchive,
                   trials: list[TrialPair]) -> float:
    ids = sorted({t.enroll_utt for t in trials} | {t.test_utt for t in trials})
    mapped = model.apply(np.stack([archive.vector(u) for u in ids]))
    vec = dict(zip(ids, mapped))
    scores = [cosine_score(vec[t.enroll_utt], vec[t.test_utt]) for t in trials]
    labels = [t.label for t in trials]
    eer, _thr = compute_eer(scores, labels)
    return eer


def train(
    model: AdapterModel,
    train_archive: EmbeddingArchive,
    train_manifest: Manifest,
    val_archive: EmbeddingArchive,
    val_trials: list[TrialPair],
    config: TrainerConfig,
) -> tuple[AdapterModel, TrainHistory]:
    """Full training loop: shuffled epochs of P x K batch-hard triplet
    updates, validation EER after each epoch, ReduceLROnPlateau-style decay,
    early stopping, best-snapshot return."""
    rng = np.random.default_rng(config.seed)
    split_ids = {r.utterance_id for r in train_manifest.records
                 if r.split in ("train", "unassigned")}
    by_speaker: dict[str, list[str]] = {}
    for r in train_manifest.records:
        if r.utterance_id in split_ids and r.utterance_id in train_archive.entries:
            by_speaker.setdefault(r.speaker_id, []).append(r.utterance_id)

    history = TrainHistory()
    params = [model.weight.copy(), model.bias.copy()]
    state = AdamState.for_params(params)
    lr = config.lr
    best = model.copy()
    bad_epochs = 0
    plateau_bad = 0

    for epoch in range(1, config.max_epochs + 1):
        batches = _assemble_epoch_batches(
            by_speaker, config.batch_speakers, config.utts_per_speaker, rng)
        epoch_loss = 0.0
        n_batches = 0
        for batch in batches:
            labels = [spk for spk, _utt in batch]
            x = np.stack([train_archive.vector(utt) for _spk, utt in batch])
            cur = AdapterModel(params[0], params[1])
            loss, (g_w, g_b) = forward_backward(cur, x, labels, config.margin)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}")
            params = adam_step(params, [g_w, g_b], state, lr,
                               config.adam_beta1, config.adam_beta2, config.adam_eps)
            epoch_loss += loss
            n_batches += 1
        epoch_loss /= max(n_batches, 1)

        cur = AdapterModel(params[0], params[1])
        val_eer = validation_eer(cur, val_archive, val_trials)
        history.epochs.append(EpochRecord(epoch=epoch, loss=epoch_loss,
                                          val_eer=val_eer, lr=lr))

        if val_eer < history.best_val_eer:
            history.best_val_eer = val_eer
            history.best_epoch = epoch
            best = cur.copy()
            bad_epochs = 0
            plateau_bad = 0
        else:
            bad_epochs += 1
            plateau_bad += 1
            if plateau_bad >= config.plateau_patience:
                lr *= config.plateau_factor
                plateau_bad = 0
            if bad_epochs >= config.early_stop_patience:
                history.stop_reason = "early_stop"
                break
    else:
        history.stop_reason = "max_epochs"

    return best, history


def save_checkpoint(model: AdapterModel, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<III", CHECKPOINT_VERSION, model.d_in, model.d_out))
        f.write(model.weight.astype("<f4").tobytes())
        f.write(model.bias.astype("<f4").tobytes())


def load_checkpoint(path: str | os.PathLike) -> AdapterModel:
    from .errors import BadMagic, TruncatedFile
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path}: bad checkpoint magic")
    version, d_in, d_out = struct.unpack_from("<III", data, 4)
    if version != CHECKPOINT_VERSION:
        raise BadMagic(f"{path}: unsupported checkpoint version {version}")
    need = 16 + 4 * (d_in * d_out + d_out)
    if len(data) < need:
        raise TruncatedFile(f"{path}: checkpoint shorter than header promises")
    weight = np.frombuffer(data, dtype="<f4", count=d_in * d_out, offset=16)
    bias = np.frombuffer(data, dtype="<f4", count=d_out, offset=16 + 4 * d_in * d_out)
    return AdapterModel(weight.reshape(d_out, d_in).astype(np.float64),
                        bias.astype(np.float64))
