"""svkit: speaker-verification evaluation and classroom-noise augmentation."""

__version__ = "0.1.0"

from .audio import AudioBuffer, load_audio, resample, rms_power, write_wav
from .augment import AugmentPolicy, NoiseSource, apply_rir, augment_utterance, mix_at_snr, synth_babble
from .corpus import Manifest, TrialPair, UtteranceRecord, build_manifest, generate_trials, stratified_split
from .scoring import EmbeddingArchive, ScoreRecord, compute_eer, cosine_score, det_points, read_archive, snorm, write_archive
from .trainer import AdapterModel, TrainerConfig, TrainHistory, adam_step, forward_backward, mine_hard_batch, train, triplet_loss
