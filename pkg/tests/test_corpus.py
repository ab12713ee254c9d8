import json

import numpy as np
import pytest

from svkit.corpus import (
    Manifest,
    TrialPair,
    UtteranceRecord,
    build_manifest,
    generate_trials,
    largest_remainder,
    read_manifest,
    read_trials,
    stratified_split,
    write_manifest,
    write_trials,
)
from svkit.errors import (
    BadRatios,
    EmptyManifest,
    InsufficientSpeakers,
    InsufficientUtterances,
    MalformedRow,
    NotEnoughDistinctPairs,
    UnreadableSource,
)

from conftest import make_speaker_tree, make_wav


def synthetic_manifest(n_speakers, utts_per_speaker, seed=0):
    rng = np.random.default_rng(seed)
    records = []
    for s in range(n_speakers):
        n = utts_per_speaker(s, rng) if callable(utts_per_speaker) else utts_per_speaker
        for u in range(n):
            records.append(UtteranceRecord(
                f"s{s:04d}/u{u:04d}", f"s{s:04d}", f"/none/s{s}/u{u}.wav", 4.0))
    return Manifest(records, name="synthetic")


class TestBuildManifest:
    def test_duration_filter(self, tmp_path):
        spk = tmp_path / "spkA"
        spk.mkdir()
        make_wav(spk / "short.wav", np.zeros(int(2.9 * 16000)))   # 2.9 s -> excluded
        make_wav(spk / "exact.wav", np.zeros(3 * 16000))          # 3.0 s -> included
        make_wav(spk / "long.wav", np.zeros(4 * 16000))
        m, summary = build_manifest(tmp_path)
        ids = {r.utterance_id for r in m.records}
        assert ids == {"spkA/exact", "spkA/long"}
        assert summary.n_excluded == 1

    def test_directory_counts(self, tmp_path):
        make_speaker_tree(tmp_path, n_speakers=2, files_per_speaker=3)
        m, summary = build_manifest(tmp_path)
        assert summary.n_utterances == 6
        assert summary.n_speakers == 2

    def test_jsonl_source(self, tmp_path):
        src = tmp_path / "m.jsonl"
        rows = [
            {"utterance_id": "a/1", "speaker_id": "a", "path": "/x/1.wav", "duration_s": 5.0},
            {"utterance_id": "a/2", "speaker_id": "a", "path": "/x/2.wav", "duration_s": 2.0},
        ]
        src.write_text("".join(json.dumps(r) + "\n" for r in rows))
        m, summary = build_manifest(src)
        assert len(m) == 1 and summary.n_excluded == 1

    def test_csv_source(self, tmp_path):
        src = tmp_path / "m.csv"
        src.write_text("utterance_id,speaker_id,path,duration_s\n"
                       "a/1,a,/x/1.wav,5.0\nb/1,b,/x/2.wav,3.0\n")
        m, _ = build_manifest(src)
        assert len(m) == 2

    def test_malformed_row(self, tmp_path):
        src = tmp_path / "m.jsonl"
        src.write_text(json.dumps({"utterance_id": "a/1", "path": "/x.wav"}) + "\n")
        with pytest.raises(MalformedRow):
            build_manifest(src)

    def test_missing_source(self, tmp_path):
        with pytest.raises(UnreadableSource):
            build_manifest(tmp_path / "nope")

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            Manifest([
                UtteranceRecord("x", "a", "/p", 4.0),
                UtteranceRecord("x", "b", "/q", 4.0),
            ])


class TestLargestRemainder:
    def test_exact(self):
        assert largest_remainder(100, (0.70, 0.15, 0.15)) == [70, 15, 15]

    def test_twenty(self):
        # oracle: floor then distribute by largest fractional part
        assert largest_remainder(20, (0.70, 0.15, 0.15)) == [14, 3, 3]

    @pytest.mark.parametrize("n", range(1, 60))
    def test_sums_and_bounds(self, n):
        ratios = (0.70, 0.15, 0.15)
        counts = largest_remainder(n, ratios)
        assert sum(counts) == n
        for c, r in zip(counts, ratios):
            assert abs(c - n * r) < 1.0 + 1e-9


class TestStratifiedSplit:
    def test_hundred_utterances(self):
        m = synthetic_manifest(1, 100)
        out = stratified_split(m, seed=1)
        counts = {s: len(out.subset(s)) for s in ("train", "val", "test")}
        assert counts == {"train": 70, "val": 15, "test": 15}

    def test_single_utterance_speaker(self):
        m = synthetic_manifest(1, 1)
        out = stratified_split(m, seed=1)
        assert out.records[0].split == "train"

    def test_two_utterance_speaker(self):
        m = synthetic_manifest(1, 2)
        out = stratified_split(m, seed=1)
        assert sorted(r.split for r in out.records) == ["test", "train"]

    def test_twenty_utterances(self):
        m = synthetic_manifest(1, 20)
        out = stratified_split(m, seed=1)
        counts = {s: len(out.subset(s)) for s in ("train", "val", "test")}
        assert counts == {"train": 14, "val": 3, "test": 3}

    def test_partition_and_proportions(self):
        m = synthetic_manifest(50, lambda s, rng: int(rng.integers(3, 40)), seed=3)
        out = stratified_split(m, seed=7)
        assert all(r.split in ("train", "val", "test") for r in out.records)
        for spk, utts in out.by_speaker().items():
            n = len(utts)
            for split, ratio in (("train", 0.70), ("val", 0.15), ("test", 0.15)):
                got = sum(1 for r in utts if r.split == split)
                assert abs(got - ratio * n) < 1.0 + 1e-9

    def test_deterministic(self):
        m = synthetic_manifest(10, 9)
        a = stratified_split(m, seed=5)
        b = stratified_split(m, seed=5)
        assert [r.split for r in a.records] == [r.split for r in b.records]
        c = stratified_split(m, seed=6)
        assert [r.split for r in a.records] != [r.split for r in c.records]

    def test_speaker_disjoint(self):
        m = synthetic_manifest(20, 5)
        out = stratified_split(m, seed=2, speaker_disjoint=True)
        for utts in out.by_speaker().values():
            assert len({r.split for r in utts}) == 1

    def test_bad_ratios(self):
        m = synthetic_manifest(2, 5)
        with pytest.raises(BadRatios):
            stratified_split(m, ratios=(0.5, 0.2, 0.2))

    def test_empty(self):
        with pytest.raises(EmptyManifest):
            stratified_split(Manifest([], name="e"))


class TestGenerateTrials:
    def _split_all(self, m):
        return Manifest([UtteranceRecord(r.utterance_id, r.speaker_id, r.path,
                                         r.duration_s, "test") for r in m.records],
                        name=m.name)

    def test_insufficient_speakers(self):
        m = self._split_all(synthetic_manifest(1, 10))
        with pytest.raises(InsufficientSpeakers):
            generate_trials(m, "test", 0, 10)

    def test_exact_counts(self):
        m = self._split_all(synthetic_manifest(10, 15))
        trials = generate_trials(m, "test", 500, 500, seed=3)
        assert sum(t.label == "target" for t in trials) == 500
        assert sum(t.label == "nontarget" for t in trials) == 500

    def test_all_target_pairs_enumerated(self):
        # 3 speakers x 2 utterances: C(2,2)=1 target pair per speaker
        m = self._split_all(synthetic_manifest(3, 2))
        trials = generate_trials(m, "test", 3, 0, seed=1)
        assert len(trials) == 3
        spk = {t.enroll_utt.split("/")[0] for t in trials}
        assert len(spk) == 3

    def test_labels_consistent_and_no_self_pairs(self):
        m = self._split_all(synthetic_manifest(6, 8))
        trials = generate_trials(m, "test", 100, 100, seed=9)
        for t in trials:
            assert t.enroll_utt != t.test_utt
            same = t.enroll_utt.split("/")[0] == t.test_utt.split("/")[0]
            assert same == (t.label == "target")

    def test_too_many_requested(self):
        m = self._split_all(synthetic_manifest(2, 2))
        with pytest.raises(NotEnoughDistinctPairs):
            generate_trials(m, "test", 100, 0)
        with pytest.raises(NotEnoughDistinctPairs):
            generate_trials(m, "test", 0, 100)

    def test_no_target_capable_speaker(self):
        m = self._split_all(synthetic_manifest(3, 1))
        with pytest.raises(InsufficientUtterances):
            generate_trials(m, "test", 5, 0)

    def test_deterministic(self):
        m = self._split_all(synthetic_manifest(8, 6))
        a = generate_trials(m, "test", 40, 40, seed=11)
        b = generate_trials(m, "test", 40, 40, seed=11)
        assert a == b

    def test_rejection_path_without_replacement(self):
        # large pair space triggers the rejection-sampling branch
        m = self._split_all(synthetic_manifest(40, 30))
        trials = generate_trials(m, "test", 0, 500, seed=2)
        keys = {tuple(sorted((t.enroll_utt, t.test_utt))) for t in trials}
        assert len(keys) == 500


class TestFileIO:
    def test_manifest_roundtrip(self, tmp_path):
        m = stratified_split(synthetic_manifest(4, 7), seed=1)
        path = tmp_path / "m.jsonl"
        write_manifest(m, path)
        back = read_manifest(path)
        assert back.records == m.records

    def test_trials_roundtrip(self, tmp_path):
        trials = [TrialPair("a/1", "a/2", "target"), TrialPair("a/1", "b/1", "nontarget")]
        path = tmp_path / "t.txt"
        write_trials(trials, path)
        assert path.read_text() == "a/1 a/2 1\na/1 b/1 0\n"
        assert read_trials(path) == trials
