"""Acceptance gate: one test per release criterion, each printing a
pass/fail line at its stated tolerance and runtime budget."""

import json
import os
import time

import numpy as np
import pytest

from svkit.audio import AudioBuffer, rms_power
from svkit.augment import fft_convolve_full, mix_at_snr
from svkit.cli import main
from svkit.corpus import Manifest, UtteranceRecord, build_manifest, stratified_split
from svkit.scoring import EmbeddingArchive, compute_eer, cosine_score, snorm, score_trials, write_archive
from svkit.trainer import AdapterModel, TrainerConfig, forward_backward, train
from svkit.corpus import TrialPair, write_manifest, write_trials

from conftest import make_speaker_tree, make_wav
from test_augment import direct_convolve
from test_cli import tree_bytes
from test_scoring import brute_force_eer
from test_trainer import fd_gradient, make_cluster_data, make_trials, random_pk_batch


def report(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" — {detail}" if detail else ""))
    assert ok, f"{name}: {detail}"


class TestAcceptance:
    def test_eer_oracle_equivalence(self):
        # 200 random score sets (<= 50 scores) vs brute-force sweep, 1e-9
        rng = np.random.default_rng(101)
        t0 = time.time()
        worst = 0.0
        for _ in range(200):
            n = int(rng.integers(2, 51))
            n_t = int(rng.integers(1, n))
            scores = list(np.round(rng.standard_normal(n), 3))  # force ties too
            labels = ["target"] * n_t + ["nontarget"] * (n - n_t)
            eer, _ = compute_eer(scores, labels)
            worst = max(worst, abs(eer - brute_force_eer(scores, labels)))
        elapsed = time.time() - t0
        report("EER oracle equivalence",
               worst <= 1e-9 and elapsed < 5.0,
               f"max |diff| {worst:.2e}, {elapsed:.2f}s")

    def test_snr_fidelity(self):
        # 100 random mixes, component SNR within 0.01 dB of requested
        rng = np.random.default_rng(102)
        t0 = time.time()
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(1000, 8000))
            sig = AudioBuffer(0.2 * rng.standard_normal(n), 16000)
            m = int(rng.integers(500, 8000))
            noise = AudioBuffer(0.2 * rng.standard_normal(m), 16000)
            snr = float(rng.uniform(5.0, 15.0))
            out = mix_at_snr(sig, noise, snr)
            # reconstruct the two components from the construction: the mix
            # is c*(sig + alpha*noise_fit); measure their power ratio
            noise_fit = np.tile(noise.samples, -(-n // m))[:n]
            alpha = rms_power(sig) / (
                np.sqrt(np.mean(np.square(noise_fit))) * 10 ** (snr / 20))
            mixed = sig.samples + alpha * noise_fit
            c = 0.99 / np.max(np.abs(mixed)) if np.max(np.abs(mixed)) > 1 else 1.0
            assert np.allclose(out.samples, c * mixed, atol=1e-12)
            measured = 10 * np.log10(np.mean(np.square(c * sig.samples))
                                     / np.mean(np.square(c * alpha * noise_fit)))
            worst = max(worst, abs(measured - snr))
        elapsed = time.time() - t0
        report("SNR fidelity", worst <= 0.01 and elapsed < 10.0,
               f"max |err| {worst:.2e} dB, {elapsed:.2f}s")

    def test_convolution_oracle(self):
        # 50 random signal/RIR pairs: FFT overlap-add vs direct convolution
        rng = np.random.default_rng(103)
        t0 = time.time()
        worst = 0.0
        for _ in range(50):
            n = int(rng.integers(2, 4097))
            m = int(rng.integers(1, 513))
            x = rng.standard_normal(n)
            h = rng.standard_normal(m)
            got = fft_convolve_full(x, h)
            want = direct_convolve(x, h)
            rel = np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-30)
            worst = max(worst, rel)
        elapsed = time.time() - t0
        report("Convolution oracle", worst <= 1e-6 and elapsed < 10.0,
               f"max rel err {worst:.2e}, {elapsed:.2f}s")

    def test_gradient_check(self):
        # 50 random adapter/batch pairs vs central finite differences
        rng = np.random.default_rng(104)
        t0 = time.time()
        worst = 0.0
        for _ in range(50):
            d_in = int(rng.integers(3, 8))
            d_out = int(rng.integers(2, d_in + 1))
            p = int(rng.integers(2, 4))
            k = int(rng.integers(2, 4))
            model = AdapterModel.init_random(d_in, d_out,
                                             seed=int(rng.integers(1 << 30)))
            x, labels = random_pk_batch(rng, p, k, d_in)
            margin = float(rng.uniform(0.1, 0.5))
            _, (g_w, g_b) = forward_backward(model, x, labels, margin)
            fd_w, fd_b = fd_gradient(model, x, labels, margin)
            for g, fd in ((g_w, fd_w), (g_b, fd_b)):
                mask = np.abs(g) > 1e-6
                if mask.any():
                    worst = max(worst, float(np.max(
                        np.abs(g[mask] - fd[mask]) / np.abs(g[mask]))))
        elapsed = time.time() - t0
        report("Gradient check", worst < 1e-4 and elapsed < 30.0,
               f"max rel err {worst:.2e}, {elapsed:.2f}s")

    def test_directional_finetuning(self):
        # 40 Gaussian speaker clusters in 64-dim latent space (16 speaker-
        # bearing dims + dominant shared nuisance), pushed through a random
        # full-rank scrambling matrix to simulate a mismatched encoder.
        # Cosine on the scrambled embeddings must be near-chance; adapter
        # training must recover verification.
        t0 = time.time()
        rng = np.random.default_rng(2024)
        n_spk, n_utt, dim, d_disc = 40, 20, 64, 16
        means = rng.standard_normal((n_spk, d_disc))
        means /= np.linalg.norm(means, axis=1, keepdims=True)
        scramble = rng.standard_normal((dim, dim))
        assert np.linalg.matrix_rank(scramble) == dim
        entries, records = {}, []
        for s in range(n_spk):
            for u in range(n_utt):
                z = np.zeros(dim)
                z[:d_disc] = means[s] + 0.08 * rng.standard_normal(d_disc)
                z[d_disc:] = 0.7 * rng.standard_normal(dim - d_disc)
                uid = f"s{s}/u{u}"
                entries[uid] = (scramble @ z).astype(np.float32)
                records.append(UtteranceRecord(uid, f"s{s}", "/none", 4.0, "train"))
        archive = EmbeddingArchive(dim=dim, model_id="scrambled", entries=entries)
        manifest = Manifest(records)
        trials = make_trials(manifest, 500, 500, rng)

        labels = [t.label for t in trials]
        baseline, _ = compute_eer(
            [cosine_score(entries[t.enroll_utt], entries[t.test_utt]) for t in trials],
            labels)

        config = TrainerConfig(lr=1e-2, margin=0.3, max_epochs=250,
                               batch_speakers=8, utts_per_speaker=4, seed=1,
                               plateau_patience=20, early_stop_patience=60)
        model = AdapterModel.init_random(dim, 32, seed=1)
        _best, history = train(model, archive, manifest, archive, trials, config)
        elapsed = time.time() - t0
        report("Directional finetuning reproduction",
               baseline > 0.20 and history.best_val_eer < 0.05 and elapsed < 120.0,
               f"baseline EER {baseline*100:.1f}% -> {history.best_val_eer*100:.2f}%, "
               f"{elapsed:.0f}s")

    def test_split_contract(self, tmp_path):
        # 500 synthetic speakers with 7..100 utterances; also checks the
        # < 3 s exclusion through the manifest path on a small real tree
        rng = np.random.default_rng(106)
        records = []
        for s in range(500):
            n = int(rng.integers(7, 101))
            for u in range(n):
                records.append(UtteranceRecord(
                    f"s{s:04d}/u{u:04d}", f"s{s:04d}", "/none", 4.0))
        m = Manifest(records)
        out = stratified_split(m, seed=9)
        ok = True
        for spk, utts in out.by_speaker().items():
            n = len(utts)
            for split, ratio in (("train", 0.70), ("val", 0.15), ("test", 0.15)):
                got = sum(1 for r in utts if r.split == split)
                if abs(got - ratio * n) >= 1.0 + 1e-9:
                    ok = False

        spk_dir = tmp_path / "spkZ"
        spk_dir.mkdir()
        make_wav(spk_dir / "short.wav", np.zeros(int(2.5 * 16000)))
        make_wav(spk_dir / "ok.wav", np.zeros(4 * 16000))
        built, summary = build_manifest(tmp_path)
        ok = ok and summary.n_excluded == 1 and len(built) == 1
        report("Split contract", ok,
               "per-speaker proportions within ±1 utterance; <3 s excluded")

    def test_determinism(self, tmp_path):
        # cmd_augment / cmd_split / cmd_trials / cmd_train byte-identical on
        # rerun with the same seed (run.json timestamps excluded)
        corpus_root = tmp_path / "corpus"
        make_speaker_tree(corpus_root, n_speakers=4, files_per_speaker=5)
        man = tmp_path / "m.jsonl"
        assert main(["manifest", "--source", str(corpus_root), "--out", str(man)]) == 0

        nd = tmp_path / "noises"
        rng = np.random.default_rng(0)
        (nd / "noise").mkdir(parents=True)
        (nd / "rir").mkdir()
        make_wav(nd / "noise" / "n0.wav", 0.1 * rng.standard_normal(16000))
        make_wav(nd / "rir" / "r0.wav",
                 np.exp(-np.arange(512) / 80.0) * rng.standard_normal(512))

        arc_rng = np.random.default_rng(1)
        archive, cl_manifest = make_cluster_data(8, 6, 16, arc_rng, spread=0.05)
        trials = make_trials(cl_manifest, 30, 30, arc_rng)
        arc_path = tmp_path / "emb.svem"
        write_archive(archive, arc_path)
        cl_man_path = tmp_path / "cl.jsonl"
        cl_tri_path = tmp_path / "cl_trials.txt"
        write_manifest(cl_manifest, cl_man_path)
        write_trials(trials, cl_tri_path)

        ok = True
        details = []
        for label, argv_fn in [
            ("split", lambda i: ["split", "--manifest", str(man),
                                 "--out", str(tmp_path / f"split{i}" / "s.jsonl"),
                                 "--seed", "42"]),
            ("trials", lambda i: ["trials", "--manifest", str(man), "--split", "all",
                                  "--n-target", "10", "--n-nontarget", "10",
                                  "--seed", "42",
                                  "--out", str(tmp_path / f"trials{i}" / "t.txt")]),
            ("augment", lambda i: ["augment", "--manifest", str(man),
                                   "--noise-dir", str(nd),
                                   "--out-dir", str(tmp_path / f"aug{i}"),
                                   "--p-noise", "0.4", "--p-babble", "0.3",
                                   "--babble-min", "2", "--babble-max", "4",
                                   "--p-reverb", "0.5", "--seed", "42",
                                   "--jobs", "2"]),
            ("train", lambda i: ["train", "--train-archive", str(arc_path),
                                 "--train-manifest", str(cl_man_path),
                                 "--val-archive", str(arc_path),
                                 "--val-trials", str(cl_tri_path),
                                 "--out-dir", str(tmp_path / f"train{i}"),
                                 "--max-epochs", "3", "--batch-speakers", "3",
                                 "--utts-per-speaker", "2", "--seed", "42"]),
        ]:
            runs = []
            for i in range(2):
                argv = argv_fn(i)
                out_arg = argv[argv.index("--out") + 1] if "--out" in argv \
                    else argv[argv.index("--out-dir") + 1]
                os.makedirs(os.path.dirname(out_arg) if "--out" in argv else out_arg,
                            exist_ok=True)
                assert main(argv) == 0
                root = os.path.dirname(out_arg) if "--out" in argv else out_arg
                runs.append(tree_bytes(root))
            same = runs[0] == runs[1]
            ok = ok and same
            details.append(f"{label}:{'=' if same else '!='}")
        report("Determinism", ok, " ".join(details))

    def test_snorm_sanity(self):
        # per-trial-constant cohort statistics: normalized EER == raw EER
        rng = np.random.default_rng(108)
        entries = {}
        for i in range(40):
            th = rng.uniform(0, 2 * np.pi)
            entries[f"u{i}"] = np.array([np.cos(th), np.sin(th), 0.0],
                                        dtype=np.float32)
        for j in range(4):
            a = j * np.pi / 2
            entries[f"c{j}"] = np.array([np.cos(a), np.sin(a), 0.0],
                                        dtype=np.float32)
        arc = EmbeddingArchive(dim=3, model_id="t", entries=entries)
        trials = []
        for i in range(0, 20, 2):
            trials.append(TrialPair(f"u{i}", f"u{i+1}", "target"))
        for i in range(20, 40, 2):
            trials.append(TrialPair(f"u{i}", f"u{i+1}", "nontarget"))
        records = score_trials(trials, arc)
        normed = snorm(records, arc, [f"c{j}" for j in range(4)], top_k=4)
        labels = [t.label for t in trials]
        eer_raw, _ = compute_eer([r.raw_score for r in records], labels)
        eer_norm, _ = compute_eer([r.normalized_score for r in normed], labels)
        diff = abs(eer_norm - eer_raw)
        report("S-norm sanity", diff <= 1e-9,
               f"raw {eer_raw:.4f} vs normalized {eer_norm:.4f}")
