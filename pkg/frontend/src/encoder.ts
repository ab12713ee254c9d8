/**
 * Speaker encoders. The two built-in encoders mirror the dimensions of the
 * common pretrained baselines (x-vector: 512, ECAPA-TDNN: 192) but compute
 * deterministic log-mel-statistics embeddings locally, so extraction works
 * fully offline. Set SPEAKER_EMBEDDER_URL to POST audio to a real encoder
 * service instead; its output must match the expected dimension.
 */

import { AudioClip, PIPELINE_RATE_HZ } from "./wav.js";

export interface EncoderSpec {
  modelId: string;
  expectedDim: number;
  device: string;
}

export const BUILTIN_ENCODERS: Record<string, number> = {
  xvector: 512,
  ecapa: 192,
};

export function resolveEncoder(modelId: string, device = "cpu"): EncoderSpec {
  const dim = BUILTIN_ENCODERS[modelId];
  if (dim === undefined) {
    throw new Error(
      `unknown model '${modelId}' (expected one of: ${Object.keys(BUILTIN_ENCODERS).join(", ")})`,
    );
  }
  return { modelId, expectedDim: dim, device };
}

// --- DSP: frames -> log-mel energies ---

const FRAME_LEN = 400; // 25 ms at 16 kHz
const FRAME_HOP = 160; // 10 ms
const NFFT = 512;
const N_MEL = 40;

function hamming(n: number): Float64Array {
  const w = new Float64Array(n);
  for (let i = 0; i < n; i++) w[i] = 0.54 - 0.46 * Math.cos((2 * Math.PI * i) / (n - 1));
  return w;
}

/** Iterative radix-2 FFT; returns interleaved [re, im]. */
function fft(re: Float64Array, im: Float64Array): void {
  const n = re.length;
  for (let i = 1, j = 0; i < n; i++) {
    let bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      [re[i], re[j]] = [re[j], re[i]];
      [im[i], im[j]] = [im[j], im[i]];
    }
  }
  for (let len = 2; len <= n; len <<= 1) {
    const ang = (-2 * Math.PI) / len;
    const wr = Math.cos(ang);
    const wi = Math.sin(ang);
    for (let i = 0; i < n; i += len) {
      let cr = 1;
      let ci = 0;
      for (let k = 0; k < len / 2; k++) {
        const ur = re[i + k];
        const ui = im[i + k];
        const vr = re[i + k + len / 2] * cr - im[i + k + len / 2] * ci;
        const vi = re[i + k + len / 2] * ci + im[i + k + len / 2] * cr;
        re[i + k] = ur + vr;
        im[i + k] = ui + vi;
        re[i + k + len / 2] = ur - vr;
        im[i + k + len / 2] = ui - vi;
        const ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

function hzToMel(hz: number): number {
  return 2595 * Math.log10(1 + hz / 700);
}

function melFilterbank(nMel: number, nfft: number, rateHz: number): Float64Array[] {
  const melMax = hzToMel(rateHz / 2);
  const centers: number[] = [];
  for (let m = 0; m < nMel + 2; m++) {
    const mel = (m / (nMel + 1)) * melMax;
    const hz = 700 * (10 ** (mel / 2595) - 1);
    centers.push((hz / (rateHz / 2)) * (nfft / 2));
  }
  const bank: Float64Array[] = [];
  for (let m = 1; m <= nMel; m++) {
    const f = new Float64Array(nfft / 2 + 1);
    for (let k = 0; k <= nfft / 2; k++) {
      if (k > centers[m - 1] && k < centers[m]) {
        f[k] = (k - centers[m - 1]) / (centers[m] - centers[m - 1]);
      } else if (k >= centers[m] && k < centers[m + 1]) {
        f[k] = (centers[m + 1] - k) / (centers[m + 1] - centers[m]);
      }
    }
    bank.push(f);
  }
  return bank;
}

function logMelFrames(clip: AudioClip): Float64Array[] {
  const window = hamming(FRAME_LEN);
  const bank = melFilterbank(N_MEL, NFFT, clip.sampleRateHz);
  const frames: Float64Array[] = [];
  const x = clip.samples;
  for (let start = 0; start + FRAME_LEN <= x.length; start += FRAME_HOP) {
    const re = new Float64Array(NFFT);
    const im = new Float64Array(NFFT);
    for (let i = 0; i < FRAME_LEN; i++) re[i] = x[start + i] * window[i];
    fft(re, im);
    const power = new Float64Array(NFFT / 2 + 1);
    for (let k = 0; k <= NFFT / 2; k++) power[k] = re[k] * re[k] + im[k] * im[k];
    const mel = new Float64Array(N_MEL);
    for (let m = 0; m < N_MEL; m++) {
      let acc = 0;
      for (let k = 0; k <= NFFT / 2; k++) acc += bank[m][k] * power[k];
      mel[m] = Math.log(acc + 1e-10);
    }
    frames.push(mel);
  }
  return frames;
}

// --- deterministic projection to the encoder dimension ---

/** mulberry32: tiny seeded PRNG, stable across platforms. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function gaussianMatrix(rows: number, cols: number, seed: number): Float64Array {
  const rand = mulberry32(seed);
  const out = new Float64Array(rows * cols);
  for (let i = 0; i < out.length; i += 2) {
    // Box-Muller
    const u1 = Math.max(rand(), 1e-12);
    const u2 = rand();
    const r = Math.sqrt(-2 * Math.log(u1));
    out[i] = r * Math.cos(2 * Math.PI * u2);
    if (i + 1 < out.length) out[i + 1] = r * Math.sin(2 * Math.PI * u2);
  }
  return out;
}

function seedForModel(modelId: string): number {
  let h = 2166136261;
  for (const ch of modelId) {
    h ^= ch.charCodeAt(0);
    h = Math.imul(h, 16777619);
  }
  return h >>> 0;
}

/**
 * Deterministic embedding: per-mel-band mean and standard deviation over
 * frames (the classic statistics-pooling layer shape), projected to the
 * encoder dimension by a model-seeded Gaussian matrix, length-normalized.
 */
export function embedClip(clip: AudioClip, spec: EncoderSpec): Float32Array {
  if (clip.sampleRateHz !== PIPELINE_RATE_HZ) {
    throw new Error(`encoder expects ${PIPELINE_RATE_HZ} Hz input`);
  }
  const frames = logMelFrames(clip);
  if (frames.length === 0) throw new Error("utterance too short for one analysis frame");
  const nMel = frames[0].length;
  const stats = new Float64Array(2 * nMel);
  for (let m = 0; m < nMel; m++) {
    let mean = 0;
    for (const f of frames) mean += f[m];
    mean /= frames.length;
    let varAcc = 0;
    for (const f of frames) varAcc += (f[m] - mean) ** 2;
    stats[m] = mean;
    stats[nMel + m] = Math.sqrt(varAcc / frames.length);
  }
  const proj = gaussianMatrix(spec.expectedDim, stats.length, seedForModel(spec.modelId));
  const out = new Float32Array(spec.expectedDim);
  let norm = 0;
  for (let r = 0; r < spec.expectedDim; r++) {
    let acc = 0;
    for (let c = 0; c < stats.length; c++) acc += proj[r * stats.length + c] * stats[c];
    out[r] = acc;
    norm += acc * acc;
  }
  norm = Math.sqrt(norm);
  if (!(norm > 0) || !Number.isFinite(norm)) {
    throw new Error("degenerate embedding (zero or non-finite norm)");
  }
  for (let r = 0; r < spec.expectedDim; r++) out[r] /= norm;
  return out;
}

/** POST raw WAV bytes to an external encoder service, if configured. */
export async function embedViaService(
  url: string,
  wavBytes: Buffer,
  spec: EncoderSpec,
): Promise<Float32Array> {
  const res = await fetch(url, {
    method: "POST",
    headers: { "Content-Type": "application/octet-stream" },
    body: wavBytes as unknown as BodyInit,
  });
  if (!res.ok) throw new Error(`embedder service returned ${res.status}`);
  const data = (await res.json()) as { embedding?: number[] };
  if (!Array.isArray(data.embedding) || data.embedding.length !== spec.expectedDim) {
    throw new Error(
      `embedder service returned ${data.embedding?.length ?? "no"} dims, expected ${spec.expectedDim}`,
    );
  }
  return Float32Array.from(data.embedding);
}
