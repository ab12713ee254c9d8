/**
 * Minimal RIFF/WAVE reader: 16-bit PCM and 32-bit IEEE float, any channel
 * count (averaged to mono), with linear resampling to the pipeline rate.
 */

export interface AudioClip {
  samples: Float64Array; // mono, [-1, 1]
  sampleRateHz: number;
}

export const PIPELINE_RATE_HZ = 16000;

const WAVE_FORMAT_PCM = 1;
const WAVE_FORMAT_IEEE_FLOAT = 3;

export function decodeWav(data: Buffer): AudioClip {
  if (data.length < 12 || data.toString("ascii", 0, 4) !== "RIFF" ||
      data.toString("ascii", 8, 12) !== "WAVE") {
    throw new Error("not a RIFF/WAVE file");
  }
  let fmt: { tag: number; channels: number; rate: number; bits: number } | null = null;
  let frames: Buffer | null = null;
  let pos = 12;
  while (pos + 8 <= data.length) {
    const id = data.toString("ascii", pos, pos + 4);
    const size = data.readUInt32LE(pos + 4);
    const body = data.subarray(pos + 8, pos + 8 + size);
    if (id === "fmt ") {
      fmt = {
        tag: body.readUInt16LE(0),
        channels: body.readUInt16LE(2),
        rate: body.readUInt32LE(4),
        bits: body.readUInt16LE(14),
      };
    } else if (id === "data") {
      frames = body;
    }
    pos += 8 + size + (size & 1);
  }
  if (!fmt || !frames) throw new Error("missing fmt or data chunk");

  let interleaved: Float64Array;
  if (fmt.tag === WAVE_FORMAT_PCM && fmt.bits === 16) {
    const n = Math.floor(frames.length / 2);
    interleaved = new Float64Array(n);
    for (let i = 0; i < n; i++) interleaved[i] = frames.readInt16LE(2 * i) / 32768;
  } else if (fmt.tag === WAVE_FORMAT_IEEE_FLOAT && fmt.bits === 32) {
    const n = Math.floor(frames.length / 4);
    interleaved = new Float64Array(n);
    for (let i = 0; i < n; i++) interleaved[i] = frames.readFloatLE(4 * i);
  } else {
    throw new Error(`unsupported WAV encoding (format ${fmt.tag}, ${fmt.bits}-bit)`);
  }

  const ch = fmt.channels;
  if (ch < 1) throw new Error("zero channels");
  const nFrames = Math.floor(interleaved.length / ch);
  const mono = new Float64Array(nFrames);
  for (let i = 0; i < nFrames; i++) {
    let acc = 0;
    for (let c = 0; c < ch; c++) acc += interleaved[i * ch + c];
    mono[i] = acc / ch;
  }
  return { samples: mono, sampleRateHz: fmt.rate };
}

/** Linear-interpolation resampler; adequate for feature extraction. */
export function resampleLinear(clip: AudioClip, targetHz: number): AudioClip {
  if (clip.sampleRateHz === targetHz) return clip;
  const ratio = clip.sampleRateHz / targetHz;
  const outLen = Math.max(1, Math.round(clip.samples.length / ratio));
  const out = new Float64Array(outLen);
  for (let i = 0; i < outLen; i++) {
    const x = i * ratio;
    const lo = Math.floor(x);
    const hi = Math.min(lo + 1, clip.samples.length - 1);
    const frac = x - lo;
    out[i] = clip.samples[Math.min(lo, clip.samples.length - 1)] * (1 - frac)
           + clip.samples[hi] * frac;
  }
  return { samples: out, sampleRateHz: targetHz };
}

/** Encode a mono clip as 32-bit float WAV (used by tests/fixtures). */
export function encodeWavFloat32(clip: AudioClip): Buffer {
  const payload = Buffer.alloc(clip.samples.length * 4);
  for (let i = 0; i < clip.samples.length; i++) payload.writeFloatLE(clip.samples[i], 4 * i);
  const header = Buffer.alloc(44);
  header.write("RIFF", 0, "ascii");
  header.writeUInt32LE(36 + payload.length, 4);
  header.write("WAVE", 8, "ascii");
  header.write("fmt ", 12, "ascii");
  header.writeUInt32LE(16, 16);
  header.writeUInt16LE(WAVE_FORMAT_IEEE_FLOAT, 20);
  header.writeUInt16LE(1, 22);
  header.writeUInt32LE(clip.sampleRateHz, 24);
  header.writeUInt32LE(clip.sampleRateHz * 4, 28);
  header.writeUInt16LE(4, 32);
  header.writeUInt16LE(32, 34);
  header.write("data", 36, "ascii");
  header.writeUInt32LE(payload.length, 40);
  return Buffer.concat([header, payload]);
}
