/**
 * Batch extraction: run an encoder over every manifest utterance and write
 * an SVEM archive atomically (temp file + rename). Per-utterance failures
 * are recorded and skipped; the caller decides the exit code from the
 * returned summary.
 */

import * as fs from "fs";
import * as path from "path";

import { EncoderSpec, embedClip, embedViaService } from "./encoder.js";
import { readManifest, UtteranceRecord } from "./manifest.js";
import { Archive, encodeArchive } from "./svem.js";
import { decodeWav, resampleLinear, PIPELINE_RATE_HZ } from "./wav.js";

export interface ExtractSummary {
  total: number;
  ok: number;
  failures: { utteranceId: string; error: string }[];
}

export async function extractOne(
  rec: UtteranceRecord,
  spec: EncoderSpec,
  serviceUrl?: string,
): Promise<Float32Array> {
  const bytes = fs.readFileSync(rec.path);
  if (serviceUrl) {
    return embedViaService(serviceUrl, bytes, spec);
  }
  let clip = decodeWav(bytes);
  if (clip.sampleRateHz !== PIPELINE_RATE_HZ) {
    clip = resampleLinear(clip, PIPELINE_RATE_HZ);
  }
  return embedClip(clip, spec);
}

export async function extract(
  manifestPath: string,
  spec: EncoderSpec,
  outPath: string,
  serviceUrl?: string,
): Promise<ExtractSummary> {
  const records = readManifest(manifestPath);
  const archive: Archive = {
    dim: spec.expectedDim,
    modelId: spec.modelId,
    entries: new Map(),
  };
  const summary: ExtractSummary = { total: records.length, ok: 0, failures: [] };
  for (const rec of records) {
    try {
      const vec = await extractOne(rec, spec, serviceUrl);
      if (vec.length !== spec.expectedDim) {
        throw new Error(`encoder emitted ${vec.length} dims, expected ${spec.expectedDim}`);
      }
      archive.entries.set(rec.utteranceId, vec);
      summary.ok += 1;
    } catch (err) {
      summary.failures.push({
        utteranceId: rec.utteranceId,
        error: err instanceof Error ? err.message : String(err),
      });
    }
  }
  const tmp = path.join(
    path.dirname(path.resolve(outPath)),
    `.${path.basename(outPath)}.tmp-${process.pid}`,
  );
  fs.writeFileSync(tmp, encodeArchive(archive));
  fs.renameSync(tmp, outPath);
  return summary;
}
