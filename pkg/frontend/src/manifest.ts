/** JSON-lines manifest reader (matches the toolkit's corpus format). */

import * as fs from "fs";

export interface UtteranceRecord {
  utteranceId: string;
  speakerId: string;
  path: string;
  durationS: number;
  split: string;
}

export function readManifest(path: string): UtteranceRecord[] {
  const lines = fs.readFileSync(path, "utf-8").split("\n");
  const records: UtteranceRecord[] = [];
  for (const line of lines) {
    if (!line.trim()) continue;
    const row = JSON.parse(line);
    if (!row.utterance_id || !row.speaker_id || !row.path) {
      throw new Error(`malformed manifest row: ${line}`);
    }
    records.push({
      utteranceId: String(row.utterance_id),
      speakerId: String(row.speaker_id),
      path: String(row.path),
      durationS: Number(row.duration_s ?? 0),
      split: String(row.split ?? "unassigned"),
    });
  }
  return records;
}
