/**
 * SVEM v1 embedding archive (little-endian):
 * magic `SVEM`, u32 version=1, u32 dim, u64 count,
 * u16 model_id length + UTF-8 model_id, then per entry
 * u16 id length + UTF-8 id + dim x float32.
 */

export interface Archive {
  dim: number;
  modelId: string;
  entries: Map<string, Float32Array>;
}

const MAGIC = "SVEM";
const VERSION = 1;

export function encodeArchive(archive: Archive): Buffer {
  const parts: Buffer[] = [];
  const modelBytes = Buffer.from(archive.modelId, "utf-8");
  const header = Buffer.alloc(4 + 4 + 4 + 8 + 2);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt32LE(archive.dim, 8);
  header.writeBigUInt64LE(BigInt(archive.entries.size), 12);
  header.writeUInt16LE(modelBytes.length, 20);
  parts.push(header, modelBytes);
  for (const [id, vec] of archive.entries) {
    if (vec.length !== archive.dim) {
      throw new Error(`entry '${id}' has ${vec.length} dims, archive dim ${archive.dim}`);
    }
    const idBytes = Buffer.from(id, "utf-8");
    const lenBuf = Buffer.alloc(2);
    lenBuf.writeUInt16LE(idBytes.length, 0);
    const vecBuf = Buffer.alloc(4 * vec.length);
    for (let i = 0; i < vec.length; i++) vecBuf.writeFloatLE(vec[i], 4 * i);
    parts.push(lenBuf, idBytes, vecBuf);
  }
  return Buffer.concat(parts);
}

export function decodeArchive(data: Buffer): Archive {
  if (data.length < 22 || data.toString("ascii", 0, 4) !== MAGIC) {
    throw new Error("bad archive magic");
  }
  const version = data.readUInt32LE(4);
  if (version !== VERSION) throw new Error(`unsupported archive version ${version}`);
  const dim = data.readUInt32LE(8);
  const count = Number(data.readBigUInt64LE(12));
  const modelLen = data.readUInt16LE(20);
  let pos = 22;
  const modelId = data.toString("utf-8", pos, pos + modelLen);
  pos += modelLen;
  const entries = new Map<string, Float32Array>();
  for (let e = 0; e < count; e++) {
    if (pos + 2 > data.length) throw new Error("truncated archive");
    const idLen = data.readUInt16LE(pos);
    pos += 2;
    if (pos + idLen + 4 * dim > data.length) throw new Error("truncated archive");
    const id = data.toString("utf-8", pos, pos + idLen);
    pos += idLen;
    const vec = new Float32Array(dim);
    for (let i = 0; i < dim; i++) vec[i] = data.readFloatLE(pos + 4 * i);
    pos += 4 * dim;
    entries.set(id, vec);
  }
  return { dim, modelId, entries };
}
