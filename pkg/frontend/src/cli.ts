#!/usr/bin/env node
/**
 * svkit-extract --model <xvector|ecapa> --manifest <jsonl> --out <svem>
 *               [--device cpu] [--service-url <http endpoint>]
 *
 * SPEAKER_EMBEDDER_URL is honored as a fallback for --service-url.
 */

import { resolveEncoder } from "./encoder.js";
import { extract } from "./extract.js";

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    if (!argv[i].startsWith("--")) throw new Error(`unexpected argument '${argv[i]}'`);
    const key = argv[i].slice(2);
    const val = argv[i + 1];
    if (val === undefined || val.startsWith("--")) throw new Error(`missing value for --${key}`);
    out.set(key, val);
    i++;
  }
  return out;
}

async function run(): Promise<number> {
  const args = parseArgs(process.argv.slice(2));
  for (const required of ["model", "manifest", "out"]) {
    if (!args.has(required)) {
      console.error(`svkit-extract: missing --${required}`);
      return 2;
    }
  }
  let spec;
  try {
    spec = resolveEncoder(args.get("model")!, args.get("device") ?? "cpu");
  } catch (err) {
    console.error(`svkit-extract: ${err instanceof Error ? err.message : err}`);
    return 2;
  }
  const serviceUrl = args.get("service-url") ?? process.env.SPEAKER_EMBEDDER_URL;
  const summary = await extract(args.get("manifest")!, spec, args.get("out")!, serviceUrl);
  for (const f of summary.failures) {
    console.error(`svkit-extract: ${f.utteranceId}: ${f.error}`);
  }
  console.log(
    `extracted ${summary.ok}/${summary.total} embeddings ` +
    `(model ${spec.modelId}, dim ${spec.expectedDim}) -> ${args.get("out")}`,
  );
  return summary.failures.length > 0 ? 1 : 0;
}

run().then(
  (code) => process.exit(code),
  (err) => {
    console.error(`svkit-extract: ${err instanceof Error ? err.message : err}`);
    process.exit(1);
  },
);
