#!/usr/bin/env node
/**
 * sg-extract: convert an image + caption + scene-graph dataset into the
 * retrieval engine's manifest/blob fixture format.
 *
 *   sg-extract --dataset DIR --out DIR [--config FILE]
 *              [--sentence-encoder hashed-ngram] [--vision-encoder pixel-stats]
 *              [--d-text 32] [--d-vis 32] [--d-g 16]
 *              [--z-g-provider structural-default|external-file] [--z-g-file FILE]
 */

import * as fs from "node:fs";
import { pathToFileURL } from "node:url";

import { MalformedDataset } from "./dataset.js";
import { EncoderLoadFailure } from "./encoders.js";
import { DEFAULT_CONFIG, ExtractorConfig, extract } from "./extract.js";

function parseArgs(argv: string[]): ExtractorConfig {
  const values: Record<string, string> = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) throw new Error(`unexpected argument ${arg}`);
    const key = arg.slice(2);
    const value = argv[i + 1];
    if (value === undefined) throw new Error(`missing value for --${key}`);
    values[key] = value;
    i++;
  }
  let config: Partial<ExtractorConfig> = { ...DEFAULT_CONFIG };
  if (values["config"]) {
    config = { ...config, ...JSON.parse(fs.readFileSync(values["config"], "utf-8")) };
  }
  const assign = (flag: string, key: keyof ExtractorConfig, numeric = false) => {
    if (values[flag] !== undefined) {
      (config as any)[key] = numeric ? Number(values[flag]) : values[flag];
    }
  };
  assign("dataset", "dataset");
  assign("out", "out");
  assign("sentence-encoder", "sentence_encoder");
  assign("vision-encoder", "vision_encoder");
  assign("d-text", "d_text", true);
  assign("d-vis", "d_vis", true);
  assign("d-g", "d_g", true);
  assign("z-g-provider", "z_g_provider");
  assign("z-g-file", "z_g_file");
  if (!config.dataset || !config.out) {
    throw new Error("both --dataset and --out are required (flags or config file)");
  }
  for (const dim of ["d_text", "d_vis", "d_g"] as const) {
    const v = config[dim];
    if (!Number.isInteger(v) || (v as number) < 1) {
      throw new Error(`${dim} must be a positive integer, got ${v}`);
    }
  }
  return config as ExtractorConfig;
}

export function main(argv: string[]): number {
  try {
    const config = parseArgs(argv);
    const result = extract(config);
    console.log(`wrote ${result.manifestPath} (${result.imageCount} images)`);
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    if (err instanceof EncoderLoadFailure) return 4;
    if (err instanceof MalformedDataset) return 5;
    return 1;
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
