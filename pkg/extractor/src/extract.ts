/**
 * Dataset -> engine fixture conversion.
 *
 * For every image: decode the PNG, embed each object label / relation
 * predicate / caption line with the sentence encoder, embed the full frame
 * and each bbox crop with the vision encoder, embed every triplet as the
 * single space-joined phrase "subject predicate object", build the global
 * graph embedding, and emit the manifest + blobs the engine loads.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { packMatrix } from "./blob.js";
import { ImageRecord, MalformedDataset, readDataset } from "./dataset.js";
import { loadTextEncoder, loadVisionEncoder } from "./encoders.js";
import { crop, decodePng } from "./png.js";

export interface ExtractorConfig {
  dataset: string;
  out: string;
  sentence_encoder: string;
  vision_encoder: string;
  d_text: number;
  d_vis: number;
  d_g: number;
  z_g_provider: "structural-default" | "external-file";
  z_g_file?: string;
}

export const DEFAULT_CONFIG: Omit<ExtractorConfig, "dataset" | "out"> = {
  sentence_encoder: "hashed-ngram",
  vision_encoder: "pixel-stats",
  d_text: 32,
  d_vis: 32,
  d_g: 16,
  z_g_provider: "structural-default",
};

const DEGREE_BINS = 4;

/** Structural default: [mean node text emb | degree histogram], sized to d_g.
 * The histogram always keeps its bins; the text part fills what remains. */
export function structuralGraphEmbedding(
  nodeText: Float64Array[], degrees: number[], dG: number,
): Float64Array {
  const hist = new Float64Array(DEGREE_BINS);
  for (const d of degrees) hist[Math.min(DEGREE_BINS - 1, d)] += 1 / degrees.length;
  const textPart = Math.max(0, dG - DEGREE_BINS);
  const out = new Float64Array(dG);
  const dim = nodeText[0]?.length ?? 0;
  for (let i = 0; i < Math.min(textPart, dim); i++) {
    let acc = 0;
    for (const row of nodeText) acc += row[i];
    out[i] = acc / nodeText.length;
  }
  for (let b = 0; b < DEGREE_BINS && textPart + b < dG; b++) {
    out[textPart + b] = hist[b];
  }
  return out;
}

function loadExternalGraphEmbeddings(file: string, dG: number): Map<string, Float64Array> {
  let parsed: Record<string, number[]>;
  try {
    parsed = JSON.parse(fs.readFileSync(file, "utf-8"));
  } catch (err) {
    throw new MalformedDataset(`unreadable graph-embedding file ${file}: ${err}`);
  }
  const table = new Map<string, Float64Array>();
  for (const [id, vec] of Object.entries(parsed)) {
    if (!Array.isArray(vec) || vec.length !== dG) {
      throw new MalformedDataset(`graph embedding for ${id} must have ${dG} values`);
    }
    table.set(id, Float64Array.from(vec));
  }
  return table;
}

export interface ExtractResult {
  manifestPath: string;
  imageCount: number;
}

export function extract(config: ExtractorConfig): ExtractResult {
  const textEnc = loadTextEncoder(config.sentence_encoder, config.d_text);
  const visionEnc = loadVisionEncoder(config.vision_encoder, config.d_vis);
  const records = readDataset(config.dataset);
  const external = config.z_g_provider === "external-file"
    ? loadExternalGraphEmbeddings(
      config.z_g_file ?? path.join(config.dataset, "graph_embeddings.json"), config.d_g)
    : null;

  const outDir = config.out;
  const blobDir = path.join(outDir, "blobs");
  fs.mkdirSync(blobDir, { recursive: true });

  const lines: string[] = [];
  lines.push(JSON.stringify({
    format: "sg-manifest",
    version: 1,
    d_text: config.d_text,
    d_vis: config.d_vis,
    d_g: config.d_g,
    count: records.length,
    meta: {
      generator: "sg-extractor",
      sentence_encoder: config.sentence_encoder,
      vision_encoder: config.vision_encoder,
      z_g_provider: config.z_g_provider,
    },
  }));

  for (const record of records) {
    lines.push(JSON.stringify(extractImage(record, config, textEnc, visionEnc,
                                           external, blobDir)));
  }
  const manifestPath = path.join(outDir, "manifest.jsonl");
  fs.writeFileSync(manifestPath, lines.join("\n") + "\n");
  return { manifestPath, imageCount: records.length };
}

function extractImage(
  record: ImageRecord,
  config: ExtractorConfig,
  textEnc: ReturnType<typeof loadTextEncoder>,
  visionEnc: ReturnType<typeof loadVisionEncoder>,
  external: Map<string, Float64Array> | null,
  blobDir: string,
) {
  const image = decodePng(fs.readFileSync(record.pngPath));

  const nodeText = record.objects.map((o) => textEnc(o.label));
  const nodeVis = record.objects.map((o) => {
    const [x, y, w, h] = o.bbox;
    return visionEnc(crop(image, x * image.width, y * image.height,
                          w * image.width, h * image.height));
  });
  const edgeText = record.relations.map((r) => textEnc(r.predicate));
  // each triplet is embedded as one space-joined phrase, not word by word
  const phrases = record.relations.map((r) => textEnc(
    `${record.objects[r.subject].label} ${r.predicate} ${record.objects[r.object].label}`));
  const captions = record.captions.map((c) => textEnc(c));
  const globalVis = visionEnc(image);

  let graphEmb: Float64Array;
  if (external) {
    const found = external.get(record.id);
    if (!found) throw new MalformedDataset(`no external graph embedding for ${record.id}`);
    graphEmb = found;
  } else {
    const degrees = record.objects.map((_, i) =>
      record.relations.filter((r) => r.subject === i || r.object === i).length);
    graphEmb = structuralGraphEmbedding(nodeText, degrees, config.d_g);
  }

  const blobs: Record<string, string> = {};
  const write = (kind: string, rows: Float64Array[], cols: number) => {
    const rel = `blobs/${record.id}.${kind}.bin`;
    fs.writeFileSync(path.join(blobDir, `${record.id}.${kind}.bin`), packMatrix(rows, cols));
    blobs[kind] = rel;
  };
  write("captions", captions, config.d_text);
  write("global_vis", [globalVis], config.d_vis);
  write("graph_emb", [graphEmb], config.d_g);
  write("node_text", nodeText, config.d_text);
  write("node_vis", nodeVis, config.d_vis);
  write("edge_text", edgeText, config.d_text);
  write("phrase", phrases, config.d_text);

  return {
    image_id: record.id,
    blobs,
    nodes: record.objects.map((o) => ({
      label: o.label,
      bbox: o.bbox,
      area: o.bbox[2] * o.bbox[3],
    })),
    edges: record.relations.map((r) => ({
      src: r.subject,
      dst: r.object,
      label: r.predicate,
    })),
  };
}
