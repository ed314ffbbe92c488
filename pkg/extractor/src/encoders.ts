/**
 * Deterministic embedding encoders.
 *
 * Text: signed character-n-gram hashing into the target dimension, L2
 * normalized; the same string always maps to the same unit vector, and
 * related strings (shared words / trigrams) land near each other.
 *
 * Vision: pixel statistics over the crop (channel means and spreads, a 3x3
 * grayscale grid, an 8-bin intensity histogram), padded or truncated to the
 * target dimension.
 *
 * Both run fully offline; the registry keeps encoder choice configurable.
 */

import { Image } from "./png.js";

export type TextEncoder = (text: string) => Float64Array;
export type VisionEncoder = (image: Image) => Float64Array;

/** FNV-1a 32-bit hash. */
function fnv1a(s: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

function l2normalize(v: Float64Array): Float64Array {
  let norm = 0;
  for (const x of v) norm += x * x;
  norm = Math.sqrt(norm);
  if (norm < 1e-12) {
    // empty input: a fixed unit vector keeps the engine's norm invariant
    const out = new Float64Array(v.length);
    out[0] = 1;
    return out;
  }
  return v.map((x) => x / norm);
}

export function hashedNgramEncoder(dim: number): TextEncoder {
  return (text: string) => {
    const v = new Float64Array(dim);
    const words = text.toLowerCase().split(/[^a-z0-9]+/).filter(Boolean);
    const add = (token: string, weight: number) => {
      const h = fnv1a(token);
      const sign = (h & 0x80000000) !== 0 ? -1 : 1;
      v[h % dim] += sign * weight;
    };
    for (const word of words) {
      add(`w:${word}`, 1.0);
      const padded = `^${word}$`;
      for (let i = 0; i + 3 <= padded.length; i++) {
        add(`t:${padded.slice(i, i + 3)}`, 0.5);
      }
    }
    return l2normalize(v);
  };
}

export function pixelStatsEncoder(dim: number): VisionEncoder {
  return (image: Image) => {
    const { width, height, pixels } = image;
    const n = width * height;
    const mean = [0, 0, 0];
    for (let i = 0; i < n; i++) {
      mean[0] += pixels[i * 3];
      mean[1] += pixels[i * 3 + 1];
      mean[2] += pixels[i * 3 + 2];
    }
    mean[0] /= n; mean[1] /= n; mean[2] /= n;
    const spread = [0, 0, 0];
    const hist = new Float64Array(8);
    for (let i = 0; i < n; i++) {
      for (let c = 0; c < 3; c++) spread[c] += Math.abs(pixels[i * 3 + c] - mean[c]);
      const gray = (pixels[i * 3] + pixels[i * 3 + 1] + pixels[i * 3 + 2]) / 3;
      hist[Math.min(7, Math.floor(gray / 32))] += 1 / n;
    }
    const grid = new Float64Array(9);
    for (let gy = 0; gy < 3; gy++) {
      for (let gx = 0; gx < 3; gx++) {
        const x0 = Math.floor((gx * width) / 3);
        const x1 = Math.max(x0 + 1, Math.floor(((gx + 1) * width) / 3));
        const y0 = Math.floor((gy * height) / 3);
        const y1 = Math.max(y0 + 1, Math.floor(((gy + 1) * height) / 3));
        let acc = 0;
        for (let y = y0; y < y1; y++) {
          for (let x = x0; x < x1; x++) {
            const p = (y * width + x) * 3;
            acc += (pixels[p] + pixels[p + 1] + pixels[p + 2]) / 3;
          }
        }
        grid[gy * 3 + gx] = acc / ((x1 - x0) * (y1 - y0)) / 255;
      }
    }
    const features = [
      mean[0] / 255, mean[1] / 255, mean[2] / 255,
      spread[0] / 128, spread[1] / 128, spread[2] / 128,
      ...grid, ...hist,
    ];
    const v = new Float64Array(dim);
    for (let i = 0; i < Math.min(dim, features.length); i++) v[i] = features[i];
    return v;
  };
}

export class EncoderLoadFailure extends Error {}

export function loadTextEncoder(name: string, dim: number): TextEncoder {
  if (name === "hashed-ngram") return hashedNgramEncoder(dim);
  throw new EncoderLoadFailure(
    `unknown sentence encoder ${JSON.stringify(name)} (available: hashed-ngram)`);
}

export function loadVisionEncoder(name: string, dim: number): VisionEncoder {
  if (name === "pixel-stats") return pixelStatsEncoder(dim);
  throw new EncoderLoadFailure(
    `unknown vision encoder ${JSON.stringify(name)} (available: pixel-stats)`);
}
