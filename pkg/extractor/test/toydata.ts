/** Builds a tiny on-disk dataset: procedurally drawn PNGs + captions + graphs. */

import * as fs from "node:fs";
import * as path from "node:path";

import { encodePng, Image } from "../src/png.js";

function blank(width: number, height: number, rgb: [number, number, number]): Image {
  const pixels = new Uint8Array(width * height * 3);
  for (let i = 0; i < width * height; i++) pixels.set(rgb, i * 3);
  return { width, height, pixels };
}

function fillRect(image: Image, x: number, y: number, w: number, h: number,
                  rgb: [number, number, number]): void {
  for (let yy = y; yy < y + h; yy++) {
    for (let xx = x; xx < x + w; xx++) {
      if (xx >= 0 && xx < image.width && yy >= 0 && yy < image.height) {
        image.pixels.set(rgb, (yy * image.width + xx) * 3);
      }
    }
  }
}

export function writeToyDataset(root: string): void {
  for (const sub of ["images", "captions", "graphs"]) {
    fs.mkdirSync(path.join(root, sub), { recursive: true });
  }
  // image a: dark square and light square on green
  const a = blank(32, 32, [40, 160, 40]);
  fillRect(a, 4, 6, 10, 12, [120, 80, 30]);
  fillRect(a, 20, 18, 8, 8, [230, 230, 200]);
  fs.writeFileSync(path.join(root, "images", "a.png"), encodePng(a));
  fs.writeFileSync(path.join(root, "captions", "a.txt"),
    "a dog biting a frisbee on the grass\nthe dog plays with a frisbee\n");
  fs.writeFileSync(path.join(root, "graphs", "a.json"), JSON.stringify({
    objects: [
      { label: "dog", bbox: [0.125, 0.1875, 0.3125, 0.375] },
      { label: "frisbee", bbox: [0.625, 0.5625, 0.25, 0.25] },
      { label: "grass", bbox: [0.0, 0.0, 1.0, 1.0] },
    ],
    relations: [
      { subject: 0, predicate: "biting", object: 1 },
      { subject: 0, predicate: "on", object: 2 },
    ],
  }));
  // image b: two blue blobs on gray
  const b = blank(32, 32, [128, 128, 128]);
  fillRect(b, 2, 2, 14, 10, [30, 60, 200]);
  fillRect(b, 18, 14, 12, 14, [60, 90, 220]);
  fs.writeFileSync(path.join(root, "images", "b.png"), encodePng(b));
  fs.writeFileSync(path.join(root, "captions", "b.txt"),
    "a cat sitting on a laptop\n");
  fs.writeFileSync(path.join(root, "graphs", "b.json"), JSON.stringify({
    objects: [
      { label: "cat", bbox: [0.0625, 0.0625, 0.4375, 0.3125] },
      { label: "laptop", bbox: [0.5625, 0.4375, 0.375, 0.4375] },
    ],
    relations: [
      { subject: 0, predicate: "sitting on", object: 1 },
    ],
  }));
}
