import { describe, expect, it } from "vitest";

import { crop, decodePng, encodePng, Image } from "../src/png.js";

function randomImage(width: number, height: number, seed: number): Image {
  const pixels = new Uint8Array(width * height * 3);
  let state = seed >>> 0;
  for (let i = 0; i < pixels.length; i++) {
    state = (Math.imul(state, 1664525) + 1013904223) >>> 0;
    pixels[i] = state & 0xff;
  }
  return { width, height, pixels };
}

describe("png codec", () => {
  it("round-trips RGB exactly", () => {
    const img = randomImage(13, 7, 42);
    const back = decodePng(encodePng(img));
    expect(back.width).toBe(13);
    expect(back.height).toBe(7);
    expect(Buffer.from(back.pixels)).toEqual(Buffer.from(img.pixels));
  });

  it("rejects non-png data", () => {
    expect(() => decodePng(Buffer.from("JFIF not a png at all"))).toThrow(/not a PNG/);
  });

  it("crop clamps to the frame and keeps at least one pixel", () => {
    const img = randomImage(10, 10, 7);
    const c = crop(img, 8, 8, 50, 50);
    expect(c.width).toBe(2);
    expect(c.height).toBe(2);
    const tiny = crop(img, 3, 3, 0, 0);
    expect(tiny.width).toBe(1);
    expect(tiny.height).toBe(1);
  });

  it("crop extracts the right pixels", () => {
    const img = randomImage(6, 6, 9);
    const c = crop(img, 2, 1, 3, 4);
    for (let y = 0; y < c.height; y++) {
      for (let x = 0; x < c.width; x++) {
        for (let ch = 0; ch < 3; ch++) {
          expect(c.pixels[(y * c.width + x) * 3 + ch])
            .toBe(img.pixels[((y + 1) * 6 + (x + 2)) * 3 + ch]);
        }
      }
    }
  });
});
