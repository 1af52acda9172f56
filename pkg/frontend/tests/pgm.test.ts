import { describe, expect, it } from "vitest";

import { blendHeat, heatColor } from "../src/heatmap.js";
import { decodePgm } from "../src/pgm.js";

function pgmBytes(header: string, raster: number[]): Uint8Array {
  const head = new TextEncoder().encode(header);
  const out = new Uint8Array(head.length + raster.length);
  out.set(head);
  out.set(raster, head.length);
  return out;
}

describe("decodePgm", () => {
  it("decodes a small raster with a comment", () => {
    const img = decodePgm(pgmBytes("P5\n# note\n3 2\n255\n", [0, 64, 128, 192, 255, 7]));
    expect(img.width).toBe(3);
    expect(img.height).toBe(2);
    expect([...img.pixels]).toEqual([0, 64, 128, 192, 255, 7]);
  });

  it("rejects wrong magic and truncated rasters", () => {
    expect(() => decodePgm(pgmBytes("P2\n2 2\n255\n", [0, 0, 0, 0]))).toThrow(/P5/);
    expect(() => decodePgm(pgmBytes("P5\n4 4\n255\n", [1, 2]))).toThrow(/truncated/);
  });
});

describe("heatmap", () => {
  it("blends frame and saliency into RGBA of the right size", () => {
    const frame = { width: 2, height: 2, pixels: new Uint8Array([0, 255, 128, 64]) };
    const hot = { width: 2, height: 2, pixels: new Uint8Array([0, 255, 0, 255]) };
    const rgba = blendHeat(frame, hot);
    expect(rgba.length).toBe(16);
    expect(rgba[3]).toBe(255);
    // cold pixel stays grayscale
    expect([rgba[0], rgba[1], rgba[2]]).toEqual([0, 0, 0]);
    // hot pixel shifts toward red
    expect(rgba[4]).toBeGreaterThan(rgba[6]);
  });

  it("rejects mismatched shapes and ramps sanely", () => {
    const a = { width: 2, height: 1, pixels: new Uint8Array(2) };
    const b = { width: 1, height: 2, pixels: new Uint8Array(2) };
    expect(() => blendHeat(a, b)).toThrow(/differ/);
    expect(heatColor(0)).toEqual([0, 0, 255]);
    expect(heatColor(1)).toEqual([255, 0, 0]);
  });
});
