import type { GrayImage } from "./pgm.js";

/** Blend a saliency map over a grayscale thumbnail as RGBA pixel data.
 *
 * The heat layer uses a blue-to-red ramp with alpha proportional to the
 * (already normalized) saliency intensity, so cold regions stay readable
 * grayscale and hot regions pop.
 */
export function blendHeat(
  frame: GrayImage,
  saliency: GrayImage,
  alpha = 0.45,
): Uint8ClampedArray {
  if (frame.width !== saliency.width || frame.height !== saliency.height) {
    throw new Error("frame and saliency shapes differ");
  }
  const out = new Uint8ClampedArray(frame.width * frame.height * 4);
  for (let p = 0; p < frame.pixels.length; p++) {
    const g = frame.pixels[p];
    const s = saliency.pixels[p] / 255;
    const [hr, hg, hb] = heatColor(s);
    const a = alpha * s;
    out[4 * p] = (1 - a) * g + a * hr;
    out[4 * p + 1] = (1 - a) * g + a * hg;
    out[4 * p + 2] = (1 - a) * g + a * hb;
    out[4 * p + 3] = 255;
  }
  return out;
}

/** Simple blue -> cyan -> yellow -> red ramp on [0, 1]. */
export function heatColor(t: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, t));
  if (x < 1 / 3) {
    const u = x * 3;
    return [0, Math.round(255 * u), 255];
  }
  if (x < 2 / 3) {
    const u = (x - 1 / 3) * 3;
    return [Math.round(255 * u), 255, Math.round(255 * (1 - u))];
  }
  const u = (x - 2 / 3) * 3;
  return [255, Math.round(255 * (1 - u)), 0];
}
