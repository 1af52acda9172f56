/** Decoder for the binary (P5) 8-bit PGM frames the service ships base64. */

export interface GrayImage {
  width: number;
  height: number;
  pixels: Uint8Array; // row-major, one byte per pixel
}

export function decodeBase64Pgm(b64: string): GrayImage {
  const bin = atob(b64);
  const bytes = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) bytes[i] = bin.charCodeAt(i);
  return decodePgm(bytes);
}

export function decodePgm(bytes: Uint8Array): GrayImage {
  if (bytes[0] !== 0x50 || bytes[1] !== 0x35) {
    throw new Error("not a binary PGM (missing P5 magic)");
  }
  const tokens: string[] = [];
  let i = 2;
  while (tokens.length < 3 && i < bytes.length) {
    while (i < bytes.length && isSpace(bytes[i])) i++;
    if (bytes[i] === 0x23) {
      while (i < bytes.length && bytes[i] !== 0x0a) i++;
      continue;
    }
    let start = i;
    while (i < bytes.length && !isSpace(bytes[i])) i++;
    if (i === start) throw new Error("truncated PGM header");
    tokens.push(String.fromCharCode(...bytes.subarray(start, i)));
  }
  i++; // single whitespace after maxval
  const [width, height, maxval] = tokens.map((t) => parseInt(t, 10));
  if (!Number.isFinite(width) || !Number.isFinite(height) || maxval !== 255) {
    throw new Error(`unsupported PGM header ${tokens.join(" ")}`);
  }
  const raster = bytes.subarray(i, i + width * height);
  if (raster.length !== width * height) throw new Error("PGM raster truncated");
  return { width, height, pixels: new Uint8Array(raster) };
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
}
