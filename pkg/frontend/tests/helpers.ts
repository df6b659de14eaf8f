/** Shared test oracles, independent of the code under test.
 *
 * The PNG decoder here leans on node:zlib for inflation and walks chunks
 * with Buffer arithmetic, so it shares nothing with src/png.ts beyond the
 * format itself.
 */

import * as zlib from "node:zlib";

export interface DecodedPng {
  width: number;
  height: number;
  colorType: number;
  channels: number;
  pixels: Uint8Array;
}

const CHANNELS_BY_COLOR_TYPE: Record<number, number> = { 0: 1, 2: 3, 4: 2, 6: 4 };

/** Full independent decode; only filter type 0 is accepted. */
export function decodePngOracle(bytes: Uint8Array): DecodedPng {
  const buf = Buffer.from(bytes);
  const signature = Buffer.from([137, 80, 78, 71, 13, 10, 26, 10]);
  if (!buf.subarray(0, 8).equals(signature)) throw new Error("bad signature");
  let pos = 8;
  let width = 0;
  let height = 0;
  let colorType = 0;
  let bitDepth = 0;
  const idat: Buffer[] = [];
  while (pos < buf.length) {
    const length = buf.readUInt32BE(pos);
    const type = buf.subarray(pos + 4, pos + 8).toString("latin1");
    const body = buf.subarray(pos + 8, pos + 8 + length);
    const crc = buf.readUInt32BE(pos + 8 + length);
    const computed = zlib.crc32(buf.subarray(pos + 4, pos + 8 + length));
    if (crc !== computed) throw new Error(`bad CRC on ${type}`);
    if (type === "IHDR") {
      width = body.readUInt32BE(0);
      height = body.readUInt32BE(4);
      bitDepth = body[8];
      colorType = body[9];
      if (bitDepth !== 8) throw new Error("oracle handles 8-bit only");
      if (body[12] !== 0) throw new Error("interlaced PNG");
    } else if (type === "IDAT") {
      idat.push(body);
    } else if (type === "IEND") {
      break;
    }
    pos += 12 + length;
  }
  const channels = CHANNELS_BY_COLOR_TYPE[colorType];
  if (!channels) throw new Error(`color type ${colorType}`);
  const raw = zlib.inflateSync(Buffer.concat(idat));
  const stride = width * channels;
  if (raw.length !== height * (stride + 1)) throw new Error("scanline size mismatch");
  const pixels = new Uint8Array(width * height * channels);
  for (let y = 0; y < height; y++) {
    if (raw[y * (stride + 1)] !== 0) throw new Error("oracle handles filter 0 only");
    pixels.set(raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1)), y * stride);
  }
  return { width, height, colorType, channels, pixels };
}

/** Deterministic little RGB test image (gradient plus a diagonal). */
export function makeBasePixels(width: number, height: number): Uint8Array {
  const px = new Uint8Array(width * height * 3);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const i = (y * width + x) * 3;
      px[i] = Math.floor((x * 255) / Math.max(1, width - 1));
      px[i + 1] = Math.floor((y * 255) / Math.max(1, height - 1));
      px[i + 2] = x === y ? 255 : 40;
    }
  }
  return px;
}

export function discOracle(
  width: number,
  height: number,
  cx: number,
  cy: number,
  r: number,
): Uint8Array {
  const out = new Uint8Array(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const dx = x - cx;
      const dy = y - cy;
      if (dx * dx + dy * dy <= r * r) out[y * width + x] = 1;
    }
  }
  return out;
}

export function capsuleOracle(
  width: number,
  height: number,
  a: [number, number],
  b: [number, number],
  r: number,
): Uint8Array {
  const out = new Uint8Array(width * height);
  const abx = b[0] - a[0];
  const aby = b[1] - a[1];
  const len2 = abx * abx + aby * aby;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      let t = len2 === 0 ? 0 : ((x - a[0]) * abx + (y - a[1]) * aby) / len2;
      t = Math.min(1, Math.max(0, t));
      const dx = x - (a[0] + t * abx);
      const dy = y - (a[1] + t * aby);
      if (dx * dx + dy * dy <= r * r) out[y * width + x] = 1;
    }
  }
  return out;
}

export function dilateOracle(
  mask: Uint8Array,
  width: number,
  height: number,
  r: number,
): Uint8Array {
  const out = new Uint8Array(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      if (out[y * width + x]) continue;
      // on iff some set pixel lies within distance r
      outer: for (let sy = 0; sy < height; sy++) {
        for (let sx = 0; sx < width; sx++) {
          if (!mask[sy * width + sx]) continue;
          const dx = x - sx;
          const dy = y - sy;
          if (dx * dx + dy * dy <= r * r) {
            out[y * width + x] = 1;
            break outer;
          }
        }
      }
    }
  }
  return out;
}
