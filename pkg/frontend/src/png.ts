/** Minimal PNG writing and header reading.
 *
 * The studio uploads masks and scribble layers to the service as base-64
 * PNG, and needs width/height of service-provided PNGs to size its canvas
 * layers. Nothing here decompresses pixel data: displayed images are the
 * service's bytes verbatim (data: URLs), never re-encoded.
 *
 * Encoding uses stored (uncompressed) deflate blocks inside a valid zlib
 * stream, so the output is deterministic and dependency-free. Desk-scale
 * images make the size cost irrelevant.
 */

const PNG_SIGNATURE = [137, 80, 78, 71, 13, 10, 26, 10];

export interface PngInfo {
  width: number;
  height: number;
  bitDepth: number;
  colorType: number;
}

export class PngError extends Error {}

/** CRC-32 (polynomial 0xEDB88320), as used by PNG chunk trailers. */
const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(data: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < data.length; i++) {
    c = CRC_TABLE[(c ^ data[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

/** Adler-32 over data, the zlib stream checksum. */
export function adler32(data: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < data.length; i++) {
    a = (a + data[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

/** Wrap raw bytes in a zlib stream of stored deflate blocks (no compression). */
export function zlibStored(raw: Uint8Array): Uint8Array {
  const MAX_BLOCK = 65535;
  const nBlocks = Math.max(1, Math.ceil(raw.length / MAX_BLOCK));
  const out = new Uint8Array(2 + nBlocks * 5 + raw.length + 4);
  out[0] = 0x78; // CM=8, CINFO=7
  out[1] = 0x01; // no preset dict, fastest-compression flag; (0x7801 % 31) == 0
  let pos = 2;
  for (let i = 0; i < nBlocks; i++) {
    const start = i * MAX_BLOCK;
    const chunk = raw.subarray(start, Math.min(start + MAX_BLOCK, raw.length));
    out[pos++] = i === nBlocks - 1 ? 1 : 0; // BFINAL, BTYPE=00 (stored)
    out[pos++] = chunk.length & 0xff;
    out[pos++] = (chunk.length >>> 8) & 0xff;
    out[pos++] = ~chunk.length & 0xff;
    out[pos++] = (~chunk.length >>> 8) & 0xff;
    out.set(chunk, pos);
    pos += chunk.length;
  }
  const sum = adler32(raw);
  out[pos++] = (sum >>> 24) & 0xff;
  out[pos++] = (sum >>> 16) & 0xff;
  out[pos++] = (sum >>> 8) & 0xff;
  out[pos++] = sum & 0xff;
  return out;
}

function writeU32(target: Uint8Array, offset: number, value: number): void {
  target[offset] = (value >>> 24) & 0xff;
  target[offset + 1] = (value >>> 16) & 0xff;
  target[offset + 2] = (value >>> 8) & 0xff;
  target[offset + 3] = value & 0xff;
}

function chunk(type: string, body: Uint8Array): Uint8Array {
  const out = new Uint8Array(12 + body.length);
  writeU32(out, 0, body.length);
  for (let i = 0; i < 4; i++) out[4 + i] = type.charCodeAt(i);
  out.set(body, 8);
  writeU32(out, 8 + body.length, crc32(out.subarray(4, 8 + body.length)));
  return out;
}

function encodePng(
  width: number,
  height: number,
  channels: 1 | 3 | 4,
  pixels: Uint8Array,
): Uint8Array {
  if (width < 1 || height < 1) throw new PngError("empty image");
  if (pixels.length !== width * height * channels) {
    throw new PngError(
      `pixel buffer is ${pixels.length} bytes, need ${width * height * channels}`,
    );
  }
  const ihdr = new Uint8Array(13);
  writeU32(ihdr, 0, width);
  writeU32(ihdr, 4, height);
  ihdr[8] = 8; // bit depth
  ihdr[9] = channels === 1 ? 0 : channels === 3 ? 2 : 6;
  // compression, filter, interlace all zero

  // Scanlines with filter byte 0 (None): raw pixels, trivially reversible.
  const stride = width * channels;
  const raw = new Uint8Array(height * (1 + stride));
  for (let y = 0; y < height; y++) {
    raw.set(pixels.subarray(y * stride, (y + 1) * stride), y * (1 + stride) + 1);
  }

  const parts = [
    new Uint8Array(PNG_SIGNATURE),
    chunk("IHDR", ihdr),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ];
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let pos = 0;
  for (const p of parts) {
    out.set(p, pos);
    pos += p.length;
  }
  return out;
}

/** 8-bit grayscale PNG from a w*h luminance buffer. */
export function encodeGrayPng(width: number, height: number, pixels: Uint8Array): Uint8Array {
  return encodePng(width, height, 1, pixels);
}

/** 8-bit RGB PNG from a w*h*3 buffer. */
export function encodeRgbPng(width: number, height: number, pixels: Uint8Array): Uint8Array {
  return encodePng(width, height, 3, pixels);
}

/** Read size and format from a PNG header without touching pixel data. */
export function readPngInfo(bytes: Uint8Array): PngInfo {
  if (bytes.length < 33) throw new PngError("truncated PNG");
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== PNG_SIGNATURE[i]) throw new PngError("not a PNG file");
  }
  const type = String.fromCharCode(bytes[12], bytes[13], bytes[14], bytes[15]);
  if (type !== "IHDR") throw new PngError("first chunk is not IHDR");
  const u32 = (o: number) =>
    ((bytes[o] << 24) | (bytes[o + 1] << 16) | (bytes[o + 2] << 8) | bytes[o + 3]) >>> 0;
  return {
    width: u32(16),
    height: u32(20),
    bitDepth: bytes[24],
    colorType: bytes[25],
  };
}

// base-64 helpers over raw bytes; atob/btoa work on binary strings, so
// convert in bounded chunks to stay clear of argument-length limits.

export function bytesToBase64(bytes: Uint8Array): string {
  let binary = "";
  const CHUNK = 0x8000;
  for (let i = 0; i < bytes.length; i += CHUNK) {
    binary += String.fromCharCode(...bytes.subarray(i, i + CHUNK));
  }
  return btoa(binary);
}

export function base64ToBytes(b64: string): Uint8Array {
  const binary = atob(b64);
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
  return out;
}

/** data: URL for displaying service PNG bytes without re-encoding them. */
export function pngDataUrl(bytes: Uint8Array): string {
  return `data:image/png;base64,${bytesToBase64(bytes)}`;
}
