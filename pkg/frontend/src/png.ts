/**
 * Minimal 8-bit grayscale PNG encoder (color type 0, no compression:
 * zlib-wrapped stored deflate blocks). Output is a pure function of the
 * pixel bytes, so identical frames encode to byte-identical payloads.
 */

const PNG_SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

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

export function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function writeUint32BE(out: number[], value: number): void {
  out.push((value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff);
}

function chunk(out: number[], type: string, data: Uint8Array): void {
  writeUint32BE(out, data.length);
  const typed = new Uint8Array(4 + data.length);
  for (let i = 0; i < 4; i++) {
    typed[i] = type.charCodeAt(i);
  }
  typed.set(data, 4);
  for (const byte of typed) {
    out.push(byte);
  }
  writeUint32BE(out, crc32(typed));
}

/** zlib wrapper around stored (uncompressed) deflate blocks. */
function zlibStored(raw: Uint8Array): Uint8Array {
  const parts: number[] = [0x78, 0x01]; // 32KB window, fastest
  const max = 65535;
  for (let off = 0; off < raw.length; off += max) {
    const len = Math.min(max, raw.length - off);
    const final = off + len >= raw.length ? 1 : 0;
    parts.push(final, len & 0xff, (len >>> 8) & 0xff, ~len & 0xff, (~len >>> 8) & 0xff);
    for (let i = 0; i < len; i++) {
      parts.push(raw[off + i]);
    }
  }
  const adler = adler32(raw);
  parts.push((adler >>> 24) & 0xff, (adler >>> 16) & 0xff, (adler >>> 8) & 0xff, adler & 0xff);
  return new Uint8Array(parts);
}

/** Encode 8-bit grayscale pixels (row-major) as a PNG file. */
export function encodeGrayPng(pixels: Uint8Array, width: number, height: number): Uint8Array {
  if (pixels.length !== width * height) {
    throw new Error(`expected ${width * height} pixels, got ${pixels.length}`);
  }
  if (width < 1 || height < 1) {
    throw new Error(`bad dimensions ${width}x${height}`);
  }

  const ihdr = new Uint8Array(13);
  const view = new DataView(ihdr.buffer);
  view.setUint32(0, width);
  view.setUint32(4, height);
  ihdr[8] = 8; // bit depth
  ihdr[9] = 0; // color type: grayscale
  // compression 0, filter 0, interlace 0 already zeroed

  // each scanline is prefixed with filter type 0 (None)
  const raw = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    raw.set(pixels.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }

  const out: number[] = [...PNG_SIGNATURE];
  chunk(out, 'IHDR', ihdr);
  chunk(out, 'IDAT', zlibStored(raw));
  chunk(out, 'IEND', new Uint8Array(0));
  return new Uint8Array(out);
}
