/**
 * Minimal PNG encoding: 8-bit RGB (color type 2) and 16-bit grayscale
 * (color type 0, big-endian samples), the two formats the gen/1 wire
 * protocol uses for color and millimeter-depth images.
 */

import { deflateSync } from "node:zlib";

const SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

const CRC_TABLE = new Uint32Array(256);
for (let n = 0; n < 256; n++) {
  let c = n;
  for (let k = 0; k < 8; k++) {
    c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
  }
  CRC_TABLE[n] = c >>> 0;
}

function crc32(buf: Buffer): number {
  let c = 0xffffffff;
  for (const byte of buf) {
    c = CRC_TABLE[(c ^ byte) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function chunk(type: string, data: Buffer): Buffer {
  const head = Buffer.alloc(8);
  head.writeUInt32BE(data.length, 0);
  head.write(type, 4, "ascii");
  const crc = Buffer.alloc(4);
  crc.writeUInt32BE(crc32(Buffer.concat([head.subarray(4), data])), 0);
  return Buffer.concat([head, data, crc]);
}

function assemble(
  width: number,
  height: number,
  bitDepth: number,
  colorType: number,
  scanlines: Buffer,
): Buffer {
  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(width, 0);
  ihdr.writeUInt32BE(height, 4);
  ihdr.writeUInt8(bitDepth, 8);
  ihdr.writeUInt8(colorType, 9);
  // compression, filter, interlace: all 0
  return Buffer.concat([
    SIGNATURE,
    chunk("IHDR", ihdr),
    chunk("IDAT", deflateSync(scanlines)),
    chunk("IEND", Buffer.alloc(0)),
  ]);
}

/** Encode H*W*3 interleaved RGB bytes as an 8-bit truecolor PNG. */
export function encodeRgb8(
  pixels: Uint8Array,
  width: number,
  height: number,
): Buffer {
  if (pixels.length !== width * height * 3) {
    throw new Error("pixel buffer size disagrees with dimensions");
  }
  const stride = width * 3;
  const raw = Buffer.alloc(height * (stride + 1));
  for (let y = 0; y < height; y++) {
    // filter byte 0 (None), then the scanline
    Buffer.from(pixels.buffer, pixels.byteOffset + y * stride, stride).copy(
      raw,
      y * (stride + 1) + 1,
    );
  }
  return assemble(width, height, 8, 2, raw);
}

/** Encode H*W 16-bit samples as a 16-bit grayscale PNG (big-endian). */
export function encodeGray16(
  samples: Uint16Array,
  width: number,
  height: number,
): Buffer {
  if (samples.length !== width * height) {
    throw new Error("sample buffer size disagrees with dimensions");
  }
  const stride = width * 2;
  const raw = Buffer.alloc(height * (stride + 1));
  for (let y = 0; y < height; y++) {
    const row = y * (stride + 1);
    for (let x = 0; x < width; x++) {
      raw.writeUInt16BE(samples[y * width + x], row + 1 + x * 2);
    }
  }
  return assemble(width, height, 16, 0, raw);
}
