// Binary PPM (P6, maxval 255) frames are the exporter's video input format:
// one directory per clip with frame files plus a meta.json carrying the
// source frame rate.

import * as fs from "fs";

export interface Image {
  width: number;
  height: number;
  /** RGB interleaved, values in [0, 1]. */
  pixels: Float32Array;
}

export function decodePpm(buffer: Buffer, name = "<ppm>"): Image {
  // header: "P6" <ws> width <ws> height <ws> maxval <single ws> payload
  let pos = 0;
  const tokens: string[] = [];
  while (tokens.length < 4 && pos < buffer.length) {
    while (pos < buffer.length && /\s/.test(String.fromCharCode(buffer[pos]))) pos++;
    if (buffer[pos] === "#".charCodeAt(0)) {
      while (pos < buffer.length && buffer[pos] !== 0x0a) pos++;
      continue;
    }
    let start = pos;
    while (pos < buffer.length && !/\s/.test(String.fromCharCode(buffer[pos]))) pos++;
    tokens.push(buffer.subarray(start, pos).toString("ascii"));
  }
  pos++; // the single whitespace after maxval
  const [magic, w, h, maxval] = tokens;
  if (magic !== "P6") throw new Error(`${name}: not a binary PPM (magic ${magic})`);
  if (maxval !== "255") throw new Error(`${name}: unsupported maxval ${maxval}`);
  const width = parseInt(w, 10);
  const height = parseInt(h, 10);
  const need = width * height * 3;
  if (buffer.length - pos < need) {
    throw new Error(`${name}: truncated pixel data (${buffer.length - pos} < ${need})`);
  }
  const pixels = new Float32Array(need);
  for (let i = 0; i < need; i++) pixels[i] = buffer[pos + i] / 255;
  return { width, height, pixels };
}

export function readPpm(path: string): Image {
  return decodePpm(fs.readFileSync(path), path);
}

export function encodePpm(image: Image): Buffer {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, "ascii");
  const body = Buffer.alloc(image.pixels.length);
  for (let i = 0; i < image.pixels.length; i++) {
    body[i] = Math.max(0, Math.min(255, Math.round(image.pixels[i] * 255)));
  }
  return Buffer.concat([header, body]);
}
