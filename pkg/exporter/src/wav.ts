// Minimal RIFF/WAV reader for 16-bit PCM, any rate, channels averaged,
// plus linear resampling to the 16 kHz the audio embedder expects.

import * as fs from "fs";

export const TARGET_RATE = 16000;

export interface AudioClip {
  sampleRate: number;
  /** Mono samples in [-1, 1]. */
  samples: Float32Array;
}

export function decodeWav(buffer: Buffer, name = "<wav>"): AudioClip {
  if (buffer.subarray(0, 4).toString("ascii") !== "RIFF" ||
      buffer.subarray(8, 12).toString("ascii") !== "WAVE") {
    throw new Error(`${name}: not a RIFF/WAVE file`);
  }
  let pos = 12;
  let sampleRate = 0;
  let channels = 0;
  let bits = 0;
  let data: Buffer | null = null;
  while (pos + 8 <= buffer.length) {
    const id = buffer.subarray(pos, pos + 4).toString("ascii");
    const size = buffer.readUInt32LE(pos + 4);
    const body = buffer.subarray(pos + 8, pos + 8 + size);
    if (id === "fmt ") {
      const format = body.readUInt16LE(0);
      if (format !== 1) throw new Error(`${name}: only PCM wav supported (format ${format})`);
      channels = body.readUInt16LE(2);
      sampleRate = body.readUInt32LE(4);
      bits = body.readUInt16LE(14);
      if (bits !== 16) throw new Error(`${name}: only 16-bit PCM supported (${bits} bits)`);
    } else if (id === "data") {
      data = Buffer.from(body);
    }
    pos += 8 + size + (size % 2);
  }
  if (!sampleRate || !data) throw new Error(`${name}: missing fmt or data chunk`);
  const frames = Math.floor(data.length / (2 * channels));
  const samples = new Float32Array(frames);
  for (let i = 0; i < frames; i++) {
    let acc = 0;
    for (let c = 0; c < channels; c++) acc += data.readInt16LE((i * channels + c) * 2);
    samples[i] = acc / channels / 32768;
  }
  return { sampleRate, samples };
}

export function readWav(path: string): AudioClip {
  return decodeWav(fs.readFileSync(path), path);
}

export function resampleTo16k(clip: AudioClip): Float32Array {
  if (clip.sampleRate === TARGET_RATE) return clip.samples;
  const ratio = clip.sampleRate / TARGET_RATE;
  const out = new Float32Array(Math.floor(clip.samples.length / ratio));
  for (let i = 0; i < out.length; i++) {
    const t = i * ratio;
    const lo = Math.floor(t);
    const hi = Math.min(lo + 1, clip.samples.length - 1);
    const frac = t - lo;
    out[i] = clip.samples[lo] * (1 - frac) + clip.samples[hi] * frac;
  }
  return out;
}

export function encodeWav(samples: Float32Array, sampleRate: number): Buffer {
  const data = Buffer.alloc(samples.length * 2);
  for (let i = 0; i < samples.length; i++) {
    data.writeInt16LE(Math.max(-32768, Math.min(32767, Math.round(samples[i] * 32767))), i * 2);
  }
  const header = Buffer.alloc(44);
  header.write("RIFF", 0, "ascii");
  header.writeUInt32LE(36 + data.length, 4);
  header.write("WAVE", 8, "ascii");
  header.write("fmt ", 12, "ascii");
  header.writeUInt32LE(16, 16);
  header.writeUInt16LE(1, 20);       // PCM
  header.writeUInt16LE(1, 22);       // mono
  header.writeUInt32LE(sampleRate, 24);
  header.writeUInt32LE(sampleRate * 2, 28);
  header.writeUInt16LE(2, 32);
  header.writeUInt16LE(16, 34);
  header.write("data", 36, "ascii");
  header.writeUInt32LE(data.length, 40);
  return Buffer.concat([header, data.subarray(0, data.length)]);
}
