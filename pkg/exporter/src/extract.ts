// Per-clip extraction: frame sampling at the requested rate, audio
// windowing, and AVSF emission, plus the manifest rows.
//
// Input layout, one directory per clip:
//   <input>/<video_id>/meta.json          {"fps": <source frame rate>}
//   <input>/<video_id>/frames/*.ppm       binary PPM frames, sorted order
//   <input>/<video_id>/audio.wav          16-bit PCM, any rate
// Output:
//   <output>/video/<video_id>.avsf        frames x 7 x 7 x 512
//   <output>/audio/<video_id>.avsf        steps x 128
//   <output>/manifest.csv

import * as crypto from "crypto";
import * as fs from "fs";
import * as path from "path";

import { audioFeatures, ROW_DIM } from "./audioFeatures";
import { encodeFeatureFile } from "./codec";
import { CHANNELS, GRID, frameFeatures } from "./imageFeatures";
import { readPpm } from "./ppm";
import { readWav, resampleTo16k, TARGET_RATE } from "./wav";

export interface ManifestRow {
  videoId: string;
  sourcePath: string;
  fpsUsed: number;
  framesTotal: number;
  audioSteps: number;
  videoChecksum: string;
  audioChecksum: string;
}

export function sha256(buffer: Buffer): string {
  return crypto.createHash("sha256").update(buffer).digest("hex");
}

/** Output row count for a clip of `duration` seconds sampled at `fps`. */
export function videoRowCount(duration: number, fps: number): number {
  return Math.max(1, Math.round(duration * fps));
}

export function extractVideo(clipDir: string, fps: number): Buffer {
  const framesDir = path.join(clipDir, "frames");
  const metaPath = path.join(clipDir, "meta.json");
  if (!fs.existsSync(framesDir) || !fs.existsSync(metaPath)) {
    throw new Error(`${clipDir}: expected frames/ and meta.json`);
  }
  const meta = JSON.parse(fs.readFileSync(metaPath, "utf-8"));
  const sourceFps = Number(meta.fps);
  if (!(sourceFps > 0)) throw new Error(`${metaPath}: meta.json needs a positive "fps"`);
  const frameFiles = fs.readdirSync(framesDir).filter((f) => f.endsWith(".ppm")).sort();
  if (frameFiles.length === 0) throw new Error(`${framesDir}: no .ppm frames`);

  const duration = frameFiles.length / sourceFps;
  const rows = videoRowCount(duration, fps);
  const out = new Float32Array(rows * GRID * GRID * CHANNELS);
  let lastSource = -1;
  let lastFeatures: Float32Array | null = null;
  for (let r = 0; r < rows; r++) {
    const t = (r + 0.5) / fps;
    const source = Math.min(Math.max(Math.floor(t * sourceFps), 0), frameFiles.length - 1);
    if (source !== lastSource) {
      lastFeatures = frameFeatures(readPpm(path.join(framesDir, frameFiles[source])));
      lastSource = source;
    }
    out.set(lastFeatures!, r * GRID * GRID * CHANNELS);
  }
  return encodeFeatureFile(out, [rows, GRID, GRID, CHANNELS], "video");
}

export function extractAudio(wavPath: string, warn: (msg: string) => void = console.warn): Buffer {
  if (!fs.existsSync(wavPath)) throw new Error(`${wavPath}: missing audio.wav`);
  const samples = resampleTo16k(readWav(wavPath));
  const silent = samples.length === 0 || samples.every((s) => s === 0);
  if (silent) {
    warn(`${wavPath}: silent or empty track, emitting a single row`);
    const single = audioFeatures(new Float32Array(0));
    return encodeFeatureFile(single.data, [1, ROW_DIM], "audio");
  }
  const { rows, data } = audioFeatures(samples);
  return encodeFeatureFile(data, [rows, ROW_DIM], "audio");
}

export function extractClip(
  inputRoot: string,
  outputRoot: string,
  videoId: string,
  fps: number,
  warn: (msg: string) => void = console.warn
): ManifestRow {
  const clipDir = path.join(inputRoot, videoId);
  const videoBlob = extractVideo(clipDir, fps);
  const audioBlob = extractAudio(path.join(clipDir, "audio.wav"), warn);

  fs.mkdirSync(path.join(outputRoot, "video"), { recursive: true });
  fs.mkdirSync(path.join(outputRoot, "audio"), { recursive: true });
  const videoOut = path.join(outputRoot, "video", `${videoId}.avsf`);
  const audioOut = path.join(outputRoot, "audio", `${videoId}.avsf`);
  fs.writeFileSync(videoOut, videoBlob);
  fs.writeFileSync(audioOut, audioBlob);

  const framesTotal = videoBlob.readUInt32LE(8);
  const audioSteps = audioBlob.readUInt32LE(8);
  return {
    videoId,
    sourcePath: clipDir,
    fpsUsed: fps,
    framesTotal,
    audioSteps,
    videoChecksum: sha256(videoBlob),
    audioChecksum: sha256(audioBlob),
  };
}

export function manifestCsv(rows: ManifestRow[]): string {
  const header = "video_id,source_path,fps_used,frames_total,audio_steps," +
    "video_checksum,audio_checksum";
  const lines = rows.map((r) =>
    [r.videoId, r.sourcePath, r.fpsUsed, r.framesTotal, r.audioSteps,
      r.videoChecksum, r.audioChecksum].join(","));
  return [header, ...lines].join("\n") + "\n";
}

export function extractAll(
  inputRoot: string,
  outputRoot: string,
  fps: number,
  warn: (msg: string) => void = console.warn
): ManifestRow[] {
  const ids = fs.readdirSync(inputRoot)
    .filter((name) => fs.statSync(path.join(inputRoot, name)).isDirectory())
    .sort();
  if (ids.length === 0) throw new Error(`${inputRoot}: no clip directories found`);
  const rows = ids.map((id) => extractClip(inputRoot, outputRoot, id, fps, warn));
  fs.writeFileSync(path.join(outputRoot, "manifest.csv"), manifestCsv(rows));
  return rows;
}
