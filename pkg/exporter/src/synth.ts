// Parity fixtures: AVSF pairs with a planted constant channel block, shaped
// exactly like the trainer's synthetic dataset files, for loader
// compatibility checks without any source media.

import * as fs from "fs";
import * as path from "path";

import { AUDIO_DIM, encodeFeatureFile, VIDEO_FRAME_SHAPE } from "./codec";

export function writeSyntheticPair(outDir: string, videoId: string,
                                   colorIndex = 0, frames = 4, steps = 5): void {
  const [h, w, c] = VIDEO_FRAME_SHAPE;
  const video = new Float32Array(frames * h * w * c);
  const lo = colorIndex * 16;
  for (let f = 0; f < frames; f++) {
    for (let cell = 0; cell < h * w; cell++) {
      const base = (f * h * w + cell) * c;
      for (let ch = lo; ch < lo + 16; ch++) video[base + ch] = 1.0;
    }
  }
  const audio = new Float32Array(steps * AUDIO_DIM);
  for (let s = 0; s < steps; s++) {
    for (let d = 0; d < 16; d++) audio[s * AUDIO_DIM + d] = 1.0;
  }
  fs.mkdirSync(path.join(outDir, "video"), { recursive: true });
  fs.mkdirSync(path.join(outDir, "audio"), { recursive: true });
  fs.writeFileSync(path.join(outDir, "video", `${videoId}.avsf`),
    encodeFeatureFile(video, [frames, h, w, c], "video"));
  fs.writeFileSync(path.join(outDir, "audio", `${videoId}.avsf`),
    encodeFeatureFile(audio, [steps, AUDIO_DIM], "audio"));
}
