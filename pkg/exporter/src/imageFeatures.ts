// Frame features shaped like a conv-net's last spatial layer: a 7x7 grid of
// 512-channel cells.  Each cell summarizes its image region with color and
// gradient statistics which a fixed, seeded random projection lifts to 512
// channels behind a relu.  The projection is frozen (same constants on every
// run and machine); matching any particular pretrained network's values is
// explicitly not the contract, the grid geometry and determinism are.

import { Image } from "./ppm";

export const GRID = 7;
export const CHANNELS = 512;
const STATS = 16;

/** Deterministic 32-bit PRNG (mulberry32); seed fixed for reproducibility. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function buildProjection(): { weights: Float32Array; bias: Float32Array } {
  const rand = mulberry32(0x5eed_f00d);
  const weights = new Float32Array(STATS * CHANNELS);
  const scale = Math.sqrt(2 / STATS);
  for (let i = 0; i < weights.length; i++) {
    // Box-Muller for a normal draw
    const u = Math.max(rand(), 1e-12);
    const v = rand();
    weights[i] = Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v) * scale;
  }
  const bias = new Float32Array(CHANNELS);
  for (let i = 0; i < CHANNELS; i++) bias[i] = (rand() - 0.5) * 0.2;
  return { weights, bias };
}

const PROJECTION = buildProjection();

function cellStats(image: Image, x0: number, x1: number, y0: number, y1: number): Float32Array {
  const { width, pixels } = image;
  const stats = new Float32Array(STATS);
  const sums = [0, 0, 0];
  const sqs = [0, 0, 0];
  let gx = 0;
  let gy = 0;
  let lumMin = 1;
  let lumMax = 0;
  let count = 0;
  for (let y = y0; y < y1; y++) {
    for (let x = x0; x < x1; x++) {
      const base = (y * width + x) * 3;
      const r = pixels[base];
      const g = pixels[base + 1];
      const b = pixels[base + 2];
      sums[0] += r; sums[1] += g; sums[2] += b;
      sqs[0] += r * r; sqs[1] += g * g; sqs[2] += b * b;
      const lum = 0.299 * r + 0.587 * g + 0.114 * b;
      lumMin = Math.min(lumMin, lum);
      lumMax = Math.max(lumMax, lum);
      if (x + 1 < x1) {
        const right = (y * width + x + 1) * 3;
        gx += Math.abs(pixels[right] - r) + Math.abs(pixels[right + 1] - g)
          + Math.abs(pixels[right + 2] - b);
      }
      if (y + 1 < y1) {
        const down = ((y + 1) * width + x) * 3;
        gy += Math.abs(pixels[down] - r) + Math.abs(pixels[down + 1] - g)
          + Math.abs(pixels[down + 2] - b);
      }
      count++;
    }
  }
  for (let c = 0; c < 3; c++) {
    const mean = sums[c] / count;
    stats[c] = mean;
    stats[3 + c] = Math.sqrt(Math.max(sqs[c] / count - mean * mean, 0));
  }
  stats[6] = gx / count;
  stats[7] = gy / count;
  const lumMean = 0.299 * stats[0] + 0.587 * stats[1] + 0.114 * stats[2];
  stats[8] = lumMean;
  stats[9] = lumMin;
  stats[10] = lumMax;
  stats[11] = lumMax - lumMin;
  // normalized cell position lets the projection encode layout
  stats[12] = (x0 + x1) / (2 * image.width);
  stats[13] = (y0 + y1) / (2 * image.height);
  stats[14] = 1;
  stats[15] = (stats[0] + stats[1] + stats[2]) / 3;
  return stats;
}

/** One frame -> 7 x 7 x 512 features, row-major. */
export function frameFeatures(image: Image): Float32Array {
  const out = new Float32Array(GRID * GRID * CHANNELS);
  for (let gy = 0; gy < GRID; gy++) {
    for (let gx = 0; gx < GRID; gx++) {
      const x0 = Math.floor((gx * image.width) / GRID);
      const x1 = Math.max(Math.floor(((gx + 1) * image.width) / GRID), x0 + 1);
      const y0 = Math.floor((gy * image.height) / GRID);
      const y1 = Math.max(Math.floor(((gy + 1) * image.height) / GRID), y0 + 1);
      const stats = cellStats(image, x0, x1, y0, y1);
      const offset = (gy * GRID + gx) * CHANNELS;
      for (let c = 0; c < CHANNELS; c++) {
        let acc = PROJECTION.bias[c];
        for (let s = 0; s < STATS; s++) acc += stats[s] * PROJECTION.weights[s * CHANNELS + c];
        out[offset + c] = Math.max(acc, 0);
      }
    }
  }
  return out;
}
