// Audio embeddings from log-mel spectrogram patches: the signal (16 kHz) is
// cut into 0.96 s windows hopping by 0.48 s (50% overlap, so one row every
// 0.48 s).  Each window becomes a 94 x 64 log-mel patch (25 ms frames, 10 ms
// hop, 64 mel bands spanning 125..7500 Hz) summarized per band by mean and
// standard deviation, giving the 128-dimensional row the trainer expects.

import { TARGET_RATE } from "./wav";

export const WINDOW_SAMPLES = Math.round(0.96 * TARGET_RATE); // 15360
export const HOP_SAMPLES = Math.round(0.48 * TARGET_RATE);    // 7680
export const ROW_DIM = 128;

const STFT_SIZE = 400;   // 25 ms
const STFT_HOP = 160;    // 10 ms
const FFT_SIZE = 512;
const MEL_BANDS = 64;
const MEL_LOW_HZ = 125;
const MEL_HIGH_HZ = 7500;
const LOG_FLOOR = 1e-6;

/** Rows emitted for a 16 kHz clip of n samples (>= 1 even when empty). */
export function rowCount(nSamples: number): number {
  if (nSamples <= WINDOW_SAMPLES) return 1;
  return Math.ceil((nSamples - WINDOW_SAMPLES) / HOP_SAMPLES) + 1;
}

function hann(n: number): Float32Array {
  const w = new Float32Array(n);
  for (let i = 0; i < n; i++) w[i] = 0.5 - 0.5 * Math.cos((2 * Math.PI * i) / (n - 1));
  return w;
}

const HANN = hann(STFT_SIZE);

/** In-place iterative radix-2 FFT over interleaved re/im arrays. */
function fft(re: Float64Array, im: Float64Array): void {
  const n = re.length;
  for (let i = 1, j = 0; i < n; i++) {
    let bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      [re[i], re[j]] = [re[j], re[i]];
      [im[i], im[j]] = [im[j], im[i]];
    }
  }
  for (let len = 2; len <= n; len <<= 1) {
    const ang = (-2 * Math.PI) / len;
    const wRe = Math.cos(ang);
    const wIm = Math.sin(ang);
    for (let i = 0; i < n; i += len) {
      let curRe = 1;
      let curIm = 0;
      for (let k = 0; k < len / 2; k++) {
        const uRe = re[i + k];
        const uIm = im[i + k];
        const vRe = re[i + k + len / 2] * curRe - im[i + k + len / 2] * curIm;
        const vIm = re[i + k + len / 2] * curIm + im[i + k + len / 2] * curRe;
        re[i + k] = uRe + vRe;
        im[i + k] = uIm + vIm;
        re[i + k + len / 2] = uRe - vRe;
        im[i + k + len / 2] = uIm - vIm;
        const nextRe = curRe * wRe - curIm * wIm;
        curIm = curRe * wIm + curIm * wRe;
        curRe = nextRe;
      }
    }
  }
}

function hzToMel(hz: number): number {
  return 1127 * Math.log(1 + hz / 700);
}

function buildMelFilters(): Float32Array[] {
  const bins = FFT_SIZE / 2 + 1;
  const melLow = hzToMel(MEL_LOW_HZ);
  const melHigh = hzToMel(MEL_HIGH_HZ);
  const centers: number[] = [];
  for (let m = 0; m < MEL_BANDS + 2; m++) {
    const mel = melLow + ((melHigh - melLow) * m) / (MEL_BANDS + 1);
    const hz = 700 * (Math.exp(mel / 1127) - 1);
    centers.push((hz / (TARGET_RATE / 2)) * (bins - 1));
  }
  const filters: Float32Array[] = [];
  for (let m = 1; m <= MEL_BANDS; m++) {
    const filt = new Float32Array(bins);
    const [lo, mid, hi] = [centers[m - 1], centers[m], centers[m + 1]];
    for (let b = Math.ceil(lo); b <= Math.min(Math.floor(hi), bins - 1); b++) {
      filt[b] = b <= mid ? (b - lo) / Math.max(mid - lo, 1e-9)
        : (hi - b) / Math.max(hi - mid, 1e-9);
      if (filt[b] < 0) filt[b] = 0;
    }
    filters.push(filt);
  }
  return filters;
}

const MEL_FILTERS = buildMelFilters();

/** Log-mel patch for one analysis window (zero-padded past the signal). */
function logMelPatch(samples: Float32Array, start: number): Float64Array[] {
  const frames: Float64Array[] = [];
  for (let f = 0; f + STFT_SIZE <= WINDOW_SAMPLES; f += STFT_HOP) {
    const re = new Float64Array(FFT_SIZE);
    const im = new Float64Array(FFT_SIZE);
    for (let i = 0; i < STFT_SIZE; i++) {
      const idx = start + f + i;
      re[i] = (idx < samples.length ? samples[idx] : 0) * HANN[i];
    }
    fft(re, im);
    const bins = FFT_SIZE / 2 + 1;
    const power = new Float64Array(bins);
    for (let b = 0; b < bins; b++) power[b] = re[b] * re[b] + im[b] * im[b];
    const mel = new Float64Array(MEL_BANDS);
    for (let m = 0; m < MEL_BANDS; m++) {
      let acc = 0;
      const filt = MEL_FILTERS[m];
      for (let b = 0; b < bins; b++) acc += power[b] * filt[b];
      mel[m] = Math.log(acc + LOG_FLOOR);
    }
    frames.push(mel);
  }
  return frames;
}

/** 16 kHz mono clip -> rows x 128 features (band means then band stds). */
export function audioFeatures(samples: Float32Array): { rows: number; data: Float32Array } {
  const rows = rowCount(samples.length);
  const data = new Float32Array(rows * ROW_DIM);
  for (let r = 0; r < rows; r++) {
    const patch = logMelPatch(samples, r * HOP_SAMPLES);
    const n = patch.length;
    for (let m = 0; m < MEL_BANDS; m++) {
      let mean = 0;
      for (const frame of patch) mean += frame[m];
      mean /= n;
      let varAcc = 0;
      for (const frame of patch) varAcc += (frame[m] - mean) * (frame[m] - mean);
      data[r * ROW_DIM + m] = mean;
      data[r * ROW_DIM + MEL_BANDS + m] = Math.sqrt(varAcc / n);
    }
  }
  return { rows, data };
}
