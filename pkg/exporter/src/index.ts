export { AUDIO_DIM, CodecError, decodeFeatureFile, encodeFeatureFile,
  MAGIC, VIDEO_FRAME_SHAPE } from "./codec";
export { audioFeatures, HOP_SAMPLES, ROW_DIM, rowCount, WINDOW_SAMPLES } from "./audioFeatures";
export { CHANNELS, frameFeatures, GRID } from "./imageFeatures";
export { extractAll, extractAudio, extractClip, extractVideo, manifestCsv,
  videoRowCount } from "./extract";
export { writeSyntheticPair } from "./synth";
export { decodePpm, encodePpm, readPpm } from "./ppm";
export { decodeWav, encodeWav, readWav, resampleTo16k, TARGET_RATE } from "./wav";
