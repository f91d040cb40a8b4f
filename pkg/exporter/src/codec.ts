// AVSF feature-file codec, byte-compatible with the Python trainer's loader.
//
// Layout (little-endian):
//   0..4   magic "AVSF1"
//   5      modality: 'V' (video) | 'A' (audio)
//   6      dtype code 0x01 = float32
//   7      ndim
//   8..    ndim x uint32 dims
//   ...    payload, float32 row-major
//
// Video payloads are frames x 7 x 7 x 512; audio payloads are steps x 128.

export const MAGIC = "AVSF1";
export const VIDEO_FRAME_SHAPE: readonly number[] = [7, 7, 512];
export const AUDIO_DIM = 128;

export type Modality = "video" | "audio";

const MODALITY_BYTE: Record<Modality, number> = {
  video: "V".charCodeAt(0),
  audio: "A".charCodeAt(0),
};

export class CodecError extends Error {}

function product(shape: readonly number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function encodeFeatureFile(
  data: Float32Array,
  shape: readonly number[],
  modality: Modality
): Buffer {
  if (modality === "video") {
    const ok =
      shape.length === 4 &&
      shape[1] === VIDEO_FRAME_SHAPE[0] &&
      shape[2] === VIDEO_FRAME_SHAPE[1] &&
      shape[3] === VIDEO_FRAME_SHAPE[2];
    if (!ok) throw new CodecError(`video features must be frames x 7 x 7 x 512, got [${shape}]`);
  } else if (shape.length !== 2 || shape[1] !== AUDIO_DIM) {
    throw new CodecError(`audio features must be steps x 128, got [${shape}]`);
  }
  if (data.length !== product(shape)) {
    throw new CodecError(`payload length ${data.length} does not match shape [${shape}]`);
  }
  const header = Buffer.alloc(8 + 4 * shape.length);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt8(MODALITY_BYTE[modality], 5);
  header.writeUInt8(0x01, 6);
  header.writeUInt8(shape.length, 7);
  shape.forEach((d, i) => header.writeUInt32LE(d, 8 + 4 * i));

  const payload = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) payload.writeFloatLE(data[i], i * 4);
  return Buffer.concat([header, payload]);
}

export interface DecodedFeatureFile {
  modality: Modality;
  shape: number[];
  data: Float32Array;
}

export function decodeFeatureFile(blob: Buffer): DecodedFeatureFile {
  if (blob.subarray(0, 5).toString("ascii") !== MAGIC) {
    throw new CodecError(`bad magic at byte 0: ${blob.subarray(0, 5).toString("hex")}`);
  }
  if (blob.length < 8) throw new CodecError(`truncated header at byte ${blob.length}`);
  const modByte = blob.readUInt8(5);
  const modality = Object.entries(MODALITY_BYTE).find(([, b]) => b === modByte)?.[0] as
    | Modality
    | undefined;
  if (!modality) throw new CodecError(`unknown modality byte at offset 5: ${modByte}`);
  if (blob.readUInt8(6) !== 0x01) {
    throw new CodecError(`unknown dtype code at offset 6: ${blob.readUInt8(6)}`);
  }
  const ndim = blob.readUInt8(7);
  const dimsEnd = 8 + 4 * ndim;
  if (blob.length < dimsEnd) throw new CodecError(`truncated shape header at byte ${blob.length}`);
  const shape: number[] = [];
  for (let i = 0; i < ndim; i++) shape.push(blob.readUInt32LE(8 + 4 * i));
  const expected = product(shape) * 4;
  if (blob.length - dimsEnd !== expected) {
    throw new CodecError(
      `payload is ${blob.length - dimsEnd} bytes at offset ${dimsEnd}, expected ${expected}`
    );
  }
  const data = new Float32Array(product(shape));
  for (let i = 0; i < data.length; i++) data[i] = blob.readFloatLE(dimsEnd + i * 4);
  return { modality, shape, data };
}
