/**
 * Minimal safetensors reader: u64-LE header length, JSON tensor table, raw
 * little-endian payload. F32 is read directly; F16/BF16 are upcast to F32.
 */

export interface TensorMeta {
  dtype: string;
  shape: number[];
  data_offsets: [number, number];
}

export interface SafetensorsFile {
  tensors: Map<string, TensorMeta>;
  metadata: Record<string, string>;
  payload: Buffer;
}

export function parseSafetensors(raw: Buffer): SafetensorsFile {
  if (raw.length < 8) {
    throw new Error("safetensors: file too short for header length");
  }
  const headerLen = Number(raw.readBigUInt64LE(0));
  if (8 + headerLen > raw.length) {
    throw new Error("safetensors: header exceeds file size");
  }
  const header = JSON.parse(raw.subarray(8, 8 + headerLen).toString("utf-8"));
  const payload = raw.subarray(8 + headerLen);

  const tensors = new Map<string, TensorMeta>();
  let metadata: Record<string, string> = {};
  for (const [name, meta] of Object.entries(header)) {
    if (name === "__metadata__") {
      metadata = meta as Record<string, string>;
      continue;
    }
    tensors.set(name, meta as TensorMeta);
  }
  return { tensors, metadata, payload };
}

function f16ToF32(bits: number): number {
  const sign = (bits & 0x8000) >> 15;
  const exp = (bits & 0x7c00) >> 10;
  const frac = bits & 0x03ff;
  let value: number;
  if (exp === 0) {
    value = frac * 2 ** -24; // subnormal
  } else if (exp === 0x1f) {
    value = frac ? NaN : Infinity;
  } else {
    value = (1 + frac / 1024) * 2 ** (exp - 15);
  }
  return sign ? -value : value;
}

/** Materialize a tensor as Float32Array (row-major), upcasting if needed. */
export function readTensorF32(file: SafetensorsFile, name: string): Float32Array {
  const meta = file.tensors.get(name);
  if (!meta) {
    throw new Error(`safetensors: missing tensor '${name}'`);
  }
  const [begin, end] = meta.data_offsets;
  if (end > file.payload.length || begin > end) {
    throw new Error(`safetensors: tensor '${name}' offsets out of range`);
  }
  const bytes = file.payload.subarray(begin, end);
  const count = meta.shape.reduce((a, b) => a * b, 1);

  switch (meta.dtype) {
    case "F32": {
      if (bytes.length !== count * 4) {
        throw new Error(`safetensors: tensor '${name}' byte count mismatch`);
      }
      const out = new Float32Array(count);
      for (let i = 0; i < count; i++) out[i] = bytes.readFloatLE(i * 4);
      return out;
    }
    case "F16": {
      if (bytes.length !== count * 2) {
        throw new Error(`safetensors: tensor '${name}' byte count mismatch`);
      }
      const out = new Float32Array(count);
      for (let i = 0; i < count; i++) out[i] = f16ToF32(bytes.readUInt16LE(i * 2));
      return out;
    }
    case "BF16": {
      if (bytes.length !== count * 2) {
        throw new Error(`safetensors: tensor '${name}' byte count mismatch`);
      }
      const out = new Float32Array(count);
      const view = new DataView(new ArrayBuffer(4));
      for (let i = 0; i < count; i++) {
        view.setUint32(0, bytes.readUInt16LE(i * 2) << 16, false);
        out[i] = view.getFloat32(0, false);
      }
      return out;
    }
    default:
      throw new Error(`safetensors: unsupported dtype '${meta.dtype}' for '${name}'`);
  }
}
