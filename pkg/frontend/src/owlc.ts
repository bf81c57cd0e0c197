/**
 * OWLC checkpoint container writer/reader.
 *
 * Layout (little-endian): magic "OWLC", u32 version (=1), u64 header length,
 * UTF-8 JSON header {config, tensors: {name: {dtype, shape, offset, nbytes}}}
 * space-padded so the payload starts 64-byte aligned, then row-major float32
 * tensors at 64-byte-aligned offsets. Tensor order and JSON key order are
 * sorted, so identical inputs serialize byte-identically.
 */

import { Matrix, ModelConfig, matrix } from "./matrix.js";

const MAGIC = "OWLC";
const VERSION = 1;
const ALIGN = 64;

/** JSON.stringify with recursively sorted object keys (deterministic bytes). */
export function sortedStringify(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(sortedStringify).join(",")}]`;
  }
  if (value !== null && typeof value === "object") {
    const keys = Object.keys(value as object).sort();
    const body = keys.map(
      (k) => `${JSON.stringify(k)}:${sortedStringify((value as Record<string, unknown>)[k])}`
    );
    return `{${body.join(",")}}`;
  }
  return JSON.stringify(value);
}

export function writeOwlc(config: ModelConfig, tensors: Map<string, Matrix>): Buffer {
  const names = [...tensors.keys()].sort();
  const entries: Record<string, object> = {};
  let offset = 0;
  for (const name of names) {
    const t = tensors.get(name)!;
    const nbytes = t.data.length * 4;
    entries[name] = { dtype: "f32", shape: [t.rows, t.cols], offset, nbytes };
    offset += nbytes;
    offset += (ALIGN - (offset % ALIGN)) % ALIGN;
  }
  const header = { config, tensors: entries };
  let headerJson = sortedStringify(header);
  const pad = (ALIGN - ((16 + Buffer.byteLength(headerJson)) % ALIGN)) % ALIGN;
  headerJson += " ".repeat(pad);
  const headerBytes = Buffer.from(headerJson, "utf-8");

  const payloadSize = offset;
  const out = Buffer.alloc(16 + headerBytes.length + payloadSize);
  out.write(MAGIC, 0, "ascii");
  out.writeUInt32LE(VERSION, 4);
  out.writeBigUInt64LE(BigInt(headerBytes.length), 8);
  headerBytes.copy(out, 16);

  const payloadStart = 16 + headerBytes.length;
  for (const name of names) {
    const t = tensors.get(name)!;
    const at = payloadStart + (entries[name] as { offset: number }).offset;
    for (let i = 0; i < t.data.length; i++) {
      out.writeFloatLE(t.data[i], at + i * 4);
    }
  }
  return out;
}

export interface OwlcFile {
  config: ModelConfig;
  tensors: Map<string, Matrix>;
}

export function readOwlc(raw: Buffer): OwlcFile {
  if (raw.length < 16 || raw.toString("ascii", 0, 4) !== MAGIC) {
    throw new Error("owlc: bad magic");
  }
  if (raw.readUInt32LE(4) !== VERSION) {
    throw new Error("owlc: unsupported version");
  }
  const headerLen = Number(raw.readBigUInt64LE(8));
  const header = JSON.parse(raw.subarray(16, 16 + headerLen).toString("utf-8"));
  const payload = raw.subarray(16 + headerLen);

  const tensors = new Map<string, Matrix>();
  for (const [name, metaRaw] of Object.entries(header.tensors)) {
    const meta = metaRaw as { dtype: string; shape: [number, number]; offset: number; nbytes: number };
    if (meta.dtype !== "f32") throw new Error(`owlc: unsupported dtype for '${name}'`);
    const [rows, cols] = meta.shape;
    if (meta.nbytes !== rows * cols * 4) throw new Error(`owlc: nbytes mismatch for '${name}'`);
    if (meta.offset + meta.nbytes > payload.length) throw new Error(`owlc: truncated '${name}'`);
    const data = new Float32Array(rows * cols);
    for (let i = 0; i < data.length; i++) data[i] = payload.readFloatLE(meta.offset + i * 4);
    tensors.set(name, matrix(rows, cols, data));
  }
  return { config: header.config as ModelConfig, tensors };
}
