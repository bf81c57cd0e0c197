/**
 * Export a LLaMA-architecture HF checkpoint (config.json + model.safetensors)
 * into the OWLC container.
 *
 * HF stores q/k projections for the half-split rotary convention
 * (pair i = dims (i, i + headDim/2)); the container's forward rotates
 * interleaved pairs (2i, 2i+1), so q/k rows are permuted per head:
 * out[2i] = in[i], out[2i+1] = in[i + headDim/2].
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { Matrix, ModelConfig, PROJECTIONS, canonicalNames, matrix } from "./matrix.js";
import { sortedStringify, writeOwlc } from "./owlc.js";
import { SafetensorsFile, parseSafetensors, readTensorF32 } from "./safetensors.js";

const MAX_EXPORT_PARAMS = 100_000_000;

export interface HfConfig {
  model_type?: string;
  vocab_size: number;
  hidden_size: number;
  intermediate_size: number;
  num_hidden_layers: number;
  num_attention_heads: number;
  num_key_value_heads?: number;
  hidden_act?: string;
  rms_norm_eps?: number;
  rope_theta?: number;
  tie_word_embeddings?: boolean;
}

export function mapConfig(hf: HfConfig): ModelConfig {
  if (hf.model_type !== undefined && hf.model_type !== "llama") {
    throw new Error(`unsupported architecture: model_type '${hf.model_type}'`);
  }
  const kv = hf.num_key_value_heads ?? hf.num_attention_heads;
  if (kv !== hf.num_attention_heads) {
    throw new Error(
      `unsupported architecture: grouped-query attention ` +
        `(${kv} KV heads for ${hf.num_attention_heads} heads)`
    );
  }
  if (hf.hidden_act !== undefined && hf.hidden_act !== "silu") {
    throw new Error(`unsupported architecture: non-SwiGLU activation '${hf.hidden_act}'`);
  }
  return {
    d_model: hf.hidden_size,
    n_layers: hf.num_hidden_layers,
    n_heads: hf.num_attention_heads,
    d_ff: hf.intermediate_size,
    vocab_size: hf.vocab_size,
    rope_theta: hf.rope_theta ?? 10000.0,
    rms_eps: hf.rms_norm_eps ?? 1e-5,
    tied_embeddings: hf.tie_word_embeddings ?? false,
  };
}

/** Source tensor name for each canonical name. */
export function tensorNameMap(config: ModelConfig): Map<string, string> {
  const map = new Map<string, string>();
  map.set("embed", "model.embed_tokens.weight");
  map.set("final_norm", "model.norm.weight");
  if (!config.tied_embeddings) map.set("lm_head", "lm_head.weight");
  for (let i = 0; i < config.n_layers; i++) {
    for (const p of PROJECTIONS) {
      const [group, proj] = p.split(".");
      const hfGroup = group === "attn" ? "self_attn" : "mlp";
      map.set(`blocks.${i}.${p}`, `model.layers.${i}.${hfGroup}.${proj}.weight`);
    }
    map.set(`blocks.${i}.attn_norm`, `model.layers.${i}.input_layernorm.weight`);
    map.set(`blocks.${i}.mlp_norm`, `model.layers.${i}.post_attention_layernorm.weight`);
  }
  return map;
}

/** Permute half-split rotary rows to interleaved-pair rows, per head. */
export function permuteRotaryRows(t: Matrix, nHeads: number): Matrix {
  const headDim = t.rows / nHeads;
  if (!Number.isInteger(headDim) || headDim % 2 !== 0) {
    throw new Error(`cannot permute ${t.rows} rows over ${nHeads} heads`);
  }
  const half = headDim / 2;
  const out = new Float32Array(t.data.length);
  for (let h = 0; h < nHeads; h++) {
    for (let i = 0; i < half; i++) {
      const evenDst = (h * headDim + 2 * i) * t.cols;
      const oddDst = (h * headDim + 2 * i + 1) * t.cols;
      const evenSrc = (h * headDim + i) * t.cols;
      const oddSrc = (h * headDim + half + i) * t.cols;
      out.set(t.data.subarray(evenSrc, evenSrc + t.cols), evenDst);
      out.set(t.data.subarray(oddSrc, oddSrc + t.cols), oddDst);
    }
  }
  return matrix(t.rows, t.cols, out);
}

function asMatrix(file: SafetensorsFile, name: string, rows: number, cols: number): Matrix {
  const meta = file.tensors.get(name);
  if (!meta) throw new Error(`missing tensor '${name}' in checkpoint`);
  const dims = meta.shape;
  const flat = readTensorF32(file, name);
  if (dims.length === 1 && rows === 1 && dims[0] === cols) {
    return matrix(1, cols, flat);
  }
  if (dims.length !== 2 || dims[0] !== rows || dims[1] !== cols) {
    throw new Error(`tensor '${name}' has shape [${dims}], expected [${rows}, ${cols}]`);
  }
  return matrix(rows, cols, flat);
}

export interface ExportManifest {
  source: string;
  config: ModelConfig;
  tensor_map: Record<string, string>;
  tokenizer: string;
  params: number;
}

export interface ExportResult {
  config: ModelConfig;
  tensors: Map<string, Matrix>;
  manifest: ExportManifest;
}

/** Build the canonical tensor map from an HF model directory. */
export function convertModel(sourceDir: string, tokenizerId = "byte"): ExportResult {
  const configPath = path.join(sourceDir, "config.json");
  const weightsPath = path.join(sourceDir, "model.safetensors");
  const hf = JSON.parse(fs.readFileSync(configPath, "utf-8")) as HfConfig;
  const config = mapConfig(hf);
  const file = parseSafetensors(fs.readFileSync(weightsPath));

  const d = config.d_model;
  const shapes = new Map<string, [number, number]>();
  shapes.set("embed", [config.vocab_size, d]);
  shapes.set("final_norm", [1, d]);
  if (!config.tied_embeddings) shapes.set("lm_head", [config.vocab_size, d]);
  for (let i = 0; i < config.n_layers; i++) {
    shapes.set(`blocks.${i}.attn.q_proj`, [d, d]);
    shapes.set(`blocks.${i}.attn.k_proj`, [d, d]);
    shapes.set(`blocks.${i}.attn.v_proj`, [d, d]);
    shapes.set(`blocks.${i}.attn.o_proj`, [d, d]);
    shapes.set(`blocks.${i}.mlp.gate_proj`, [config.d_ff, d]);
    shapes.set(`blocks.${i}.mlp.up_proj`, [config.d_ff, d]);
    shapes.set(`blocks.${i}.mlp.down_proj`, [d, config.d_ff]);
    shapes.set(`blocks.${i}.attn_norm`, [1, d]);
    shapes.set(`blocks.${i}.mlp_norm`, [1, d]);
  }

  const nameMap = tensorNameMap(config);
  const tensors = new Map<string, Matrix>();
  let params = 0;
  for (const name of canonicalNames(config)) {
    const src = nameMap.get(name)!;
    const [rows, cols] = shapes.get(name)!;
    let t = asMatrix(file, src, rows, cols);
    if (name.endsWith("attn.q_proj") || name.endsWith("attn.k_proj")) {
      t = permuteRotaryRows(t, config.n_heads);
    }
    tensors.set(name, t);
    params += t.data.length;
  }
  if (params > MAX_EXPORT_PARAMS) {
    throw new Error(`model too large for desk export: ${params} parameters`);
  }

  const manifest: ExportManifest = {
    source: sourceDir,
    config,
    tensor_map: Object.fromEntries([...nameMap.entries()].sort()),
    tokenizer: tokenizerId,
    params,
  };
  return { config, tensors, manifest };
}

export function exportModel(sourceDir: string, outPath: string, tokenizerId = "byte"): ExportManifest {
  const { config, tensors, manifest } = convertModel(sourceDir, tokenizerId);
  fs.writeFileSync(outPath, writeOwlc(config, tensors));
  fs.writeFileSync(`${outPath}.manifest.json`, sortedStringify(manifest) + "\n");
  return manifest;
}
