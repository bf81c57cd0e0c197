/** Row-major float32 matrix plus the canonical model config shared by the
 * OWLC container and the parity forward pass. */

export interface Matrix {
  rows: number;
  cols: number;
  data: Float32Array; // length rows * cols
}

export function matrix(rows: number, cols: number, data: Float32Array): Matrix {
  if (data.length !== rows * cols) {
    throw new Error(`matrix: ${rows}x${cols} needs ${rows * cols} values, got ${data.length}`);
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new Error(`matrix: non-finite value at index ${i}`);
    }
  }
  return { rows, cols, data };
}

export interface ModelConfig {
  d_model: number;
  n_layers: number;
  n_heads: number;
  d_ff: number;
  vocab_size: number;
  rope_theta: number;
  rms_eps: number;
  tied_embeddings: boolean;
}

export const PROJECTIONS = [
  "attn.q_proj",
  "attn.k_proj",
  "attn.v_proj",
  "attn.o_proj",
  "mlp.gate_proj",
  "mlp.up_proj",
  "mlp.down_proj",
] as const;

/** Canonical tensor names for a config, in container order. */
export function canonicalNames(config: ModelConfig): string[] {
  const names = ["embed", "final_norm"];
  if (!config.tied_embeddings) names.push("lm_head");
  for (let i = 0; i < config.n_layers; i++) {
    for (const p of PROJECTIONS) names.push(`blocks.${i}.${p}`);
    names.push(`blocks.${i}.attn_norm`, `blocks.${i}.mlp_norm`);
  }
  return names;
}
