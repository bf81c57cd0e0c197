/**
 * Decoder forward pass over an OWLC tensor map, used to check logits parity
 * after export. Pre-norm blocks: RMSNorm -> causal multi-head attention with
 * interleaved-pair rotary embeddings -> residual -> RMSNorm -> SwiGLU ->
 * residual; final RMSNorm, then the LM head. Accumulations run in float64.
 */

import { Matrix, ModelConfig } from "./matrix.js";

function rmsnorm(x: Float64Array, weight: Matrix, eps: number): Float64Array {
  let ss = 0;
  for (let i = 0; i < x.length; i++) ss += x[i] * x[i];
  const inv = 1 / Math.sqrt(ss / x.length + eps);
  const out = new Float64Array(x.length);
  for (let i = 0; i < x.length; i++) out[i] = Math.fround(x[i] * inv * weight.data[i]);
  return out;
}

/** y = W x for row-major W (rows x cols), x length cols. */
function matvec(w: Matrix, x: Float64Array): Float64Array {
  const out = new Float64Array(w.rows);
  for (let r = 0; r < w.rows; r++) {
    let acc = 0;
    const base = r * w.cols;
    for (let c = 0; c < w.cols; c++) acc += w.data[base + c] * x[c];
    out[r] = Math.fround(acc);
  }
  return out;
}

function ropeRotate(vec: Float64Array, pos: number, theta: number): Float64Array {
  const d = vec.length;
  const out = new Float64Array(d);
  for (let i = 0; i < d; i += 2) {
    const angle = pos * Math.pow(theta, -i / d);
    const c = Math.cos(angle);
    const s = Math.sin(angle);
    out[i] = Math.fround(vec[i] * c - vec[i + 1] * s);
    out[i + 1] = Math.fround(vec[i] * s + vec[i + 1] * c);
  }
  return out;
}

export function forwardLogits(
  config: ModelConfig,
  tensors: Map<string, Matrix>,
  tokens: number[]
): Float64Array[] {
  const d = config.d_model;
  const headDim = d / config.n_heads;
  const get = (name: string): Matrix => {
    const t = tensors.get(name);
    if (!t) throw new Error(`forward: missing tensor '${name}'`);
    return t;
  };

  const embed = get("embed");
  const xs: Float64Array[] = tokens.map((t) => {
    if (t < 0 || t >= config.vocab_size) throw new Error(`token id ${t} out of range`);
    return Float64Array.from(embed.data.subarray(t * d, (t + 1) * d));
  });

  for (let layer = 0; layer < config.n_layers; layer++) {
    const pre = `blocks.${layer}`;
    const attnNorm = get(`${pre}.attn_norm`);
    const normed = xs.map((x) => rmsnorm(x, attnNorm, config.rms_eps));
    const qs = normed.map((h) => matvec(get(`${pre}.attn.q_proj`), h));
    const ks = normed.map((h) => matvec(get(`${pre}.attn.k_proj`), h));
    const vs = normed.map((h) => matvec(get(`${pre}.attn.v_proj`), h));

    const attnOut = xs.map(() => new Float64Array(d));
    for (let head = 0; head < config.n_heads; head++) {
      const lo = head * headDim;
      const rq = qs.map((q, p) => ropeRotate(q.subarray(lo, lo + headDim), p, config.rope_theta));
      const rk = ks.map((k, p) => ropeRotate(k.subarray(lo, lo + headDim), p, config.rope_theta));
      for (let t = 0; t < tokens.length; t++) {
        const scores = new Float64Array(t + 1);
        for (let u = 0; u <= t; u++) {
          let acc = 0;
          for (let j = 0; j < headDim; j++) acc += rq[t][j] * rk[u][j];
          scores[u] = Math.fround(acc) / Math.sqrt(headDim);
        }
        let mx = -Infinity;
        for (let u = 0; u <= t; u++) mx = Math.max(mx, scores[u]);
        let z = 0;
        const exps = new Float64Array(t + 1);
        for (let u = 0; u <= t; u++) {
          exps[u] = Math.exp(scores[u] - mx);
          z += exps[u];
        }
        for (let j = 0; j < headDim; j++) {
          let acc = 0;
          for (let u = 0; u <= t; u++) acc += (exps[u] / z) * vs[u][lo + j];
          attnOut[t][lo + j] = Math.fround(acc);
        }
      }
    }

    for (let t = 0; t < tokens.length; t++) {
      const proj = matvec(get(`${pre}.attn.o_proj`), attnOut[t]);
      for (let j = 0; j < d; j++) xs[t][j] = Math.fround(xs[t][j] + proj[j]);
    }

    const mlpNorm = get(`${pre}.mlp_norm`);
    for (let t = 0; t < tokens.length; t++) {
      const h2 = rmsnorm(xs[t], mlpNorm, config.rms_eps);
      const gate = matvec(get(`${pre}.mlp.gate_proj`), h2);
      const up = matvec(get(`${pre}.mlp.up_proj`), h2);
      const act = new Float64Array(gate.length);
      for (let j = 0; j < gate.length; j++) {
        act[j] = Math.fround((gate[j] / (1 + Math.exp(-gate[j]))) * up[j]);
      }
      const down = matvec(get(`${pre}.mlp.down_proj`), act);
      for (let j = 0; j < d; j++) xs[t][j] = Math.fround(xs[t][j] + down[j]);
    }
  }

  const finalNorm = get("final_norm");
  const head = get(config.tied_embeddings ? "embed" : "lm_head");
  return xs.map((x) => matvec(head, rmsnorm(x, finalNorm, config.rms_eps)));
}
