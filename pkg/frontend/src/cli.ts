#!/usr/bin/env node
/**
 * owlkit-convert: export models and corpora into OWLC/OWLT containers.
 *
 * Usage:
 *   owlkit-convert export-model  --source DIR --out model.owlc [--parity parity.json]
 *                                [--parity-tokens tokens.owlt] [--prompts N]
 *   owlkit-convert export-tokens --source text.txt --tokenizer byte --out tokens.owlt
 *                                [--max-tokens N]
 *
 * export-model reads config.json + model.safetensors (HF LLaMA layout) from
 * --source. With --parity it re-reads the written container and stores logits
 * for a few 16-token prompts, for cross-implementation comparison.
 */

import * as fs from "node:fs";
import * as process from "node:process";
import { pathToFileURL } from "node:url";

import { exportModel } from "./convert.js";
import { forwardLogits } from "./forward.js";
import { readOwlc, sortedStringify } from "./owlc.js";
import { readOwlt } from "./owlt.js";
import { exportTokens } from "./tokens.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    if (!argv[i].startsWith("--")) {
      throw new Error(`unexpected argument '${argv[i]}'`);
    }
    const key = argv[i].slice(2);
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) {
      throw new Error(`flag --${key} needs a value`);
    }
    flags.set(key, value);
    i++;
  }
  return flags;
}

function need(flags: Map<string, string>, key: string): string {
  const v = flags.get(key);
  if (v === undefined) throw new Error(`missing required flag --${key}`);
  return v;
}

/** Deterministic 16-token parity prompts: windows of a token file when given,
 * otherwise a small linear-congruential stream over the vocab. */
function parityPrompts(vocabSize: number, count: number, tokensPath?: string): number[][] {
  const prompts: number[][] = [];
  if (tokensPath) {
    const { tokens } = readOwlt(fs.readFileSync(tokensPath));
    const stride = Math.max(1, Math.floor((tokens.length - 16) / count));
    for (let i = 0; i < count; i++) {
      prompts.push([...tokens.subarray(i * stride, i * stride + 16)]);
    }
    return prompts;
  }
  let state = 0x2545f491;
  for (let i = 0; i < count; i++) {
    const prompt: number[] = [];
    for (let j = 0; j < 16; j++) {
      state = (Math.imul(state, 1103515245) + 12345) >>> 0;
      prompt.push(state % vocabSize);
    }
    prompts.push(prompt);
  }
  return prompts;
}

function cmdExportModel(flags: Map<string, string>): number {
  const source = need(flags, "source");
  const out = need(flags, "out");
  const manifest = exportModel(source, out, flags.get("tokenizer") ?? "byte");
  console.log(
    `exported ${manifest.params} parameters ` +
      `(${manifest.config.n_layers} blocks, d_model ${manifest.config.d_model}) -> ${out}`
  );

  const parityPath = flags.get("parity");
  if (parityPath) {
    const { config, tensors } = readOwlc(fs.readFileSync(out));
    const count = Number(flags.get("prompts") ?? "3");
    const prompts = parityPrompts(config.vocab_size, count, flags.get("parity-tokens"));
    const cases = prompts.map((tokens) => ({
      tokens,
      logits: forwardLogits(config, tensors, tokens).map((row) => [...row]),
    }));
    fs.writeFileSync(parityPath, sortedStringify({ model: out, prompts: cases }) + "\n");
    console.log(`wrote ${cases.length} parity prompts -> ${parityPath}`);
  }
  return 0;
}

function cmdExportTokens(flags: Map<string, string>): number {
  const source = need(flags, "source");
  const out = need(flags, "out");
  const tokenizer = flags.get("tokenizer") ?? "byte";
  const maxTokens = flags.has("max-tokens") ? Number(flags.get("max-tokens")) : null;
  const manifest = exportTokens(source, tokenizer, out, maxTokens);
  console.log(
    `tokenized ${manifest.token_count} tokens (vocab ${manifest.vocab_size}, ` +
      `tokenizer ${manifest.tokenizer}) -> ${out}`
  );
  return 0;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    switch (command) {
      case "export-model":
        return cmdExportModel(parseFlags(rest));
      case "export-tokens":
        return cmdExportTokens(parseFlags(rest));
      default:
        console.error("usage: owlkit-convert {export-model|export-tokens} --help-see-header");
        return 2;
    }
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
