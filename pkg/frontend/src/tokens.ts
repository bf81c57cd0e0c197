/** Export a text corpus into an OWLT token file. */

import * as fs from "node:fs";

import { writeOwlt } from "./owlt.js";
import { makeTokenizer } from "./tokenizer.js";
import { sortedStringify } from "./owlc.js";

export interface TokenExportManifest {
  source: string;
  tokenizer: string;
  vocab_size: number;
  token_count: number;
  max_tokens: number | null;
}

export function exportTokens(
  sourcePath: string,
  tokenizerId: string,
  outPath: string,
  maxTokens: number | null = null
): TokenExportManifest {
  const text = fs.readFileSync(sourcePath, "utf-8");
  if (text.length === 0) {
    throw new Error(`empty text source: ${sourcePath}`);
  }
  const tokenizer = makeTokenizer(tokenizerId);
  let tokens = tokenizer.encode(text);
  if (maxTokens !== null && tokens.length > maxTokens) {
    tokens = tokens.subarray(0, maxTokens);
  }
  fs.writeFileSync(outPath, writeOwlt(tokenizer.vocabSize, tokens));

  const manifest: TokenExportManifest = {
    source: sourcePath,
    tokenizer: tokenizer.id,
    vocab_size: tokenizer.vocabSize,
    token_count: tokens.length,
    max_tokens: maxTokens,
  };
  fs.writeFileSync(`${outPath}.manifest.json`, sortedStringify(manifest) + "\n");
  return manifest;
}
