#!/usr/bin/env python3
"""Train a tiny byte-level LLaMA-architecture model and save it in the
standard safetensors + config.json layout, as converter input.

Dev tooling only (needs torch + transformers, which are not owlkit deps).
The corpus is Python source text bundled with the interpreter, read
byte-level (vocab 256), so the resulting weights carry real structure:
non-uniform layerwise outlier ratios and a perplexity far below vocab size.

Usage:
    python3 scripts/train_tiny_source.py --out frontend/fixtures/tiny-llama \
        [--steps 900] [--d-model 128] [--layers 4]

Outputs in --out:
    model.safetensors, config.json     tiny LLaMA checkpoint (float32)
    corpus-train.txt, corpus-eval.txt  text for export-tokens
    hf_logits.json                     HF-side logits on 3 prompts (upstream
                                       cross-check for the converter tests)
"""

import argparse
import glob
import json
import os
import sys


def build_corpus(max_bytes: int) -> bytes:
    roots = [os.path.dirname(os.__file__)]
    chunks = []
    total = 0
    for root in roots:
        for path in sorted(glob.glob(os.path.join(root, "*.py"))):
            try:
                with open(path, "rb") as f:
                    data = f.read()
            except OSError:
                continue
            data = bytes(b for b in data if b < 128)  # ascii-only, ids < 256 anyway
            chunks.append(data)
            total += len(data)
            if total >= max_bytes:
                return b"\n".join(chunks)[:max_bytes]
    return b"\n".join(chunks)[:max_bytes]


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", required=True)
    parser.add_argument("--steps", type=int, default=900)
    parser.add_argument("--d-model", type=int, default=128)
    parser.add_argument("--layers", type=int, default=4)
    parser.add_argument("--heads", type=int, default=4)
    parser.add_argument("--d-ff", type=int, default=344)
    parser.add_argument("--seq-len", type=int, default=256)
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--lr", type=float, default=3e-3)
    parser.add_argument("--corpus-bytes", type=int, default=3_000_000)
    parser.add_argument("--seed", type=int, default=1234)
    args = parser.parse_args()

    import torch
    from transformers import LlamaConfig, LlamaForCausalLM

    torch.manual_seed(args.seed)
    os.makedirs(args.out, exist_ok=True)

    raw = build_corpus(args.corpus_bytes)
    # hold out every 20th 64KB chunk so eval text matches the train distribution
    chunk = 1 << 16
    train_parts, eval_parts = [], []
    for i in range(0, len(raw), chunk):
        (eval_parts if (i // chunk) % 20 == 19 else train_parts).append(raw[i : i + chunk])
    train_bytes, eval_bytes = b"".join(train_parts), b"".join(eval_parts)
    with open(os.path.join(args.out, "corpus-train.txt"), "wb") as f:
        f.write(train_bytes)
    with open(os.path.join(args.out, "corpus-eval.txt"), "wb") as f:
        f.write(eval_bytes)
    print(f"corpus: {len(train_bytes)} train bytes, {len(eval_bytes)} eval bytes")

    config = LlamaConfig(
        vocab_size=256,
        hidden_size=args.d_model,
        intermediate_size=args.d_ff,
        num_hidden_layers=args.layers,
        num_attention_heads=args.heads,
        num_key_value_heads=args.heads,
        max_position_embeddings=args.seq_len * 2,
        rms_norm_eps=1e-5,
        rope_theta=10000.0,
        tie_word_embeddings=False,
        attention_bias=False,
        mlp_bias=False,
        hidden_act="silu",
    )
    model = LlamaForCausalLM(config)
    n_params = sum(p.numel() for p in model.parameters())
    print(f"model: {n_params/1e6:.2f}M parameters")

    data = torch.tensor(list(train_bytes), dtype=torch.long)
    eval_data = torch.tensor(list(eval_bytes), dtype=torch.long)

    def batch(source, rng):
        starts = torch.randint(0, source.numel() - args.seq_len, (args.batch,), generator=rng)
        # labels = input_ids: the causal LM shifts internally
        return torch.stack([source[s : s + args.seq_len] for s in starts])

    rng = torch.Generator().manual_seed(args.seed)
    optim = torch.optim.AdamW(model.parameters(), lr=args.lr, weight_decay=0.1)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(optim, T_max=args.steps)
    model.train()
    for step in range(args.steps):
        x = batch(data, rng)
        out = model(input_ids=x, labels=x)
        out.loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        optim.step()
        sched.step()
        optim.zero_grad()
        if step % 50 == 0 or step == args.steps - 1:
            print(f"step {step:4d}  loss {out.loss.item():.4f}")

    model.eval()
    with torch.no_grad():
        x = batch(eval_data, torch.Generator().manual_seed(0))
        eval_loss = model(input_ids=x, labels=x).loss.item()
    print(f"eval loss {eval_loss:.4f} (ppl {torch.exp(torch.tensor(eval_loss)).item():.2f})")

    model = model.float()
    model.save_pretrained(args.out, safe_serialization=True)

    # HF-side logits on short prompts: upstream oracle for converter parity.
    prompts = [
        list(train_bytes[o : o + 16])
        for o in (1000, 50_000, 200_000)
    ]
    cases = []
    with torch.no_grad():
        for tokens in prompts:
            logits = model(input_ids=torch.tensor([tokens])).logits[0]
            cases.append({"tokens": tokens, "logits": logits.numpy().tolist()})
    with open(os.path.join(args.out, "hf_logits.json"), "w") as f:
        json.dump({"prompts": cases}, f)
    print(f"wrote {args.out}/model.safetensors, config.json, hf_logits.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
