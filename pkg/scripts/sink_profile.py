"""Print per-layer sink statistics for a handful of baseline generations.

No run directory is written; useful for checking how concentrated a model
config's attention is before launching the intervention families.

    python3 scripts/sink_profile.py --prompts 4 --layers 8 --steps 20
"""
import argparse

import numpy as np

from sinklab.harness.prompts import synthetic_prompts
from sinklab.intervene import ProbeRecorder
from sinklab.toymodel import ModelConfig, build_model, forward_denoise


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--prompts", type=int, default=4)
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--init-seed", type=int, default=0)
    args = p.parse_args()
    cfg = ModelConfig(n_layers=args.layers, n_steps=args.steps, init_seed=args.init_seed)
    model = build_model(cfg)
    by_layer: dict[int, list[dict]] = {}
    for prompt in synthetic_prompts(args.prompts, 0, cfg.n_txt, cfg.vocab):
        rec = ProbeRecorder(cfg.n_img)
        forward_denoise(model, prompt, prompt.id, rec)
        for s in rec.site_summaries:
            by_layer.setdefault(s["layer"], []).append(s)
    print(f"uniform mass 1/N = {1 / cfg.seq_len:.4f}")
    print("layer  max_mass  entropy  top5   index0  text_top1")
    for layer, ss in sorted(by_layer.items()):
        top1 = [i for s in ss for i in s["top1"]]
        print(f"{layer:5d}  {np.mean([s['max_mass'] for s in ss]):.4f}    "
              f"{np.mean([s['entropy_mean'] for s in ss]):.3f}    {np.mean([s['top5'] for s in ss]):.3f}  "
              f"{np.mean([i == 0 for i in top1]):.3f}   {np.mean([i >= cfg.n_img for i in top1]):.3f}")


if __name__ == "__main__":
    main()
