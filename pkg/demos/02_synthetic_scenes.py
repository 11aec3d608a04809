"""Peek at the synthetic affordance scenes and their phrase annotations.

Run from the repository root:  python3 demos/02_synthetic_scenes.py
Writes a small dataset under ./demo_out/scenes.
"""
import numpy as np

from cbce.datakit import DEFAULT_BANK, SynthConfig, generate_record, synth_generate

cfg = SynthConfig(size=80, samples=6, seed=42)

print("affordance classes and a few of their phrases:")
for aff in DEFAULT_BANK.affordances():
    sample = DEFAULT_BANK.phrases(aff)[:3]
    print(f"  {aff:8s} {sample}")

print("\nfour generated scenes (#(hash) = target mask, + = distractor pixels):")
for idx in range(4):
    image, mask, affordance, phrases = generate_record(cfg, idx)
    bright = image.astype(np.float64).mean(axis=2) > 70  # any painted object
    print(f"\nscene {idx}: target '{affordance}', phrases {phrases}")
    for r in range(0, 80, 4):
        row = "".join(
            "#" if mask[r, c] else "+" if bright[r, c] else "."
            for c in range(0, 80, 2)
        )
        print(" ", row)

out = "demo_out/scenes"
records = synth_generate(cfg, out)
print(f"\nwrote {len(records)} PPM/PGM samples plus manifests and vocab under {out}/")
print("manifest line 0:")
with open(f"{out}/manifest.jsonl", encoding="utf-8") as fh:
    print(" ", fh.readline().strip())
