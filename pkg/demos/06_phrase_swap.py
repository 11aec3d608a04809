"""Phrase conditioning on two-object scenes: swap the phrases, swap the mask.

Needs a trained checkpoint; run demos/04_train_and_evaluate.py --full first
(or point --ckpt at any checkpoint).

Run from the repository root:  python3 demos/06_phrase_swap.py [--ckpt PATH]
"""
import os
import sys

from cbce.checkpoint import load_checkpoint
from cbce.datakit import generate_pair_fixtures, load_manifest
from cbce.metrics import iou
from cbce.train import load_config, model_from_checkpoint

ckpt_path = "demo_out/train/run/model.cbce"
if "--ckpt" in sys.argv:
    ckpt_path = sys.argv[sys.argv.index("--ckpt") + 1]
if not os.path.exists(ckpt_path):
    sys.exit(f"no checkpoint at {ckpt_path}; run demos/04_train_and_evaluate.py --full first")

cfg = load_config(os.path.join(os.path.dirname(__file__), "..", "configs", "toy.json"))
pairs_dir = "demo_out/pairs"
if not os.path.exists(os.path.join(pairs_dir, "pairs.jsonl")):
    generate_pair_fixtures(cfg.synth, pairs_dir, count=8)
records = load_manifest(os.path.join(pairs_dir, "pairs.jsonl"))

model, vocab = model_from_checkpoint(load_checkpoint(ckpt_path))

by_image = {}
for rec in records:
    by_image.setdefault(rec.image_path, []).append(rec)

for image_path, (a, b) in list(by_image.items())[:3]:
    image = a.load_image()
    prob_a = model.forward(image, vocab.encode_phrases(a.phrases)).prob_map
    prob_b = model.forward(image, vocab.encode_phrases(b.phrases)).prob_map
    mask_a, mask_b = prob_a >= 0.5, prob_b >= 0.5
    print(f"\n=== {os.path.basename(image_path)}: '{a.affordance}' vs '{b.affordance}' ===")
    print(f"  phrases A: {a.phrases}")
    print(f"  phrases B: {b.phrases}")
    print(f"  IoU(pred_A, gt_A) = {iou(prob_a, a.load_mask()):.2f}   "
          f"IoU(pred_B, gt_B) = {iou(prob_b, b.load_mask()):.2f}   "
          f"mutual IoU = {iou(prob_a, mask_b.astype(float)):.2f}")
    print("  A = phrases-A mask, B = phrases-B mask, * = both:")
    for r in range(0, image.shape[0], 4):
        row = "".join(
            "*" if mask_a[r, c] and mask_b[r, c] else
            "A" if mask_a[r, c] else
            "B" if mask_b[r, c] else "."
            for c in range(0, image.shape[1], 2)
        )
        print("   ", row)
