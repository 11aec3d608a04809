"""How the five mask-quality measures respond to typical mistakes.

Run from the repository root:  python3 demos/05_metric_gallery.py
"""
import numpy as np

from cbce.metrics import score_pair

rng = np.random.default_rng(0)
gt = np.zeros((32, 32))
gt[8:24, 10:26] = 1.0


def show(name, pred):
    s = score_pair(pred, gt)
    print(f"{name:26s} iou={s['iou']:.3f} fbeta={s['fbeta']:.3f} "
          f"ephi={s['ephi']:.3f} cc={s['cc']:+.3f} mae={s['mae']:.3f}")


print("ground truth: a 16x16 block on a 32x32 canvas\n")
show("exact match", gt.copy())

shifted = np.roll(gt, 3, axis=1)
show("shifted 3px", shifted)

dilated = gt.copy()
dilated[6:26, 8:28] = 1.0
show("over-segmented", dilated)

eroded = np.zeros_like(gt)
eroded[11:21, 13:23] = 1.0
show("under-segmented", eroded)

soft = np.clip(gt * 0.7 + 0.15 + rng.normal(0, 0.05, gt.shape), 0, 1)
show("soft / noisy probabilities", soft)

show("complement", 1.0 - gt)

uniform = np.full_like(gt, 0.3)
uniform[0, 0] = 0.3001  # CC needs a non-constant map
show("near-uniform low prob", uniform)

print("\nbinarized measures (iou, fbeta, ephi) use threshold 0.5;")
print("cc and mae consume the raw probability map.")
