"""
Synthetic motion scenes
=======================

Every clip is a 16 x 16 patch grid over 8 frames.  Objects are blobs of
patches that follow a motion program; in ``neutral`` mode all objects share
one appearance, so the class lives only in how things move.
"""

import tempfile

import numpy as np

from trokens import synthgen
from trokens.data import load_manifest

# one clip of the "circular_CW" class, with its object masks
spec = synthgen.class_spec(4, "circular_CW", mode="neutral")
fv, tracks, meta, masks = synthgen.generate_video(spec, rng_seed=0, return_masks=True)
print("features", fv.features.shape, fv.features.dtype)
print("ground-truth tracks", tracks.points.shape, "frame dims", tracks.frame_dims)

# a quick look at where the objects are in the first and last frame
for t in (0, fv.shape[2] - 1):
    print(f"frame {t}")
    for row in masks[:, :, t]:
        print("  " + "".join("#" if v else "." for v in row))

# in neutral mode an object patch looks the same whatever the class
other = synthgen.class_spec(0, "translate_LR", mode="neutral")
fv2, _, _, masks2 = synthgen.generate_video(other, rng_seed=0, return_masks=True)
a = fv.features[masks[..., 0] > 0][:, 0]
b = fv2.features[masks2[..., 0] > 0][:, 0]
print("mean object feature, two classes:", a.mean(axis=0)[:4].round(3), b.mean(axis=0)[:4].round(3))

# a full dataset: 8 classes, 5 for training and 3 held out
with tempfile.TemporaryDirectory() as d:
    m = synthgen.generate_dataset(4, synthgen.default_specs(), d, rng_seed=0)
    m = load_manifest(f"{d}/manifest.json")
    print(len(m.videos), "videos;", "train classes", m.split["train"], "test classes", m.split["test"])
    print("class names", m.class_names)
