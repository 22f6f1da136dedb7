"""
Where to put the points
=======================

A uniform grid of 16 points mostly lands on background.  Clustering the
patch features first and giving every cluster its share of the budget puts
points on a small object even when it covers under 4% of the frame.
"""

import numpy as np

from trokens import synthgen
from trokens.clustering import cluster_purity, cluster_tokens
from trokens.sampler import sample_semantic, sample_uniform_grid, track_points

spec = synthgen.SceneSpec(objects=[synthgen.SceneObject(
    1, 1, synthgen.MotionProgram(0, "translate_LR", noise_sigma=0.05))])
M, L = 16, 4


def on_object(seeds, masks):
    h = np.minimum((seeds.y * 16).astype(int), 15)
    w = np.minimum((seeds.x * 16).astype(int), 15)
    return int((masks[h, w, seeds.t0] > 0).sum())


hits = {"semantic": [], "grid": []}
for seed in range(20):
    fv, tracks, _, masks = synthgen.generate_video(spec, seed, return_masks=True)
    a = cluster_tokens(fv, L, seed)
    hits["semantic"].append(on_object(sample_semantic(a, M, seed), masks))
    hits["grid"].append(on_object(sample_uniform_grid(M), masks))

print(f"object covers {100 * 9 / 256:.1f}% of the patches")
for k, v in hits.items():
    print(f"{k:>8}: {np.mean(v):.2f} of {M} points on the object on average")

# the clusters themselves: purity against the object/background masks
fv, tracks, _, masks = synthgen.generate_video(spec, 3, return_masks=True)
a = cluster_tokens(fv, L, 3)
print("clusters", a.L_effective, "sizes", a.member_counts, "purity", round(cluster_purity(a, masks), 3))

# seeds become trajectories by snapping to the generator's tracks
seeds = sample_semantic(a, M, 3)
traj = track_points(seeds, tracks, "ground_truth")
moving = np.abs(np.diff(traj.points[..., 0], axis=1)).sum(axis=1) > 0
print(f"{moving.sum()} of {M} trajectories move")
