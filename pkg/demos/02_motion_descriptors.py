"""
Histograms of oriented displacements
====================================

A trajectory's step from frame t-delta to t is split between the two
nearest of B direction bins, weighted by its length.  Straight and zig-zag
paths with the same net displacement end up with very different histograms.
"""

import numpy as np

from trokens.motion import HodConfig, displacement_only_descriptor, hod_descriptor, inter_descriptor

T = 9
t = np.arange(T)

# straight right, and a zig-zag that gets to the same place
straight = np.stack([0.1 + 0.05 * t, np.full(T, 0.5)], axis=-1)
zigzag = np.stack([0.1 + 0.05 * t, 0.5 + 0.05 * (t % 2)], axis=-1)
pts = np.stack([straight, zigzag])
print("net displacement:", (pts[:, -1] - pts[:, 0]).round(3).tolist())

cfg = HodConfig(bins=8, delta=1)
h = hod_descriptor(pts, cfg)
np.set_printoptions(precision=3, suppress=True)
print("HoD summed over time (8 bins, 0 deg = +x, counter-clockwise):")
print("  straight", h[0].sum(axis=0))
print("  zig-zag ", h[1].sum(axis=0))

# the raw (dx, dy) descriptor keeps the sign, so the zig-zag steps cancel when averaged
d = displacement_only_descriptor(pts, 1)
print("mean (dx, dy): straight", d[0, 1:].mean(axis=0), "zig-zag", d[1, 1:].mean(axis=0))

# bins add up to the step length, whatever the direction
steps = np.linalg.norm(np.diff(pts, axis=1), axis=-1)
print("bin mass equals step length:", np.allclose(h[:, 1:].sum(-1), steps))

# inter-trajectory descriptor: offsets to every other track, (M, T, 2M)
cross = inter_descriptor(pts)
print("inter shape", cross.shape)
print("offset straight->zigzag at t=1:", cross[0, 1, 2:4], " and back:", cross[1, 1, 0:2])
