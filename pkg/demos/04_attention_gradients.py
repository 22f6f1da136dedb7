"""
Attention with hand-written gradients
=====================================

The network attends over time inside each trajectory and over trajectories
inside each frame, then a CLS query pools everything.  There is no autodiff:
the backward pass is written out, and here we check it against central
differences in float64.
"""

import numpy as np

from trokens import net

cfg = net.NetConfig(model_dim=8, heads=2, frames=3, n_classes=4)
params = net.init_params(cfg, 0, dtype=np.float64)
rng = np.random.default_rng(0)
x = rng.standard_normal((2, 5, 3, 8))  # 2 clips, 5 trajectories, 3 frames

out = net.forward(x, params, cfg)
print("final", out.final.shape, "cls", out.c_cls.shape, "logits", out.logits.shape)

# a scalar that touches every output: random weights on final and logits
wf = rng.standard_normal(out.final.shape)
wl = rng.standard_normal(out.logits.shape)


def f():
    o = net.forward(x, params, cfg)
    return (o.final * wf).sum() + (o.logits * wl).sum()


grads, dx = net.backward(out.trace, params, wf, wl)
h = 1e-5
for name in ("block0.sa.wq", "block0.ta.wv", "cls", "head.w", "pos"):
    p = params[name].reshape(-1)
    j = 0
    old = p[j]
    p[j] = old + h
    up = f()
    p[j] = old - h
    down = f()
    p[j] = old
    print(f"{name:>14}: analytic {grads[name].reshape(-1)[j]: .8f}  numeric {(up - down) / (2 * h): .8f}")

# shuffling the trajectories shuffles the outputs and leaves the logits alone
perm = rng.permutation(5)
shuffled = net.forward(x[:, perm], params, cfg)
print("logits unchanged under trajectory shuffle:", np.allclose(shuffled.logits, out.logits))
