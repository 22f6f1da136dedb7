"""
Few-shot training on appearance-neutral clips
=============================================

Train on 5 motion classes, test 3-way 1-shot on 3 classes never seen in
training.  Chance is 33%, but even the untrained net does better: a random
projection of the motion descriptors still keeps the classes apart, and
nearest-prototype matching picks that up.  A minute of training on one core
goes much further; the acceptance suite runs the long version.
"""

import tempfile
import time

from trokens import synthgen
from trokens.fewshot import TrainConfig, evaluate, train
from trokens.model import InputCache, ModelConfig, init_model
from trokens.net import NetConfig

EPISODES = 400

with tempfile.TemporaryDirectory() as d:
    m = synthgen.generate_dataset(20, synthgen.default_specs(), d, rng_seed=0)
    mcfg = ModelConfig(points=32, clusters=8, net=NetConfig(model_dim=32, heads=4, frames=8, n_classes=5))
    cache = InputCache(m, mcfg, seed=0)

    before = evaluate(m, init_model(mcfg, 0), mcfg, episodes=200, way=3, query=2, cache=cache)
    print(f"untrained: {100 * before.accuracy:.1f}% +/- {100 * before.ci95:.1f}")

    t0 = time.time()
    res = train(m, mcfg, TrainConfig(episodes=EPISODES, way=3, shot=1, query=2), cache=cache)
    for i in range(0, EPISODES, 100):
        chunk = res.log[i:i + 100]
        print(f"episodes {i + 1:>4}-{i + len(chunk):<4} loss {sum(r.total for r in chunk) / len(chunk):.3f} "
              f"episode acc {sum(r.episode_acc for r in chunk) / len(chunk):.2f}")
    print(f"trained in {time.time() - t0:.0f}s")

    after = evaluate(m, res.params, mcfg, episodes=300, way=3, query=2, cache=cache)
    print(f"trained:   {100 * after.accuracy:.1f}% +/- {100 * after.ci95:.1f} on unseen classes")
