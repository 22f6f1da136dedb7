"""Few-shot action recognition from semantic-aware point trajectories.

Pure numpy: synthetic scenes, token clustering, seed sampling, motion
descriptors, a decoupled space-time attention network with hand-written
gradients, and episodic training/evaluation.
"""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    DatasetManifest,
    FeatureVolume,
    TrajectorySet,
    VideoRecord,
    load_manifest,
    read_tensor,
    read_trajectories,
    save_manifest,
    write_tensor,
    write_trajectories,
)
from .errors import *  # noqa: E402,F401,F403
