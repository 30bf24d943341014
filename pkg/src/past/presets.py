"""Named desk-scale recipes; ``configs/*.ini`` mirror these."""

from __future__ import annotations

from dataclasses import replace

from .config import DataConfig, DefenseConfig, ExperimentConfig
from .data import SyntheticSpec
from .nn import OptimConfig

DEFAULT = ExperimentConfig(defense=DefenseConfig("past", (1e-4,), (2.5,)))

# tight clusters: the only way to drive the train loss down is to memorize flipped labels
OVERFIT = ExperimentConfig(
    data=DataConfig(synthetic=SyntheticSpec(cluster_spread=0.05)),
    optim=OptimConfig(lr0=0.2),
    standard_epochs=150,
    # mu = 3 brings the lossgap baseline to about the same train/test gap as PAST here
    defense=DefenseConfig("past", (1e-2,), (2.5,), mu=3.0),
    out_dir="runs/overfit",
)

# overlapping clusters trained long: big loss gap, strong loss-attack signal
LEAKY = ExperimentConfig(
    data=DataConfig(synthetic=SyntheticSpec(cluster_spread=0.3)),
    optim=OptimConfig(lr0=0.1),
    standard_epochs=200,
    defense=DefenseConfig("past", (0.03,), (0.5, 1.5, 2.5)),
    out_dir="runs/leaky",
)

PRESETS = {"default": replace(DEFAULT, out_dir="runs/default"), "overfit": OVERFIT, "leaky": LEAKY}
