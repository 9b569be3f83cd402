"""Two-view malware-detection workbench.

A self-contained laboratory for studying why fusing a raw-byte view with a
printable-string view hardens byte-level detectors against append-style
black-box attacks: a toy executable format with a seeded corpus generator,
four detector architectures over a small autodiff core, five fusion
mechanisms, a hard-label attack harness, and reproducible experiment
protocols behind an ``armd`` CLI.
"""

from .attack import AttackBudget, AttackOutcome, attack_corpus, attack_sample, evasion_rate
from .detectors import (DetectorConfig, DetectorModel, build, make_hard_label_oracle,
                        predict, train)
from .experiments import (MetricsReport, detection_metrics, load_checkpoint,
                          run_experiment1, run_experiment2, run_experiment3,
                          save_checkpoint, split_corpus)
from .fusion import FUSION_KINDS, attention_map, fuse, highway
from .tensor import Adam, Tensor, backward, no_grad
from .texe import (TexeFile, append_overlay, gen_corpus, inject_data_section,
                   load_manifest, parse_texe, write_texe)
from .views import SampleViews, ViewConfig, extract_views

__version__ = "0.1.0"

__all__ = [
    "Adam", "AttackBudget", "AttackOutcome", "DetectorConfig", "DetectorModel",
    "FUSION_KINDS", "MetricsReport", "SampleViews", "Tensor", "TexeFile",
    "ViewConfig", "append_overlay", "attack_corpus", "attack_sample",
    "attention_map", "backward", "build", "detection_metrics", "evasion_rate",
    "extract_views", "fuse", "gen_corpus", "highway", "inject_data_section",
    "load_checkpoint", "load_manifest", "make_hard_label_oracle", "no_grad",
    "parse_texe", "predict", "run_experiment1", "run_experiment2",
    "run_experiment3", "save_checkpoint", "split_corpus", "train", "write_texe",
]
