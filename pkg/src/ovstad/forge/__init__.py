"""Dataset forging: annotation conversion, statistics, splits, synthetic data."""

from .splits import BenchmarkSplit, ClassInfo, SplitError, build_split
from .synthetic import (
    ActionClass,
    SyntheticConfig,
    SyntheticDataset,
    default_classes,
    gen_synthetic,
    load_synthetic,
    save_synthetic,
)
from .text import SentenceError, is_human_declarative, split_sentences
from .tubes import (
    DatasetStats,
    RegionTextPair,
    Tube,
    TubeError,
    convert_hcstvg,
    convert_vidstg,
    dataset_stats,
    segment_tube,
)

__all__ = [
    "ActionClass", "BenchmarkSplit", "ClassInfo", "DatasetStats", "RegionTextPair", "SplitError",
    "SyntheticConfig", "SyntheticDataset", "Tube", "TubeError", "build_split", "convert_hcstvg",
    "convert_vidstg", "dataset_stats", "default_classes", "gen_synthetic", "is_human_declarative",
    "segment_tube", "split_sentences", "SentenceError", "load_synthetic", "save_synthetic",
]
