"""The fixed-seed synthetic benchmark used by the acceptance suite and the CLI demo."""

from __future__ import annotations

from dataclasses import replace

from .dataset import Dataset, split_counts
from .signal_model import GeneratorConfig, generate_dataset

BENCHMARK_SEED = 2024
SPLIT_SEED = 0
N_TRAIN = 5000
N_TEST = 1000


def benchmark_split(n_train: int = N_TRAIN, n_test: int = N_TEST, seed: int = BENCHMARK_SEED,
                    config: GeneratorConfig | None = None) -> tuple[Dataset, Dataset]:
    """Generate ``n_train + n_test`` samples with the default generator and split them."""
    config = replace(config or GeneratorConfig(), n_samples=n_train + n_test, seed=seed)
    return split_counts(generate_dataset(config), n_train, seed=SPLIT_SEED)
