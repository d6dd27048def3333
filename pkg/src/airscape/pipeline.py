"""End-to-end orchestration shared by the command line and the test suite.

One region flows through: outlier cleaning, an 80/20 station split,
leave-own-station-out row construction over every loaded hour, imputation
statistics frozen from the training split, and balanced with-replacement
sampling per exposure category. The sampled tables feed training and
evaluation directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import (
    AqiBreakpoints,
    DatasetSplit,
    RowTable,
    build_rows,
    impute_rows,
    split_stations,
    stratified_sample,
)
from .evaluation import EvalReport, evaluate
from .features import FeatureComputer, FeatureConfig, feature_means
from .ingest import World, apply_hampel
from .model import MLPModel, TrainConfig, train, transfer_fit


@dataclass(frozen=True)
class SamplingConfig:
    train_per_category: int = 5000
    eval_per_category: int = 1000
    seed: int = 0


@dataclass
class RegionDataset:
    """Everything needed to train and score one region."""

    world: World                      # outlier-cleaned
    split: DatasetSplit
    feature_config: FeatureConfig
    breakpoints: AqiBreakpoints
    computer: FeatureComputer         # carries the training imputation means
    impute_means: np.ndarray
    train_raw: RowTable               # imputed, unsampled
    eval_raw: RowTable
    train: RowTable                   # stratified samples
    eval: RowTable


def build_region_dataset(
    world: World,
    feature_config: Optional[FeatureConfig] = None,
    breakpoints: Optional[AqiBreakpoints] = None,
    split_seed: int = 0,
    sampling: SamplingConfig = SamplingConfig(),
    hampel_window: Optional[int] = 48,
    hampel_k: float = 6.0,
    hours: Optional[Sequence[int]] = None,
) -> RegionDataset:
    cfg = feature_config or FeatureConfig(preset=world.region.preset)
    bp = breakpoints or AqiBreakpoints.default()
    cleaned = apply_hampel(world, hampel_window, hampel_k) if hampel_window else world
    split = split_stations(cleaned.stations, split_seed)
    hour_list = [int(h) for h in (hours if hours is not None else cleaned.hours)]

    computer = FeatureComputer(cleaned, cfg)
    train_rows = build_rows(cleaned, list(split.train_ids), hour_list, cfg,
                            breakpoints=bp, computer=computer)
    eval_rows = build_rows(cleaned, list(split.eval_ids), hour_list, cfg,
                           breakpoints=bp, computer=computer)
    means = feature_means(train_rows.features)
    train_rows = impute_rows(train_rows, means)
    eval_rows = impute_rows(eval_rows, means)

    computer = FeatureComputer(cleaned, cfg, impute_means=means)
    return RegionDataset(
        world=cleaned,
        split=split,
        feature_config=cfg,
        breakpoints=bp,
        computer=computer,
        impute_means=means,
        train_raw=train_rows,
        eval_raw=eval_rows,
        train=stratified_sample(train_rows, sampling.train_per_category,
                                sampling.seed),
        eval=stratified_sample(eval_rows, sampling.eval_per_category,
                               sampling.seed + 1),
    )


def train_region(ds: RegionDataset, config: TrainConfig):
    """Train a fresh model on the region's sampled training table."""
    return train(ds.train.features, ds.train.targets, ds.train.feature_names,
                 config, preset=ds.feature_config.preset,
                 impute_means=ds.impute_means)


def transfer_region(global_model: MLPModel, ds: RegionDataset,
                    config: TrainConfig):
    """Specialise a global model's output head to this region."""
    return transfer_fit(global_model, ds.train.features, ds.train.targets,
                        config, impute_means=ds.impute_means)


def evaluate_region(model, ds: RegionDataset, fingerprint: str = "") -> EvalReport:
    return evaluate(model, ds.world, ds.split.train_ids, ds.eval,
                    fingerprint=fingerprint)


def pooled_training_table(datasets: Sequence[RegionDataset],
                          n_per_category: int, seed: int) -> RowTable:
    """Concatenate regional training rows and re-sample per category.

    This is how the multi-region dataset behind a global model is built;
    every region keeps its own imputation statistics.
    """
    pooled = RowTable.concat([ds.train_raw for ds in datasets])
    return stratified_sample(pooled, n_per_category, seed)


def should_transfer(ds: RegionDataset, threshold_rows: int) -> bool:
    """Data-sparse regions (too few raw training rows) get transfer fitting."""
    return len(ds.train_raw) < threshold_rows
