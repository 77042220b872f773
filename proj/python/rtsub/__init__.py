"""Rank-transformed subsampling for randomised tests."""

from ._rtsub import (
    ConfigError,
    aggregate_test,
    dip_statistic,
    dml_rank_ci,
    gen_plm_data,
    gen_trial_data,
    mean_test,
    merge,
    rank_transform,
    run_experiment,
    std_normal_cdf,
    std_normal_quantile,
    unimodality_test,
    verma_test,
)

__all__ = [
    "ConfigError",
    "aggregate_test",
    "dip_statistic",
    "dml_rank_ci",
    "gen_plm_data",
    "gen_trial_data",
    "mean_test",
    "merge",
    "rank_transform",
    "run_experiment",
    "std_normal_cdf",
    "std_normal_quantile",
    "unimodality_test",
    "verma_test",
]
