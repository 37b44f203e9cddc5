# Copyright 2026 The elflow Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Embedded language flows on synthetic corpora (C++ core)."""

from ._elflow import (
    Checkpoint,
    CheckpointError,
    ConfigError,
    MarkovSource,
    Model,
    NumericError,
    RunConfig,
    StepRecord,
    Trainer,
    cfg_target,
    distinct_fraction,
    generate,
    interpolate,
    oracle_perplexity,
    sample_time,
    spearman,
    time_grid,
    train_cached,
    unigram_entropy,
    v_to_x,
    x_to_v,
)


def config(**overrides):
    """Default RunConfig with dotted keys given as double underscores.

    >>> config(train__steps=10).get("train.steps")
    '10'
    """
    cfg = RunConfig()
    for key, value in overrides.items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        cfg.set(key.replace("__", "."), str(value))
    cfg.validate()
    return cfg


__all__ = [name for name in dir() if not name.startswith("_")]
