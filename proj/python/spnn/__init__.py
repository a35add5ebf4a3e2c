# Copyright 2026 The SPNN Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Split neural network training over vertically partitioned data."""

import json

from . import _spnn
from ._spnn import (
    SpnnError,
    decode,
    encode,
    first_hidden_he,
    first_hidden_ss,
    gen_synth,
    load_csv,
)

__all__ = [
    "SpnnError",
    "bandwidth_sweep",
    "decode",
    "encode",
    "first_hidden_he",
    "first_hidden_ss",
    "gen_synth",
    "load_csv",
    "report_hash",
    "run_attack",
    "run_experiment",
    "scale_sweep",
    "split_graph",
]


def _text(config):
    return config if isinstance(config, str) else json.dumps(config)


def run_experiment(config):
    """Train with every configured seed; returns the report as a dict."""
    return json.loads(_spnn.run_experiment(_text(config)))


def bandwidth_sweep(config, bandwidths):
    return json.loads(_spnn.bandwidth_sweep(_text(config), list(bandwidths)))


def scale_sweep(config, fractions=(0.2, 0.4, 0.6, 0.8, 1.0), modes=("ss",)):
    return json.loads(_spnn.scale_sweep(_text(config), list(fractions), list(modes)))


def run_attack(config, property="amount"):
    return json.loads(_spnn.run_attack(_text(config), property))


def report_hash(report):
    return _spnn.report_hash(_text(report))


def split_graph(input_a, input_b, hidden, activation="sigmoid", classes=2):
    return json.loads(_spnn.split_graph(input_a, input_b, list(hidden), activation, classes))
