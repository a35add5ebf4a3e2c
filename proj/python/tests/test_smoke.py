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

import numpy as np
import pytest

import spnn


def small_config(mode="ss"):
    return {
        "mode": mode,
        "hidden": [8, 8],
        "activation": "sigmoid",
        "lr": 0.1,
        "batch_size": 64,
        "T": 2,
        "key_bits": 512,
        "data": {"synth": {"rows": 1500}},
        "seeds": [1],
    }


def test_fixed_point_round_trip():
    assert spnn.encode(1.5) == 3 << 15
    assert spnn.decode(spnn.encode(-2.25)) == -2.25


def test_split_graph_places_layers():
    plan = spnn.split_graph(32, 32, [256, 512, 256, 64])
    assert plan["first_width"] == 256
    assert plan["server_dims"] == [256, 512, 256, 64]
    assert plan["owners"]["head"] == "client_a"
    assert plan["classes"] == 2


@pytest.mark.parametrize("backend", ["ss", "he"])
def test_first_hidden_matches_numpy(backend):
    rng = np.random.default_rng(4)
    xa, xb = rng.normal(size=(10, 3)), rng.normal(size=(10, 4))
    ta, tb = rng.normal(size=(3, 5)), rng.normal(size=(4, 5))
    if backend == "ss":
        out = spnn.first_hidden_ss(xa, xb, ta, tb, seed=2)
    else:
        out = spnn.first_hidden_he(xa, xb, ta, tb, seed=2, key_bits=512)
    want = np.hstack([xa, xb]) @ np.vstack([ta, tb])
    assert out["pre"].shape == (10, 5)
    assert np.max(np.abs(out["pre"] - want)) <= 7 * 2.0**-15
    assert out["bytes"] > 0


def test_gen_synth_shape():
    x, y, cols = spnn.gen_synth(rows=300, features_a=5, features_b=4, seed=3)
    assert x.shape == (300, 9)
    assert set(y) <= {0, 1}
    assert cols[4] == "amount"


def test_experiment_report_and_hash():
    report = spnn.run_experiment(small_config())
    assert abs(report["summary"]["auc_gap"]) <= 0.02
    assert report["report_hash"] == spnn.report_hash(report)
    again = spnn.run_experiment(small_config())
    assert again["report_hash"] == report["report_hash"]


def test_scale_sweep_counts_triples():
    config = small_config()
    config["data"]["synth"]["rows"] = 4000  # 1280 and 2560 rows: whole batches
    report = spnn.scale_sweep(config, fractions=[0.4, 0.8])
    counts = report["modes"]["ss"]["counts"]
    assert counts[1]["triples_consumed"] == 2 * counts[0]["triples_consumed"]


def test_errors_carry_codes(tmp_path):
    with pytest.raises(spnn.SpnnError) as info:
        spnn.load_csv(str(tmp_path / "missing.csv"))
    assert info.value.code == "IoError"
    bad = tmp_path / "bad.csv"
    bad.write_text("x,label\n1,0\n2\n")
    with pytest.raises(spnn.SpnnError) as info:
        spnn.load_csv(str(bad))
    assert info.value.code == "ParseError"
    assert "row 3" in str(info.value)
