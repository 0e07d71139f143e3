import math

import numpy as np
import pytest

from jscclab.errors import ConfigurationError
from jscclab.experiments import (
    CSV_COLUMNS,
    PRESETS,
    ModelKey,
    SweepSpec,
    aggregate,
    parse_snr,
    parse_sweep_spec,
    plan_models,
    records_csv,
    summary_table,
)
from jscclab.signal_io import DatasetSpec
from jscclab.trends import check_trends


SPEC_TEXT = """
# comment line
snr_a = 0, 5      # trailing comment
snr_w = 10, inf
method = joint, separate
order = trans->enh
[run]
seeds = 1, 0
output = res
preset = desk
train_snr_w = 10
[data]
count = 12
duration_s = 0.09
[training]
joint_epochs = 3
"""


def test_parse_full_spec(tmp_path):
    spec = parse_sweep_spec(SPEC_TEXT, base_dir=tmp_path)
    assert spec.snr_a == (0.0, 5.0)
    assert spec.snr_w == (10.0, math.inf)
    assert spec.orders == ("transmit-enhance",)
    assert spec.seeds == (1, 0)
    assert spec.output == str(tmp_path / "res")
    assert spec.train_snr_w == 10.0
    assert spec.data == DatasetSpec(count=12, duration_s=0.09)
    assert dict(spec.overrides) == {"joint_epochs": 3}


@pytest.mark.parametrize("text, match", [
    ("snr_a = -6", "outside"),
    ("snr_w = 5", "not allowed"),
    ("ratio = 0.3", "0.25"),
    ("latency = 4", "3, 5, 9"),
    ("method = magic", "unknown method"),
    ("colour = blue", "unknown sweep spec key"),
    ("[data]\nflavour = 2", "unknown data field"),
    ("order = sideways", "order"),
    ("seeds = ", "at least one"),
])
def test_spec_errors(text, match):
    with pytest.raises(ConfigurationError, match=match):
        parse_sweep_spec(text)


def test_cells_canonical_regardless_of_listing():
    a = SweepSpec(methods=("joint", "separate"), snr_w=(math.inf, 0.0), ratios=(1.0, 0.25))
    b = SweepSpec(methods=("separate", "joint"), snr_w=(0.0, math.inf), ratios=(0.25, 1.0))
    assert a.cells() == b.cells()
    assert len(a.cells()) == 8


def test_parse_snr():
    assert parse_snr("inf") == math.inf and parse_snr("∞") == math.inf and parse_snr(" 10 ") == 10.0
    with pytest.raises(ConfigurationError):
        parse_snr("loud")


def test_model_key_normalizes_ignored_fields():
    a = ModelKey("separate-enhancer", 3, 0, ratio=0.25, snr_w_db=0.0, order="transmit-enhance")
    b = ModelKey("separate-enhancer", 3, 0)
    assert a == b and a.filename("t") == "separate-enhancer_3ms_s0_t.ckpt"
    j = ModelKey("joint", 9, 2, 0.25, math.inf, "transmit-enhance")
    assert j.filename("t") == "joint_9ms_R0.25_Winf_TE_s2_t.ckpt"
    assert [d.protocol for d in j.dependencies(PRESETS["desk"])] == ["separate-enhancer", "separate-transnet"]
    assert [d.protocol for d in j.dependencies(PRESETS["paper"])] == ["separate-enhancer"]


def test_plan_shares_models_between_methods():
    spec = SweepSpec(methods=("separate", "joint", "enhance-only", "transmit-only", "noisy-baseline"), seeds=(0, 1))
    stage1, stage2 = plan_models(spec)
    assert len(stage1) == 4 and len(stage2) == 2


def test_plan_trains_each_snr_w_when_matching():
    match = SweepSpec(snr_w=(0.0, 10.0), methods=("transmit-only",))
    fixed = SweepSpec(snr_w=(0.0, 10.0), methods=("transmit-only",), train_snr_w=10.0)
    assert len(plan_models(match)[0]) == 2
    assert len(plan_models(fixed)[0]) == 1


def test_cache_tag_tracks_preset_and_data():
    a = SweepSpec()
    assert a.cache_tag(0) != a.cache_tag(1)
    assert a.cache_tag(0) != SweepSpec(preset="paper").cache_tag(0)
    assert a.cache_tag(0) != SweepSpec(data=DatasetSpec(count=50)).cache_tag(0)


def _items(spec, value):
    rows = []
    for cell in spec.cells():
        for snr_a in spec.snr_a:
            for seed in spec.seeds:
                for i in range(3):
                    rows.append({**cell.coords(), "snr_a_db": snr_a, "seed": seed, "item": i,
                                 "si_sdr_db": value(cell, snr_a, seed, i), "estoi": 0.5})
    return rows


def test_aggregate_means_and_row_counts():
    spec = SweepSpec(snr_a=(0.0, 5.0), methods=("separate", "joint"), seeds=(0, 1))
    rng = np.random.default_rng(0)
    items = _items(spec, lambda *a: float(rng.normal()))
    recs = aggregate(spec, items)
    cells = [r for r in recs if r["row_type"] == "cell"]
    assert len(cells) == 4 * len(spec.seeds)
    for r in recs:
        sel = [it["si_sdr_db"] for it in items if it["method"] == r["method"]
               and (r["snr_a_db"] == "all" or it["snr_a_db"] == r["snr_a_db"])
               and (r["seed"] == "all" or it["seed"] == r["seed"])]
        assert r["n_items"] == len(sel)
        assert abs(r["si_sdr_mean"] - float(np.mean(sel))) < 1e-9
        assert r["pesq"] is None


def test_records_csv_layout():
    spec = SweepSpec(snr_a=(0.0,), methods=("joint",))
    text = records_csv(aggregate(spec, _items(spec, lambda *a: 1.5)))
    lines = text.splitlines()
    assert lines[0].startswith("# columns: " + ",".join(CSV_COLUMNS))
    assert lines[1] == ",".join(CSV_COLUMNS)
    assert lines[2].startswith("cell,joint,enhance-transmit,3,1.0,10.0,0.0,0,3,1.5,0.0,0.5,0.0,")
    assert lines[2].endswith(",")  # empty pesq column
    assert "SI-SDR (dB)" in summary_table(aggregate(spec, _items(spec, lambda *a: 1.5)))


def test_trend_checks_on_constructed_items():
    def score(method, w, ratio, latency):
        base = 8.0 if method == "joint" else 7.0
        return base + (0 if math.isinf(w) else w / 10 - 1) - (1.0 if ratio < 1 else 0) + (0.1 if latency == 9 else 0)

    items = []
    for seed in (0, 1):
        for method in ("joint", "separate"):
            for w, r, lat in [(0.0, 1.0, 3), (10.0, 1.0, 3), (math.inf, 1.0, 3), (10.0, 0.25, 3), (10.0, 1.0, 9)]:
                items.append({"method": method, "order": "enhance-transmit", "latency_ms": lat, "ratio": r,
                              "snr_w_db": w, "seed": seed, "si_sdr_db": score(method, w, r, lat)})
    checks = check_trends(items, (0, 1))
    assert [c.passed for c in checks] == [True, True, True, True]
    for it in items:
        if it["latency_ms"] == 9:
            it["si_sdr_db"] -= 1.0
    assert not check_trends(items, (0, 1))[3].passed
