import numpy as np
import pytest

from bitturbo.codec import CodecModel, ModelGeometry
from bitturbo.ensemble import EnsembleModel
from bitturbo.quantize import QuantMode
from bitturbo.sweep import (
    CHUNK_BLOCKS,
    ModelEvaluator,
    evaluate_point,
    run_sweep,
    sweep_csv,
    worker_count,
)

GEOM = ModelGeometry(K=16, M=1, F=2, filters=4, kernel=3, enc_layers=1, dec_layers=2)


@pytest.fixture(scope="module")
def model():
    return CodecModel(GEOM, QuantMode("real"), seed=0)


def test_early_stop_after_enough_errors(model):
    # untrained model: ~50% BER, so the target is hit inside the first chunk
    ev = ModelEvaluator(model)
    res = evaluate_point(ev, 0.0, seed=0, point_idx=0, blocks=10_000, target_bit_errors=100)
    assert res.stats.blocks == CHUNK_BLOCKS
    assert res.stats.bit_errors >= 100


def test_no_early_stop_when_disabled(model):
    ev = ModelEvaluator(model)
    res = evaluate_point(ev, 0.0, seed=0, point_idx=0, blocks=300, target_bit_errors=0)
    assert res.stats.blocks == 300


def test_rows_ordered_and_deterministic_across_workers(model, monkeypatch):
    points = [-1.0, 0.0, 1.0, 2.0]
    monkeypatch.setenv("BITTURBO_THREADS", "1")
    serial = run_sweep(ModelEvaluator(model), points, 3, 100, 0)
    monkeypatch.setenv("BITTURBO_THREADS", "4")
    assert worker_count() == 4
    parallel = run_sweep(ModelEvaluator(model), points, 3, 100, 0)
    assert [r.snr_db for r in parallel] == points
    assert sweep_csv(serial) == sweep_csv(parallel)


def test_csv_format(model):
    res = run_sweep(ModelEvaluator(model), [0.0, 1.0], 0, 50, 0)
    lines = sweep_csv(res).strip().splitlines()
    assert lines[0] == "snr_db,ber,bler,bits,blocks"
    assert len(lines) == 3
    snr, ber, bler, bits, blocks = lines[1].split(",")
    assert snr == "0" and int(bits) == 50 * GEOM.K and int(blocks) == 50
    assert 0.0 <= float(ber) <= float(bler) <= 1.0


def test_evaluator_kinds_agree_for_degenerate_bag(model):
    z = np.random.default_rng(0).normal(size=(5, 3, GEOM.K))
    single = ModelEvaluator(model).decode_hard(z)
    bag = ModelEvaluator(EnsembleModel([model])).decode_hard(z)
    np.testing.assert_array_equal(single, bag)


def test_packed_evaluator(model):
    bin_model = CodecModel(GEOM, QuantMode("binary"), seed=1)
    packed = bin_model.freeze_for_edge()
    ev_f = ModelEvaluator(bin_model)
    ev_p = ModelEvaluator(bin_model, packed=packed)
    z = np.random.default_rng(1).normal(size=(6, 3, GEOM.K))
    np.testing.assert_array_equal(ev_p.decode_hard(z), ev_f.decode_hard(z))


def test_run_sweep_validates_blocks(model):
    with pytest.raises(ValueError):
        run_sweep(ModelEvaluator(model), [0.0], 0, 0, 0)
