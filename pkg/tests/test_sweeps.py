import csv

import numpy as np
import pytest

from segslab.distill import DistillConfig
from segslab.errors import InvalidInputError
from segslab.sweeps import (constructed_reference_set, lambda_sweep, topk_sweep,
                            write_table_csv)


def test_constructed_set_layout(prior):
    aux, scores = constructed_reference_set(prior, 8)
    back, front = prior.means[2], prior.means[0]
    np.testing.assert_allclose(aux[:3].mean(0), back)
    np.testing.assert_allclose(aux[2], back)
    np.testing.assert_allclose(aux[3:], np.tile(front, (5, 1)))
    assert np.all(np.diff(scores) < 0)
    side_dir = prior.means[1] - back
    u = aux[0] - back
    assert u[0] * side_dir[1] - u[1] * side_dir[0] == pytest.approx(0.0, abs=1e-12)
    assert np.linalg.norm(aux[0] - back) == pytest.approx(5.0)
    with pytest.raises(InvalidInputError):
        constructed_reference_set(prior, 3)
    with pytest.raises(InvalidInputError):
        constructed_reference_set(prior, 8, straddle="top")


CFG = DistillConfig(iterations=150)


def test_lambda_sweep_rows(prior, short_schedule, fx, short_bank):
    rows = lambda_sweep([0, 2], CFG, prior, short_schedule, fx, short_bank, seeds=[0, 1])
    assert [r["lambda"] for r in rows] == [0.0, 2.0]
    assert rows[0]["quality"] == rows[0]["baseline_quality"]
    assert rows[0]["collapse"] is False
    with pytest.raises(InvalidInputError):
        lambda_sweep([-1], CFG, prior, short_schedule, fx, short_bank, seeds=[0])


def test_lambda_sweep_parallel_matches_serial(prior, short_schedule, fx, short_bank):
    a = lambda_sweep([3], CFG, prior, short_schedule, fx, short_bank, seeds=[0, 1])
    b = lambda_sweep([3], CFG, prior, short_schedule, fx, short_bank, seeds=[0, 1], workers=2)
    assert a == b


def test_topk_rows(prior, short_schedule, fx, tmp_path):
    aux, scores = constructed_reference_set(prior, 4)
    rows = topk_sweep([1, 4], CFG, prior, short_schedule, fx, seeds=[0], aux=aux,
                      scores=scores, stride=5)
    assert [r["k"] for r in rows] == [1, 4]
    assert {"view_cs_back", "jr_analog"} <= set(rows[0])
    with pytest.raises(InvalidInputError):
        topk_sweep([5], CFG, prior, short_schedule, fx, seeds=[0], aux=aux, scores=scores)
    write_table_csv(tmp_path / "t.csv", rows)
    with open(tmp_path / "t.csv") as fh:
        got = list(csv.DictReader(fh))
    assert [int(r["k"]) for r in got] == [1, 4]
    with pytest.raises(InvalidInputError):
        write_table_csv(tmp_path / "e.csv", [])
