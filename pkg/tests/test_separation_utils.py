"""
Tests for seeding, hashing and operation logging helpers
"""
import numpy as np
import pytest
import torch

from utils.separation_utils import (generate_content_hash, get_operation_log, log_operation, measure_performance,
                                    seed_everything)


def test_seed_everything_is_repeatable():
    first = seed_everything(5)
    a = (first.random(), np.random.rand(), torch.rand(1).item())
    second = seed_everything(5)
    b = (second.random(), np.random.rand(), torch.rand(1).item())
    assert a == b


def test_content_hash():
    assert generate_content_hash({"a": 1, "b": [1, 2]}) == generate_content_hash({"b": [1, 2], "a": 1})
    assert generate_content_hash({"a": 1}) != generate_content_hash({"a": 2})
    assert len(generate_content_hash(b"raw bytes")) == 16


def test_operation_log_keeps_recent_records():
    for i in range(60):
        log_operation("tick", {"i": i})
    records = get_operation_log()
    assert len(records) == 50
    assert records[-1]["details"] == {"i": 59}


def test_measure_performance_logs_success_and_failure():
    @measure_performance("double")
    def double(x):
        return 2 * x

    @measure_performance("broken")
    def broken():
        raise ValueError("boom")

    assert double(3) == 6
    assert get_operation_log()[-1]["operation"] == "performance_measurement_double"
    with pytest.raises(ValueError):
        broken()
    last = get_operation_log()[-1]
    assert last["level"] == "error"
    assert last["details"]["error"] == "boom"


if __name__ == "__main__":
    pytest.main([__file__])
