"""
Tests for the BSS-Eval decomposition, metrics and permutation search
"""
import json

import numpy as np
import pandas as pd
import pytest
from scipy.linalg import toeplitz

from config.settings import BssEvalConfig
from core.dsp.signal_processing import AudioClip
from core.exceptions import LengthError, MetricError
from core.metrics.bss_eval import (REPORT_COLUMNS, bss_decompose, bss_eval, project, safe_db, score_estimate,
                                   write_report_csv, write_report_json)
from core.metrics.toeplitz_solver import solve_gram

CFG = BssEvalConfig(filter_len=32)
RATE = 8000


def _clip(samples):
    return AudioClip(samples=samples, sample_rate=RATE)


@pytest.fixture
def references(rng):
    return [_clip(rng.standard_normal(3000)) for _ in range(2)]


def test_safe_db_clamps():
    assert safe_db(1.0, 0.0, CFG) == CFG.clamp_db
    assert safe_db(0.0, 1.0, CFG) == -CFG.clamp_db
    assert safe_db(1.0, 1e-20, CFG) == CFG.clamp_db
    assert safe_db(100.0, 1.0, CFG) == pytest.approx(20.0)


def test_levinson_path_matches_dense_solve(rng):
    column = np.array([2.0, 0.5, 0.1, 0.0])
    gram = toeplitz(column)
    rhs = rng.standard_normal(4)
    solution, diagnostics = solve_gram(gram, rhs, toeplitz_column=column)
    assert diagnostics.method == "levinson"
    np.testing.assert_allclose(solution, np.linalg.solve(gram, rhs), atol=1e-12)


def test_singular_gram_falls_back_to_ridge(rng):
    v = rng.standard_normal(6)
    solution, diagnostics = solve_gram(np.outer(v, v), rng.standard_normal(6))
    assert diagnostics.regularized
    assert np.all(np.isfinite(solution))


def test_projection_of_a_basis_is_itself(references):
    projected = project(references[0], references, filter_len=16)
    assert len(projected) == 3000 + 16 - 1
    np.testing.assert_allclose(projected.samples[:3000], references[0].samples, atol=1e-8)
    np.testing.assert_allclose(projected.samples[3000:], 0.0, atol=1e-8)


def test_decomposition_sums_to_estimate(references, rng):
    estimate = _clip(references[0].samples + 0.3 * references[1].samples + 0.1 * rng.standard_normal(3000))
    parts = bss_decompose(references, estimate, 0, CFG)
    padded = np.concatenate([estimate.samples, np.zeros(CFG.filter_len - 1)])
    np.testing.assert_allclose(parts.target + parts.interference + parts.artifact, padded, atol=1e-9)


def _shifted(basis, shift, length):
    column = np.zeros(length)
    column[shift:shift + basis.size] = basis[:length - shift]
    return column


def test_projection_onto_orthogonal_complement_vanishes(rng):
    bases = [rng.standard_normal(500) for _ in range(2)]
    filter_len = 4
    span = np.stack([_shifted(b, j, 500) for b in bases for j in range(filter_len)], axis=1)
    raw = rng.standard_normal(500)
    orthogonal = raw - span @ np.linalg.lstsq(span, raw, rcond=None)[0]

    projected = project(_clip(orthogonal), [_clip(b) for b in bases], filter_len=filter_len)
    assert np.linalg.norm(projected.samples) / np.linalg.norm(orthogonal) < 1e-5


def test_single_tap_projection_is_scalar_least_squares(rng):
    basis, estimate = rng.standard_normal(400), rng.standard_normal(400)
    projected = project(_clip(estimate), [_clip(basis)], filter_len=1)
    expected = np.dot(estimate, basis) / np.dot(basis, basis) * basis
    np.testing.assert_allclose(projected.samples, expected, atol=1e-10)


def test_projection_residual_is_orthogonal_to_shifted_bases(references, rng):
    estimate = rng.standard_normal(3000)
    filter_len = 16
    projected = project(_clip(estimate), references, filter_len=filter_len)
    padded = np.concatenate([estimate, np.zeros(filter_len - 1)])
    residual = padded - projected.samples
    for ref in references:
        for shift in range(filter_len):
            column = _shifted(ref.samples, shift, padded.size)
            assert abs(np.dot(residual, column)) <= 1e-6 * np.linalg.norm(residual) * np.linalg.norm(column)


def test_metrics_ignore_estimate_gain(references, rng):
    estimates = [_clip(r.samples + 0.2 * rng.standard_normal(3000)) for r in references]
    halved = [_clip(0.5 * e.samples) for e in estimates]
    full = bss_eval(references, estimates, CFG)
    half = bss_eval(references, halved, CFG)
    np.testing.assert_allclose(half.sdr, full.sdr, atol=1e-6)
    np.testing.assert_allclose(half.sir, full.sir, atol=1e-6)
    np.testing.assert_allclose(half.sar, full.sar, atol=1e-6)


def test_equal_orthogonal_sources_give_zero_sir(rng):
    raw = rng.standard_normal((2, 2000))
    first = raw[0] / np.linalg.norm(raw[0])
    second = raw[1] - np.dot(raw[1], first) * first
    second /= np.linalg.norm(second)
    references = [_clip(first), _clip(second)]

    _, sir, _ = score_estimate(references, _clip(first + second), 0, BssEvalConfig(filter_len=1))
    assert sir == pytest.approx(0.0, abs=0.1)


def test_perfect_estimates_score_the_clamp(references):
    report = bss_eval(references, references, CFG)
    assert report.permutation == (0, 1)
    assert list(report.sdr) == [CFG.clamp_db, CFG.clamp_db]
    assert list(report.sir) == [CFG.clamp_db, CFG.clamp_db]


def test_permutation_recovers_swapped_estimates(references):
    report = bss_eval(references, list(reversed(references)), CFG)
    assert report.permutation == (1, 0)
    assert report.estimate_for_reference(0) == 1
    assert np.all(report.sir > 100)

    fixed = bss_eval(references, list(reversed(references)), CFG.model_copy(update={"compute_permutation": False}))
    assert fixed.permutation == (0, 1)
    assert np.all(fixed.sdr < -10)


def test_known_interference_level(references):
    s0, s1 = references[0].samples, references[1].samples
    estimate = _clip(s0 + 0.5 * s1)
    _, sir, _ = score_estimate(references, estimate, 0, CFG)
    expected = 10 * np.log10(np.dot(s0, s0) / (0.25 * np.dot(s1, s1)))
    assert sir == pytest.approx(expected, abs=0.3)


def test_sdr_decreases_with_added_noise(references):
    for trial in range(10):
        noise = np.random.default_rng(100 + trial).standard_normal(3000)
        sdrs = [score_estimate(references, _clip(references[0].samples + scale * noise), 0, CFG)[0]
                for scale in (0.01, 0.03, 0.1, 0.3)]
        assert all(a > b for a, b in zip(sdrs, sdrs[1:]))


def test_invalid_inputs_raise(references, rng):
    silent = [references[0], _clip(np.zeros(3000))]
    with pytest.raises(MetricError):
        bss_eval(silent, references, CFG)
    with pytest.raises(LengthError):
        bss_eval(references, [references[0]], CFG)
    with pytest.raises(LengthError):
        bss_eval(references, [_clip(rng.standard_normal(100)), references[1]], CFG)

    three = references + [_clip(rng.standard_normal(3000))]
    with pytest.raises(MetricError):
        bss_eval(three, three, CFG.model_copy(update={"max_sources": 2}))


def test_zero_gram_uses_ridge_term():
    solution, diagnostics = solve_gram(np.zeros((4, 4)), np.ones(4), ridge_scale=1e-10)
    assert diagnostics.method in ("ridge", "lstsq")
    assert diagnostics.ridge == pytest.approx(1e-10)
    assert np.all(np.isfinite(solution))


def test_duplicate_references_stay_finite(references):
    duplicated = [references[0], references[0]]
    report = bss_eval(duplicated, duplicated, CFG)
    assert np.all(np.isfinite(report.sdr))
    assert np.all(np.isfinite(report.sir))


def test_report_frame_and_threaded_scoring_agree(references, rng):
    estimates = [_clip(r.samples + 0.2 * rng.standard_normal(3000)) for r in references]
    serial = bss_eval(references, estimates, CFG, visibility=("visible", "invisible"))
    threaded = bss_eval(references, estimates, CFG.model_copy(update={"workers": 2}))
    np.testing.assert_allclose(serial.sdr, threaded.sdr)

    frame = serial.to_frame("mix-0")
    assert list(frame.columns) == REPORT_COLUMNS
    assert list(frame["visibility"]) == ["visible", "invisible"]


def test_report_files(references, tmp_path):
    report = bss_eval(references, references[::-1], CFG)
    csv_path = write_report_csv(report.to_frame("mix-1"), tmp_path / "report.csv")
    json_path = write_report_json(report, tmp_path / "report.json")

    frame = pd.read_csv(csv_path)
    assert list(frame.columns) == REPORT_COLUMNS
    assert list(frame["perm_index"]) == [1, 0]
    payload = json.loads(json_path.read_text(encoding="utf-8"))
    assert payload["permutation"] == [1, 0]
    assert len(payload["sdr"]) == 2


if __name__ == "__main__":
    pytest.main([__file__])
