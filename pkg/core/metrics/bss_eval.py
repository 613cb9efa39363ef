"""
BSS-Eval source metrics
Decomposes an estimate into target, interference and artifact components by
least-squares projection onto L time-shifts of the references, and scores
SDR/SIR/SAR with the best-mean-SIR estimate-to-reference assignment
"""

import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Any, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import fft as sp_fft
from scipy.linalg import toeplitz
from scipy.signal import fftconvolve

from config.settings import BssEvalConfig
from core.dsp.signal_processing import AudioClip
from core.exceptions import LengthError, MetricError
from core.metrics.toeplitz_solver import SolveDiagnostics, solve_gram

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["mixture_id", "source_id", "visibility", "sdr_db", "sir_db", "sar_db", "perm_index"]


@dataclass(frozen=True)
class BssDecomposition:
    """estimate (zero-padded by L-1) = target + interference + artifact"""

    target: np.ndarray
    interference: np.ndarray
    artifact: np.ndarray
    diagnostics: Tuple[SolveDiagnostics, ...]

    @property
    def regularized(self) -> bool:
        return any(d.regularized for d in self.diagnostics)


@dataclass
class SeparationReport:
    """
    Per-reference metrics; permutation[i] is the reference assigned to estimate i.
    With a permutation search, metadata["pair_scores"][i, j] holds (SDR, SIR, SAR)
    of estimate i against reference j.
    """

    sdr: np.ndarray
    sir: np.ndarray
    sar: np.ndarray
    permutation: Tuple[int, ...]
    visibility: Tuple[str, ...] = ()
    regularized: bool = False
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def num_sources(self) -> int:
        return len(self.sdr)

    def estimate_for_reference(self, reference_index: int) -> int:
        return self.permutation.index(reference_index)

    def to_frame(self, mixture_id: str = "") -> pd.DataFrame:
        rows = []
        for j in range(self.num_sources):
            rows.append({
                "mixture_id": mixture_id,
                "source_id": j,
                "visibility": self.visibility[j] if self.visibility else "",
                "sdr_db": float(self.sdr[j]),
                "sir_db": float(self.sir[j]),
                "sar_db": float(self.sar[j]),
                "perm_index": self.estimate_for_reference(j),
            })
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sdr": [float(v) for v in self.sdr],
            "sir": [float(v) for v in self.sir],
            "sar": [float(v) for v in self.sar],
            "permutation": list(self.permutation),
            "visibility": list(self.visibility),
            "regularized": self.regularized,
        }


def write_report_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format="%.6f")
    return path


def write_report_json(report: SeparationReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    return path


def safe_db(num: float, den: float, cfg: BssEvalConfig) -> float:
    """10*log10(num/den), clamped to +/- clamp_db; vanishing denominators clamp high"""
    if den == 0.0 or den <= num * 10.0 ** (-cfg.degenerate_db / 10.0):
        return float(cfg.clamp_db)
    if num == 0.0:
        return float(-cfg.clamp_db)
    return float(np.clip(10.0 * np.log10(num / den), -cfg.clamp_db, cfg.clamp_db))


class _ReferenceGram:
    """FFTs and block-Toeplitz Gram matrix of the shifted references"""

    def __init__(self, references: np.ndarray, filter_len: int):
        self.references = references
        self.filter_len = filter_len
        n_src, n_samples = references.shape
        self.padded_len = n_samples + filter_len - 1
        self.n_fft = sp_fft.next_fast_len(self.padded_len, real=True)
        self.spectra = sp_fft.rfft(references, n=self.n_fft, axis=1)

        L = filter_len
        self.gram = np.zeros((n_src * L, n_src * L))
        self.diagonal_columns: List[np.ndarray] = []
        for i in range(n_src):
            for j in range(i, n_src):
                # xcorr[d] = sum_n s_i[n] s_j[n + d]
                xcorr = sp_fft.irfft(np.conj(self.spectra[i]) * self.spectra[j], n=self.n_fft)
                column = xcorr[:L]
                row = np.concatenate(([xcorr[0]], xcorr[:-L:-1]))
                block = toeplitz(column, row)
                self.gram[i * L:(i + 1) * L, j * L:(j + 1) * L] = block
                self.gram[j * L:(j + 1) * L, i * L:(i + 1) * L] = block.T
                if i == j:
                    self.diagonal_columns.append(column)

    def correlations(self, estimate: np.ndarray) -> np.ndarray:
        """D[(i, k)] = <s_i shifted by k, estimate>"""
        est_spec = sp_fft.rfft(estimate, n=self.n_fft)
        xcorr = sp_fft.irfft(np.conj(self.spectra) * est_spec, n=self.n_fft, axis=1)
        return xcorr[:, :self.filter_len].reshape(-1)

    def synthesize(self, coefficients: np.ndarray, indices: Sequence[int]) -> np.ndarray:
        L = self.filter_len
        out = np.zeros(self.padded_len)
        for slot, j in enumerate(indices):
            out += fftconvolve(coefficients[slot * L:(slot + 1) * L], self.references[j])
        return out

    def project(self, estimate: np.ndarray, indices: Sequence[int], ridge_scale: float,
                rhs: Optional[np.ndarray] = None) -> Tuple[np.ndarray, SolveDiagnostics]:
        L = self.filter_len
        rhs = self.correlations(estimate) if rhs is None else rhs
        rows = np.concatenate([np.arange(j * L, (j + 1) * L) for j in indices])
        gram = self.gram[np.ix_(rows, rows)]
        column = self.diagonal_columns[indices[0]] if len(indices) == 1 else None
        coefficients, diagnostics = solve_gram(gram, rhs[rows], ridge_scale, toeplitz_column=column)
        return self.synthesize(coefficients, indices), diagnostics


def _as_matrix(clips: Sequence[AudioClip], what: str) -> np.ndarray:
    if not clips:
        raise LengthError(f"no {what} given")
    length, rate = len(clips[0]), clips[0].sample_rate
    for clip in clips:
        if len(clip) != length or clip.sample_rate != rate:
            raise LengthError(f"{what} differ in length or sample rate")
    return np.stack([clip.samples for clip in clips])


def _check_references(references: np.ndarray) -> None:
    for j, ref in enumerate(references):
        if not np.any(ref):
            raise MetricError(f"reference source {j} is silent; metrics are undefined")


def _pad(estimate: np.ndarray, padded_len: int) -> np.ndarray:
    out = np.zeros(padded_len)
    out[:estimate.size] = estimate
    return out


def project(estimate: AudioClip, bases: Sequence[AudioClip], filter_len: int,
            ridge_scale: float = 1e-10) -> AudioClip:
    """
    Least-squares projection of `estimate` onto every shift 0..L-1 of every basis.

    The result lives on the padded support of N + L - 1 samples.
    """
    basis_matrix = _as_matrix(list(bases), "bases")
    if basis_matrix.shape[1] != len(estimate):
        raise LengthError("estimate and bases differ in length")
    _check_references(basis_matrix)
    grams = _ReferenceGram(basis_matrix, filter_len)
    projection, _ = grams.project(estimate.samples, list(range(len(bases))), ridge_scale)
    return AudioClip(samples=projection, sample_rate=estimate.sample_rate)


def _decompose(grams: _ReferenceGram, estimate: np.ndarray, target_index: int,
               cfg: BssEvalConfig, rhs: Optional[np.ndarray] = None,
               full: Optional[Tuple[np.ndarray, SolveDiagnostics]] = None) -> BssDecomposition:
    rhs = grams.correlations(estimate) if rhs is None else rhs
    target, target_diag = grams.project(estimate, [target_index], cfg.ridge_scale, rhs=rhs)
    if full is None:
        full = grams.project(estimate, list(range(grams.references.shape[0])), cfg.ridge_scale, rhs=rhs)
    projection, full_diag = full
    return BssDecomposition(
        target=target,
        interference=projection - target,
        artifact=_pad(estimate, grams.padded_len) - projection,
        diagnostics=(target_diag, full_diag),
    )


def _criteria(decomposition: BssDecomposition, cfg: BssEvalConfig) -> Tuple[float, float, float]:
    s_target = decomposition.target
    e_interf = decomposition.interference
    e_artif = decomposition.artifact
    target_energy = float(np.dot(s_target, s_target))
    sdr = safe_db(target_energy, float(np.sum((e_interf + e_artif) ** 2)), cfg)
    sir = safe_db(target_energy, float(np.dot(e_interf, e_interf)), cfg)
    sar = safe_db(float(np.sum((s_target + e_interf) ** 2)), float(np.dot(e_artif, e_artif)), cfg)
    return sdr, sir, sar


def bss_decompose(references: Sequence[AudioClip], estimate: AudioClip, target_index: int,
                  cfg: BssEvalConfig) -> BssDecomposition:
    """Target/interference/artifact split of one estimate against reference `target_index`"""
    ref_matrix = _as_matrix(list(references) + [estimate], "references and estimate")[:-1]
    _check_references(ref_matrix)
    if not 0 <= target_index < len(references):
        raise MetricError(f"target index {target_index} out of range")
    grams = _ReferenceGram(ref_matrix, cfg.filter_len)
    return _decompose(grams, estimate.samples, target_index, cfg)


def score_estimate(references: Sequence[AudioClip], estimate: AudioClip, target_index: int,
                   cfg: BssEvalConfig) -> Tuple[float, float, float]:
    """(SDR, SIR, SAR) of an estimate with a fixed reference assignment"""
    return _criteria(bss_decompose(references, estimate, target_index, cfg), cfg)


def bss_eval(references: Sequence[AudioClip], estimates: Sequence[AudioClip],
             cfg: BssEvalConfig, visibility: Sequence[str] = ()) -> SeparationReport:
    """
    BSS-Eval over m sources.

    Every (estimate, reference) pair is scored; the assignment maximising mean
    SIR over all m! permutations is kept. Degenerate ratios clamp to clamp_db.
    """
    if len(references) != len(estimates):
        raise LengthError(f"{len(references)} references but {len(estimates)} estimates")
    m = len(references)
    if cfg.compute_permutation and m > cfg.max_sources:
        raise MetricError(f"refusing factorial permutation search over {m} > {cfg.max_sources} sources")

    ref_matrix = _as_matrix(list(references), "references")
    est_matrix = _as_matrix(list(estimates), "estimates")
    if ref_matrix.shape != est_matrix.shape or references[0].sample_rate != estimates[0].sample_rate:
        raise LengthError("references and estimates differ in length or sample rate")
    _check_references(ref_matrix)

    grams = _ReferenceGram(ref_matrix, cfg.filter_len)
    all_sources = list(range(m))

    def score_estimate_row(i: int) -> Tuple[List[Tuple[float, float, float]], bool]:
        rhs = grams.correlations(est_matrix[i])
        full = grams.project(est_matrix[i], all_sources, cfg.ridge_scale, rhs=rhs)
        targets = all_sources if cfg.compute_permutation else [i]
        scores, regularized = [], False
        for j in targets:
            decomposition = _decompose(grams, est_matrix[i], j, cfg, rhs=rhs, full=full)
            scores.append(_criteria(decomposition, cfg))
            regularized = regularized or decomposition.regularized
        return scores, regularized

    if cfg.workers > 1 and m > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(score_estimate_row, range(m)))
    else:
        rows = [score_estimate_row(i) for i in range(m)]

    if cfg.compute_permutation:
        table = np.array([scores for scores, _ in rows])  # [estimate, reference, metric]
        best_perm, best_sir = tuple(range(m)), -np.inf
        for perm in itertools.permutations(range(m)):
            mean_sir = np.mean([table[i, perm[i], 1] for i in range(m)])
            if mean_sir > best_sir:
                best_perm, best_sir = perm, mean_sir
        per_reference = [None] * m
        for i, j in enumerate(best_perm):
            per_reference[j] = table[i, j]
    else:
        best_perm = tuple(range(m))
        per_reference = [np.array(scores[0]) for scores, _ in rows]

    metrics = np.array(per_reference)
    metadata = {"pair_scores": table} if cfg.compute_permutation else {}
    regularized = any(flag for _, flag in rows)
    if regularized:
        logger.warning("⚠️ BSS-Eval used a ridge-regularized solve for at least one projection")

    return SeparationReport(
        sdr=metrics[:, 0],
        sir=metrics[:, 1],
        sar=metrics[:, 2],
        permutation=tuple(int(j) for j in best_perm),
        visibility=tuple(visibility),
        regularized=regularized,
        metadata=metadata,
    )
