"""
Normal-equation solvers for the BSS-Eval projections
Levinson recursion for the single-basis symmetric Toeplitz case, dense
Cholesky for block-Toeplitz Gram matrices, ridge fallback for singular systems
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

# Levinson results with a larger relative residual are re-solved densely
LEVINSON_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class SolveDiagnostics:
    """How a Gram system was solved"""

    method: str  # levinson | cholesky | ridge | lstsq
    ridge: float = 0.0

    @property
    def regularized(self) -> bool:
        return self.ridge > 0.0


def _relative_residual(gram: np.ndarray, solution: np.ndarray, rhs: np.ndarray) -> float:
    scale = np.linalg.norm(rhs)
    if scale == 0:
        return float(np.linalg.norm(gram @ solution))
    return float(np.linalg.norm(gram @ solution - rhs) / scale)


def levinson_solve(autocorrelation: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve T x = rhs for symmetric Toeplitz T with first column `autocorrelation`"""
    return linalg.solve_toeplitz(autocorrelation, rhs, check_finite=False)


def dense_solve(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve; raises LinAlgError/LinAlgWarning on (near-)singular systems"""
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        return linalg.solve(gram, rhs, assume_a="pos", check_finite=False)


def solve_gram(gram: np.ndarray, rhs: np.ndarray, ridge_scale: float = 1e-10,
               toeplitz_column: Optional[np.ndarray] = None) -> Tuple[np.ndarray, SolveDiagnostics]:
    """
    Least-squares coefficients for a Gram system.

    When `toeplitz_column` is given the matrix is symmetric Toeplitz and the
    Levinson recursion is tried first. Ill-conditioned systems fall through to
    a dense Cholesky solve, then to G + mu*I with mu = ridge_scale * trace(G)/dim.
    """
    if toeplitz_column is not None:
        try:
            solution = levinson_solve(toeplitz_column, rhs)
            if np.all(np.isfinite(solution)) and _relative_residual(gram, solution, rhs) <= LEVINSON_RESIDUAL_TOL:
                return solution, SolveDiagnostics("levinson")
        except (linalg.LinAlgError, ValueError):
            pass
        logger.debug("Levinson recursion ill-conditioned, using dense solve")

    try:
        return dense_solve(gram, rhs), SolveDiagnostics("cholesky")
    except (linalg.LinAlgError, linalg.LinAlgWarning):
        pass

    dim = gram.shape[0]
    trace = float(np.trace(gram))
    mu = ridge_scale * trace / dim if trace > 0 else ridge_scale
    regularized = gram + mu * np.eye(dim)
    logger.warning(f"⚠️ Singular Gram system ({dim}x{dim}), adding ridge term {mu:.3e}")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            return linalg.solve(regularized, rhs, assume_a="pos", check_finite=False), SolveDiagnostics("ridge", mu)
    except linalg.LinAlgError:
        solution = linalg.lstsq(regularized, rhs, check_finite=False)[0]
        return solution, SolveDiagnostics("lstsq", mu)
