"""
Evaluation frameworks for the scene-aware separation system
"""

from .framework_engine import SeparationMethodEngine, baseline_subtract
from .scoring_engine import ExperimentReport, SeparationScoringEngine

__all__ = ['SeparationMethodEngine', 'SeparationScoringEngine', 'ExperimentReport', 'baseline_subtract']
