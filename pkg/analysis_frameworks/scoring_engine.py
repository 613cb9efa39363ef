"""
Separation Scoring Engine
Aggregates per-source metric rows into experiment reports and checks the
visible/invisible comparison trends across seeds
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Any, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.metrics.bss_eval import write_report_csv
from core.parser.scene_parser import SceneLabels, exact_set_accuracy

logger = logging.getLogger(__name__)

AGGREGATE_COLUMNS = ["method", "visibility", "sdr", "sir", "n"]


@dataclass
class ExperimentReport:
    """Mean SDR/SIR per (method, visibility) with the rows they came from"""

    aggregates: pd.DataFrame
    rows: pd.DataFrame
    parser_accuracy: Optional[float] = None
    condition: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def lookup(self, method: str, visibility: str, metric: str = "sdr") -> Optional[float]:
        match = self.aggregates[(self.aggregates["method"] == method) & (self.aggregates["visibility"] == visibility)]
        if match.empty:
            return None
        return float(match.iloc[0][metric])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "aggregates": self.aggregates.to_dict(orient="records"),
            "parser_accuracy": self.parser_accuracy,
            "condition": self.condition,
            "config": self.config,
            "seed": self.seed,
        }

    def save(self, directory: Union[str, Path], name: str = "report") -> Dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        rows_path = directory / f"{name}_rows.csv"
        json_path = directory / f"{name}.json"
        write_report_csv(self.rows, rows_path)
        json_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str) + "\n",
                             encoding="utf-8")
        return {"rows": rows_path, "json": json_path}

    @classmethod
    def load(cls, directory: Union[str, Path], name: str = "report") -> "ExperimentReport":
        directory = Path(directory)
        payload = json.loads((directory / f"{name}.json").read_text(encoding="utf-8"))
        rows_path = directory / f"{name}_rows.csv"
        rows = pd.read_csv(rows_path) if rows_path.exists() else pd.DataFrame()
        return cls(
            aggregates=pd.DataFrame(payload["aggregates"], columns=AGGREGATE_COLUMNS),
            rows=rows,
            parser_accuracy=payload.get("parser_accuracy"),
            condition=payload.get("condition", {}),
            config=payload.get("config", {}),
            seed=payload.get("seed", 0),
        )


class SeparationScoringEngine:
    """Aggregation of metric rows and trend checks over repeated runs"""

    def __init__(self):
        self.aggregation_criteria = self._initialize_aggregation_criteria()
        self.trend_thresholds = self._initialize_trend_thresholds()

    def _initialize_aggregation_criteria(self) -> Dict[str, Any]:
        return {
            "group_by": ["method", "visibility"],
            "metrics": {"sdr": "sdr_db", "sir": "sir_db"},
            "method_order": ["avsa", "visual-only", "semantic-only", "subtract-baseline", "subtract-ablation"],
            "visibility_order": ["visible", "invisible"],
        }

    def _initialize_trend_thresholds(self) -> Dict[str, float]:
        return {
            "semantic_over_baseline_sir_db": 3.0,
            "baseline_invisible_sir_near_zero_db": 3.0,
            "joint_visible_slack_db": 0.5,
            "parser_accuracy": 0.9,
            "oracle_separability_db": 8.0,
            "required_seed_fraction": 0.8,
        }

    def aggregate(self, rows: pd.DataFrame) -> pd.DataFrame:
        """Mean of the per-source rows for every (method, visibility) present"""
        criteria = self.aggregation_criteria
        if rows.empty:
            return pd.DataFrame(columns=AGGREGATE_COLUMNS)

        grouped = rows.groupby(criteria["group_by"], sort=False)
        aggregates = grouped.agg(
            sdr=(criteria["metrics"]["sdr"], "mean"),
            sir=(criteria["metrics"]["sir"], "mean"),
            n=(criteria["metrics"]["sdr"], "size"),
        ).reset_index()

        method_rank = {m: i for i, m in enumerate(criteria["method_order"])}
        vis_rank = {v: i for i, v in enumerate(criteria["visibility_order"])}
        aggregates["_method_rank"] = aggregates["method"].map(lambda m: method_rank.get(m, len(method_rank)))
        aggregates["_vis_rank"] = aggregates["visibility"].map(lambda v: vis_rank.get(v, len(vis_rank)))
        aggregates = (aggregates.sort_values(["_method_rank", "method", "_vis_rank"], kind="mergesort")
                      .drop(columns=["_method_rank", "_vis_rank"]).reset_index(drop=True))
        aggregates["n"] = aggregates["n"].astype(int)
        return aggregates[AGGREGATE_COLUMNS]

    def build_report(self, rows: pd.DataFrame, labels: Sequence[SceneLabels] = (),
                     truths: Sequence[Tuple] = (), condition: Optional[Dict[str, Any]] = None,
                     config: Optional[Dict[str, Any]] = None, seed: int = 0) -> ExperimentReport:
        parser_accuracy = exact_set_accuracy(list(labels), list(truths)) if labels else None
        report = ExperimentReport(
            aggregates=self.aggregate(rows),
            rows=rows,
            parser_accuracy=parser_accuracy,
            condition=dict(condition or {}),
            config=dict(config or {}),
            seed=seed,
        )
        logger.info(f"✅ Report built from {len(rows)} rows"
                    + (f", parser exact-set accuracy {parser_accuracy:.3f}" if parser_accuracy is not None else ""))
        return report

    def _passes(self, outcomes: List[bool]) -> bool:
        if not outcomes:
            return False
        return sum(outcomes) >= int(np.ceil(self.trend_thresholds["required_seed_fraction"] * len(outcomes)))

    def check_trends(self, runs: Sequence[Dict[str, ExperimentReport]]) -> Dict[str, Dict[str, Any]]:
        """
        Trend checks over per-seed report bundles. Each bundle maps a condition name
        ("joint", "visual-only", "semantic-only", "train", "prototype") to a report.
        """
        t = self.trend_thresholds
        checks: Dict[str, List[bool]] = {"semantic_beats_baseline": [], "joint_training": [],
                                         "generalization_gap": [], "parser_accuracy": []}
        for bundle in runs:
            joint = bundle.get("joint")
            if joint is None:
                continue
            avsa_inv = joint.lookup("avsa", "invisible", "sir")
            base_inv = joint.lookup("subtract-baseline", "invisible", "sir")
            if avsa_inv is not None and base_inv is not None:
                checks["semantic_beats_baseline"].append(
                    avsa_inv - base_inv >= t["semantic_over_baseline_sir_db"]
                    and abs(base_inv) <= t["baseline_invisible_sir_near_zero_db"]
                )

            if "semantic-only" in bundle and "visual-only" in bundle:
                joint_inv = joint.lookup("avsa", "invisible")
                joint_vis = joint.lookup("avsa", "visible")
                sem_inv = bundle["semantic-only"].lookup("avsa", "invisible")
                vis_vis = bundle["visual-only"].lookup("avsa", "visible")
                if None not in (joint_inv, joint_vis, sem_inv, vis_vis):
                    checks["joint_training"].append(
                        joint_inv >= sem_inv and joint_vis >= vis_vis - t["joint_visible_slack_db"]
                    )

            if "train" in bundle and "prototype" in bundle:
                test_vis = joint.lookup("avsa", "visible")
                train_vis = bundle["train"].lookup("avsa", "visible")
                proto_vis = bundle["prototype"].lookup("avsa", "visible")
                if None not in (test_vis, train_vis, proto_vis):
                    checks["generalization_gap"].append(train_vis > test_vis and proto_vis > test_vis)

            if joint.parser_accuracy is not None:
                checks["parser_accuracy"].append(joint.parser_accuracy >= t["parser_accuracy"])

        summary = {}
        for name, outcomes in checks.items():
            summary[name] = {"passed": self._passes(outcomes), "seeds_passing": int(sum(outcomes)),
                             "seeds": len(outcomes)}
            status = "✅" if summary[name]["passed"] else "⚠️"
            logger.info(f"{status} Trend {name}: {sum(outcomes)}/{len(outcomes)} seeds")
        return summary
