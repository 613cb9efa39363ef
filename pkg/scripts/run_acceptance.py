#!/usr/bin/env python3
"""
Multi-seed trend acceptance run
For every seed: generate a corpus, check its oracle separability, train the
joint / visual-only / semantic-only separators and the scene parser, then
evaluate the five conditions the trend checks compare.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, Any

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from analysis_frameworks.framework_engine import SeparationMethodEngine  # noqa: E402
from analysis_frameworks.scoring_engine import ExperimentReport, SeparationScoringEngine  # noqa: E402
from app import add_config_flags, config_manager_from_args  # noqa: E402
from config.settings import SeparationConfigManager  # noqa: E402
from core.data.synth_data import gen_corpus, oracle_separability  # noqa: E402
from core.exceptions import SeparationError  # noqa: E402
from core.messaging.report_generator import SeparationReportGenerator  # noqa: E402
from core.parser.scene_parser import ScenePredictor  # noqa: E402
from core.separator.separator_model import SeparatorModel  # noqa: E402
from core.training.trainer import train_parser, train_separator  # noqa: E402
from utils.separation_utils import seed_everything  # noqa: E402

logger = logging.getLogger(__name__)

# (condition name, training mode, split, feature mode)
CONDITIONS = [
    ("joint", "joint", "test", "clip"),
    ("visual-only", "visual-only", "test", "clip"),
    ("semantic-only", "semantic-only", "test", "clip"),
    ("train", "joint", "train", "clip"),
    ("prototype", "joint", "test", "prototype"),
]


def run_seed(seed: int, base: SeparationConfigManager, work_dir: Path) -> Dict[str, ExperimentReport]:
    """Reports of every condition for one (corpus seed, train seed) pair"""
    manager = SeparationConfigManager(overrides={**base.as_flat_dict(), "seed": seed, "corpus_seed": seed})
    seed_everything(seed)
    seed_dir = work_dir / f"seed{seed}"
    stft_config = manager.stft_config()
    train_config = manager.train_config()
    scoring = SeparationScoringEngine()

    corpus = gen_corpus(seed_dir / "corpus", manager.corpus_config(), check_separability=False)
    separability = oracle_separability(corpus, mixtures=10, m=train_config.sources, stft_config=stft_config,
                                       bss_config=manager.bss_config(), seed=seed)
    if separability < scoring.trend_thresholds["oracle_separability_db"]:
        logger.warning(f"⚠️ Seed {seed}: corpus is not separable enough ({separability:.2f} dB)")

    parser = train_parser(ScenePredictor(manager.parser_config(), seed=seed), corpus, stft_config,
                          train_config).model
    separators = {
        mode: train_separator(SeparatorModel(manager.separator_config(), seed=seed), corpus, stft_config,
                              train_config, manager.loss_config(), mode=mode).model
        for mode in ("joint", "visual-only", "semantic-only")
    }

    bundle = {}
    for name, mode, split, feature_mode in CONDITIONS:
        engine = SeparationMethodEngine(separators[mode], stft_config, manager.bss_config(),
                                        parser=parser if name == "joint" else None)
        rows, labels, truths = engine.evaluate(
            corpus, mixtures=manager.get_config("runtime")["eval_mixtures"], m=train_config.sources,
            n=train_config.visible, split=split, feature_mode=feature_mode, seed=seed,
        )
        report = scoring.build_report(rows, labels, truths, seed=seed, config=manager.as_flat_dict(),
                                      condition={"name": name, "mode": mode, "split": split,
                                                 "feature_mode": feature_mode,
                                                 "oracle_separability_db": round(separability, 4)})
        report.save(seed_dir, name)
        bundle[name] = report
    SeparationReportGenerator().generate_report(bundle["joint"], seed_dir / "report")
    return bundle


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Multi-seed trend acceptance run")
    parser.add_argument("--work-dir", type=Path, required=True)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    add_config_flags(parser)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        base = config_manager_from_args(args)
        runs = [run_seed(seed, base, args.work_dir) for seed in args.seeds]
    except SeparationError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code

    summary: Dict[str, Any] = SeparationScoringEngine().check_trends(runs)
    args.work_dir.mkdir(parents=True, exist_ok=True)
    (args.work_dir / "acceptance.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                                   encoding="utf-8")
    passed = all(entry["passed"] for entry in summary.values())
    print("✅ All trends hold" if passed else "❌ Some trends failed", json.dumps(summary, sort_keys=True))
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
