"""
Scene-Aware Audio Separation - command line harness
Subcommands: gen-data, train-sep, train-parser, infer, eval, report
"""

import argparse
import json
import logging
import sys
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Any, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from analysis_frameworks.framework_engine import FEATURE_MODES, SeparationMethodEngine
from analysis_frameworks.scoring_engine import ExperimentReport, SeparationScoringEngine
from config.instrument_classes import CLASS_NAMES
from config.settings import FLAT_KEYS, SeparationConfigManager
from core.data.synth_data import Corpus, draw_mixture, gen_corpus, load_corpus
from core.dsp.signal_processing import ideal_binary_masks, log_magnitude, stft
from core.dsp.wav_io import read_wav, write_wav
from core.exceptions import ConfigError, DataError, SeparationError
from core.messaging.report_generator import SeparationReportGenerator
from core.parser.scene_parser import ScenePredictor, class_names_for
from core.separator.checkpoint import (PARSER_PREFIX, SEPARATOR_PREFIX, load_checkpoint, load_parser,
                                       load_separator, save_checkpoint)
from core.separator.separator_model import SeparatorModel
from core.training.trainer import train_parser, train_separator
from utils.separation_utils import seed_everything

logger = logging.getLogger(__name__)

CONFIG_COPY = "config.env"
RUN_METADATA = "run.json"
SEPARATOR_CHECKPOINT = "separator.avsa"
PARSER_CHECKPOINT = "parser.avsa"
FLAG_ALIASES = {"eval_mixtures": ["--mixtures"]}


def add_config_flags(parser: argparse.ArgumentParser):
    """--config FILE plus one flag per flat config key; unset flags keep file/default values"""
    parser.add_argument("--config", type=Path, default=None, help="key=value config file")
    group = parser.add_argument_group("config overrides")
    for key, (section, field, caster) in FLAT_KEYS.items():
        flags = [f"--{key.replace('_', '-')}"] + FLAG_ALIASES.get(key, [])
        group.add_argument(*flags, dest=key, type=caster, default=None, help=f"{section}.{field}")


def config_manager_from_args(args: argparse.Namespace) -> SeparationConfigManager:
    overrides = {key: getattr(args, key) for key in FLAT_KEYS if getattr(args, key, None) is not None}
    return SeparationConfigManager(config_file=args.config, overrides=overrides)


def _prepare_run_dir(run_dir: Path, manager: SeparationConfigManager, metadata: Dict[str, Any]) -> Path:
    run_dir.mkdir(parents=True, exist_ok=True)
    manager.write_flat_file(run_dir / CONFIG_COPY)
    metadata_path = run_dir / RUN_METADATA
    existing = json.loads(metadata_path.read_text(encoding="utf-8")) if metadata_path.exists() else {}
    existing.update(metadata)
    metadata_path.write_text(json.dumps(existing, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return run_dir


def _check_corpus(corpus: Corpus, manager: SeparationConfigManager):
    """The corpus must have been generated with the sizes the models are built for"""
    stft_config = manager.stft_config()
    separator_config = manager.separator_config()
    mismatches = []
    if corpus.sample_rate != stft_config.sample_rate:
        mismatches.append(f"sample_rate {corpus.sample_rate} != {stft_config.sample_rate}")
    if corpus.k_r != separator_config.k_r:
        mismatches.append(f"k_r {corpus.k_r} != {separator_config.k_r}")
    if corpus.num_classes != separator_config.num_classes:
        mismatches.append(f"num_classes {corpus.num_classes} != {separator_config.num_classes}")
    if mismatches:
        raise ConfigError("corpus does not match the configuration: " + "; ".join(mismatches))


def _load_models(paths: Sequence[Path], threshold: float) -> Tuple[SeparatorModel, Optional[ScenePredictor]]:
    """Merge the entries of one or more checkpoint files; the parser is optional"""
    entries: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for path in paths:
        entries.update(load_checkpoint(path))
    separator = load_separator(paths[0], entries=entries)
    parser = None
    if any(name.startswith(PARSER_PREFIX) for name in entries):
        parser = load_parser(paths[0], threshold=threshold, entries=entries)
    logger.info(f"✅ Loaded separator (k_r={separator.k_r})" + (" and scene parser" if parser else ""))
    return separator, parser


def cmd_gen_data(args: argparse.Namespace, manager: SeparationConfigManager) -> int:
    cfg = manager.corpus_config()
    if args.encoding:
        cfg = cfg.model_copy(update={"encoding": args.encoding})
    corpus = gen_corpus(args.out, cfg, workers=args.workers, check_separability=not args.skip_separability_check,
                        stft_config=manager.stft_config())
    _prepare_run_dir(args.out, manager, {"command": "gen-data", "dataset_hash": corpus.dataset_hash,
                                         "corpus_seed": cfg.seed})
    logger.info(f"✅ Corpus ready: {len(corpus.records)} clips, hash {corpus.dataset_hash[:12]}")
    return 0


def cmd_train_sep(args: argparse.Namespace, manager: SeparationConfigManager) -> int:
    train_config = manager.train_config()
    seed_everything(train_config.seed)
    corpus = load_corpus(args.corpus)
    _check_corpus(corpus, manager)

    model = SeparatorModel(manager.separator_config(), seed=train_config.seed)
    result = train_separator(model, corpus, manager.stft_config(), train_config, manager.loss_config(),
                             mode=args.mode)

    run_dir = _prepare_run_dir(args.run_dir, manager, {
        "command": "train-sep", "mode": args.mode, "seed": train_config.seed,
        "dataset_hash": corpus.dataset_hash, "class_names": corpus.class_names,
    })
    save_checkpoint(run_dir / SEPARATOR_CHECKPOINT, {SEPARATOR_PREFIX: result.model})
    result.history.to_csv(run_dir / "history.csv", index=False, float_format="%.6f")
    logger.info(f"✅ Separator checkpoint written to {run_dir / SEPARATOR_CHECKPOINT}")
    return 0


def cmd_train_parser(args: argparse.Namespace, manager: SeparationConfigManager) -> int:
    train_config = manager.train_config()
    seed_everything(train_config.seed)
    corpus = load_corpus(args.corpus)
    _check_corpus(corpus, manager)

    model = ScenePredictor(manager.parser_config(), seed=train_config.seed)
    result = train_parser(model, corpus, manager.stft_config(), train_config)

    run_dir = _prepare_run_dir(args.run_dir, manager, {
        "command": "train-parser", "parser_seed": train_config.seed, "dataset_hash": corpus.dataset_hash,
        "class_names": corpus.class_names,
    })
    save_checkpoint(run_dir / PARSER_CHECKPOINT, {PARSER_PREFIX: result.model})
    result.history.to_csv(run_dir / "parser_history.csv", index=False, float_format="%.6f")
    logger.info(f"✅ Parser checkpoint written to {run_dir / PARSER_CHECKPOINT}")
    return 0


def _read_features(path: Path) -> List[np.ndarray]:
    """.npy holding [n, k_r] pooled features or [n, frames, k_r] frame features"""
    try:
        features = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read visual features {path}: {e}") from e
    if features.ndim == 1:
        features = features[None, :]
    if features.ndim not in (2, 3):
        raise DataError(f"visual features must be [n, k_r] or [n, frames, k_r], got {features.shape}")
    return list(features)


def _class_vocabulary(args: argparse.Namespace) -> List[str]:
    """Class names from --corpus, else from the run metadata beside the checkpoint, else the built-in list"""
    if args.corpus is not None:
        return load_corpus(args.corpus).class_names
    metadata_path = args.checkpoint[0].parent / RUN_METADATA
    if metadata_path.exists():
        names = json.loads(metadata_path.read_text(encoding="utf-8")).get("class_names")
        if names:
            return names
    logger.warning("⚠️ No corpus vocabulary found, falling back to the built-in class names")
    return list(CLASS_NAMES)


def cmd_infer(args: argparse.Namespace, manager: SeparationConfigManager) -> int:
    stft_config = manager.stft_config()
    separator, parser = _load_models(args.checkpoint, manager.parser_config().threshold)
    mixture = read_wav(args.mixture, expected_rate=stft_config.sample_rate)
    visual_feats = _read_features(args.features) if args.features else []

    engine = SeparationMethodEngine(separator, stft_config, manager.bss_config(), parser=parser)
    outputs = engine.run_inference(mixture, visual_feats)

    args.out.mkdir(parents=True, exist_ok=True)
    names = class_names_for([c for c, _, _ in outputs], _class_vocabulary(args))
    listing = []
    for (class_id, visibility, clip), name in zip(outputs, names):
        path = write_wav(args.out / f"{class_id:02d}_{name}_{visibility}.wav", clip)
        listing.append({"class_id": class_id, "class_name": name, "visibility": visibility, "path": path.name})
    pd.DataFrame(listing, columns=["class_id", "class_name", "visibility", "path"]).to_csv(
        args.out / "stems.csv", index=False)
    logger.info(f"✅ Wrote {len(listing)} stems to {args.out}")
    return 0


def _spectrogram_dump(engine: SeparationMethodEngine, corpus: Corpus, m: int, n: int, split: str,
                      feature_mode: str, seed: int) -> Dict[str, np.ndarray]:
    """Mixture log-magnitude, ideal masks and scene-aware masks of the first evaluation mixture"""
    draw = draw_mixture(corpus, m, n, seed=seed * 100003, split=split, mixture_id=f"{split}-0000")
    features = engine.source_features(corpus, draw, feature_mode, draw.manifest.seed)
    stems = engine.separate_draw("avsa", draw, features)
    grids = {"mixture": log_magnitude(stft(draw.mixture, engine.stft_config)).values}
    ideal = ideal_binary_masks([stft(stem, engine.stft_config) for stem in draw.stems])
    for i, stem in sorted(stems.items()):
        grids[f"ideal_mask_{i}"] = ideal[i].values
        grids[f"mask_{i}_{stem.visibility}"] = stem.mask.values
    return grids


def cmd_eval(args: argparse.Namespace, manager: SeparationConfigManager) -> int:
    stft_config = manager.stft_config()
    train_config = manager.train_config()
    runtime = manager.get_config("runtime")
    seed_everything(train_config.seed)

    corpus = load_corpus(args.corpus)
    _check_corpus(corpus, manager)
    separator, parser = _load_models(args.checkpoint, manager.parser_config().threshold)

    engine = SeparationMethodEngine(separator, stft_config, manager.bss_config(), parser=parser)
    methods = [m.strip() for m in args.methods.split(",")] if args.methods else None
    rows, labels, truths = engine.evaluate(
        corpus, mixtures=runtime["eval_mixtures"], m=train_config.sources, n=train_config.visible,
        split=args.split, methods=methods, feature_mode=args.feature_mode, seed=train_config.seed,
        workers=args.workers,
    )

    condition = {"split": args.split, "feature_mode": args.feature_mode,
                 "m": train_config.sources, "n": train_config.visible}
    report = SeparationScoringEngine().build_report(rows, labels, truths, condition=condition,
                                                    config=manager.as_flat_dict(), seed=train_config.seed)
    name = f"eval_{args.split}_{args.feature_mode}"
    run_dir = _prepare_run_dir(args.run_dir, manager, {"command": "eval", "seed": train_config.seed,
                                                       "dataset_hash": corpus.dataset_hash})
    paths = report.save(run_dir, name)

    if args.dump_spectrograms:
        grids = _spectrogram_dump(engine, corpus, train_config.sources, train_config.visible,
                                  args.split, args.feature_mode, train_config.seed)
        np.savez(run_dir / f"{name}_spectrograms.npz", **grids)

    print(SeparationReportGenerator().render_table(report), end="")
    logger.info(f"✅ Evaluation written to {paths['json']}")
    return 0


def cmd_report(args: argparse.Namespace, manager: SeparationConfigManager) -> int:
    run_dir: Path = args.run_dir
    names = [args.name] if args.name else sorted(p.stem for p in run_dir.glob("eval_*.json"))
    if not names:
        raise DataError(f"no evaluation reports in {run_dir}")

    generator = SeparationReportGenerator()
    for name in names:
        if not (run_dir / f"{name}.json").exists():
            raise DataError(f"report {name} not found in {run_dir}")
        report = ExperimentReport.load(run_dir, name)
        dump_path = run_dir / f"{name}_spectrograms.npz"
        spectrograms = None
        if dump_path.exists():
            with np.load(dump_path) as dump:
                spectrograms = {key: dump[key] for key in dump.files}
        result = generator.generate_report(report, run_dir / "report" / name, spectrograms=spectrograms,
                                           plot=args.plot)
        if not result["success"]:
            raise DataError(f"report rendering failed: {result['error']}")
        print(generator.render_summary(report), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avsa", description="Scene-aware audio source separation")
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen = subparsers.add_parser("gen-data", help="synthesize the instrument corpus")
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--workers", type=int, default=1)
    gen.add_argument("--encoding", choices=["float32", "pcm16"], default=None)
    gen.add_argument("--skip-separability-check", action="store_true")
    gen.set_defaults(handler=cmd_gen_data)

    sep = subparsers.add_parser("train-sep", help="train the dual-branch separator")
    sep.add_argument("--corpus", type=Path, required=True)
    sep.add_argument("--run-dir", type=Path, required=True)
    sep.add_argument("--mode", choices=["joint", "visual-only", "semantic-only"], default="joint")
    sep.set_defaults(handler=cmd_train_sep)

    par = subparsers.add_parser("train-parser", help="train the visible/audible scene parser")
    par.add_argument("--corpus", type=Path, required=True)
    par.add_argument("--run-dir", type=Path, required=True)
    par.set_defaults(handler=cmd_train_parser)

    inf = subparsers.add_parser("infer", help="parse a mixture and separate every audible class")
    inf.add_argument("--checkpoint", type=Path, nargs="+", required=True)
    inf.add_argument("--mixture", type=Path, required=True)
    inf.add_argument("--features", type=Path, default=None, help=".npy visual features of the visible objects")
    inf.add_argument("--corpus", type=Path, default=None, help="corpus whose manifest names the classes")
    inf.add_argument("--out", type=Path, required=True)
    inf.set_defaults(handler=cmd_infer)

    ev = subparsers.add_parser("eval", help="score separation methods on held-out mixtures")
    ev.add_argument("--corpus", type=Path, required=True)
    ev.add_argument("--checkpoint", type=Path, nargs="+", required=True)
    ev.add_argument("--run-dir", type=Path, required=True)
    ev.add_argument("--split", choices=["train", "test"], default="test")
    ev.add_argument("--feature-mode", choices=list(FEATURE_MODES), default="clip")
    ev.add_argument("--methods", default=None,
                    help="comma-separated methods: avsa, visual-only, semantic-only, subtract-baseline, "
                         "subtract-ablation")
    ev.add_argument("--workers", type=int, default=1)
    ev.add_argument("--dump-spectrograms", action="store_true")
    ev.set_defaults(handler=cmd_eval)

    rep = subparsers.add_parser("report", help="render tables, spectrogram images and plots")
    rep.add_argument("--run-dir", type=Path, required=True)
    rep.add_argument("--name", default=None)
    rep.add_argument("--plot", action="store_true")
    rep.set_defaults(handler=cmd_report)

    for sub in (gen, sep, par, inf, ev, rep):
        add_config_flags(sub)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main application function"""
    args = build_parser().parse_args(argv)
    try:
        manager = config_manager_from_args(args)
        level = str(manager.get_config("runtime")["log_level"]).upper()
        logging.basicConfig(level=getattr(logging, level, logging.INFO),
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        return args.handler(args, manager)
    except SeparationError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
