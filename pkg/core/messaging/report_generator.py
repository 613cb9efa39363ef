"""
Report Generator for the Scene-Aware Separation System
Text tables of experiment aggregates, grayscale PGM spectrogram dumps
and an optional plotly bar chart
"""
import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, Any, List, Mapping, Optional, Union

import numpy as np
import plotly.graph_objects as go
from PIL import Image

from analysis_frameworks.scoring_engine import ExperimentReport
from core.dsp.signal_processing import LogMagSpectrogram, Mask, Spectrogram, log_magnitude

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["method", "visibility", "SDR", "SIR", "n"]


class SeparationReportGenerator:
    """Deterministic rendering of experiment reports"""

    def __init__(self):
        self.table_format = self._initialize_table_format()

    def _initialize_table_format(self) -> Dict[str, Any]:
        return {
            "widths": {"method": 18, "visibility": 10, "SDR": 9, "SIR": 9, "n": 6},
            "precision": 2,
        }

    def render_table(self, report: ExperimentReport) -> str:
        """Fixed-width table with columns method, visibility, SDR, SIR, n"""
        widths = self.table_format["widths"]
        precision = self.table_format["precision"]

        def line(cells: List[str]) -> str:
            parts = []
            for column, cell in zip(TABLE_COLUMNS, cells):
                width = widths[column]
                parts.append(cell.ljust(width) if column in ("method", "visibility") else cell.rjust(width))
            return " ".join(parts).rstrip()

        lines = [line(TABLE_COLUMNS), line(["-" * widths[c] for c in TABLE_COLUMNS])]
        for row in report.aggregates.itertuples(index=False):
            lines.append(line([
                str(row.method),
                str(row.visibility),
                f"{row.sdr:.{precision}f}",
                f"{row.sir:.{precision}f}",
                str(int(row.n)),
            ]))
        return "\n".join(lines) + "\n"

    def render_summary(self, report: ExperimentReport) -> str:
        lines = [self.render_table(report)]
        if report.parser_accuracy is not None:
            lines.append(f"parser exact-set accuracy: {report.parser_accuracy:.3f}\n")
        if report.condition:
            condition = ", ".join(f"{k}={v}" for k, v in sorted(report.condition.items()))
            lines.append(f"condition: {condition}\n")
        lines.append(f"seed: {report.seed}\n")
        return "".join(lines)

    @staticmethod
    def _grid(values: Union[Spectrogram, LogMagSpectrogram, Mask, np.ndarray]) -> np.ndarray:
        if isinstance(values, Spectrogram):
            return log_magnitude(values).values
        if isinstance(values, (LogMagSpectrogram, Mask)):
            return values.values
        return np.asarray(values, dtype=np.float64)

    def write_pgm(self, values: Union[Spectrogram, LogMagSpectrogram, Mask, np.ndarray],
                  path: Union[str, Path]) -> Path:
        """8-bit grayscale image, width = frames, height = bins, low frequencies at the bottom"""
        grid = self._grid(values)
        low, high = float(grid.min()), float(grid.max())
        scaled = np.zeros_like(grid) if high <= low else (grid - low) / (high - low)
        pixels = np.round(scaled * 255.0).astype(np.uint8).T[::-1]
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.ascontiguousarray(pixels)).save(path, format="PPM")
        return path

    def build_figure(self, report: ExperimentReport) -> go.Figure:
        figure = go.Figure()
        for metric in ("sdr", "sir"):
            labels = [f"{m} / {v}" for m, v in zip(report.aggregates["method"], report.aggregates["visibility"])]
            figure.add_trace(go.Bar(name=metric.upper(), x=labels, y=report.aggregates[metric].tolist()))
        figure.update_layout(barmode="group", yaxis_title="dB", title=f"Separation quality (seed {report.seed})")
        return figure

    def write_plot_html(self, report: ExperimentReport, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.build_figure(report).write_html(str(path), include_plotlyjs="cdn")
        return path

    def generate_report(self, report: ExperimentReport, output_dir: Union[str, Path],
                        spectrograms: Optional[Mapping[str, Any]] = None,
                        plot: bool = False) -> Dict[str, Any]:
        """Write report.txt, optional PGM dumps and an optional HTML chart"""

        output_dir = Path(output_dir)
        try:
            logger.info(f"🔄 Rendering report into {output_dir}")
            output_dir.mkdir(parents=True, exist_ok=True)
            table_path = output_dir / "report.txt"
            table_path.write_text(self.render_summary(report), encoding="utf-8")

            images = {name: self.write_pgm(grid, output_dir / f"{name}.pgm")
                      for name, grid in (spectrograms or {}).items()}
            plot_path = self.write_plot_html(report, output_dir / "report.html") if plot else None

            logger.info("✅ Report rendered")
            return {
                "table": table_path,
                "images": images,
                "plot": plot_path,
                "generation_timestamp": datetime.now().isoformat(),
                "success": True,
            }
        except OSError as e:
            logger.error(f"❌ Report rendering failed: {str(e)}")
            return {
                "error": str(e),
                "generation_timestamp": datetime.now().isoformat(),
                "success": False,
            }
