"""
Results Writer Module
Persists sweep records as flat CSV tables, a nested JSON document and
plot-ready wide tables
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd

from config import settings
from backend.errors import ConfigurationError
from backend.experiment import ExperimentConfig, ResultRecord

# Configure logging
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

KINDS = ("spectrum", "entanglement", "bell")


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {key: _json_safe(v) for key, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def records_frame(records: Sequence[ResultRecord], kind: str) -> pd.DataFrame:
    """Flat table of the records of one kind, in emission order"""
    return pd.DataFrame([record.to_row() for record in records if record.kind == kind])


class ResultsWriter:
    """
    Writes the records of a sweep into an output folder.

    File names are derived from the experiment name so reruns overwrite
    their own files and nothing else.
    """

    def __init__(self, out_dir: Optional[Union[str, Path]] = None):
        self.out_dir = Path(out_dir or settings.OUTPUT_FOLDER)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def write(self,
              records: Sequence[ResultRecord],
              config: ExperimentConfig,
              formats: Optional[Sequence[str]] = None,
              kinds: Optional[Sequence[str]] = None) -> List[Path]:
        """
        Write records in the requested formats

        Args:
            records (Sequence[ResultRecord]): Sweep output
            config (ExperimentConfig): Configuration that produced them
            formats (Sequence[str], optional): Subset of {"csv", "json"}
            kinds (Sequence[str], optional): Record kinds to write as CSV

        Returns:
            List[Path]: Written files
        """
        formats = list(formats or config.output_formats)
        unknown = set(formats) - settings.OUTPUT_FORMATS
        if unknown:
            raise ConfigurationError(f"Unsupported output formats: {sorted(unknown)}", field="output.format")

        paths = []
        if "csv" in formats:
            for kind in kinds or KINDS:
                frame = records_frame(records, kind)
                if frame.empty:
                    continue
                path = self.out_dir / f"{config.name}_{kind}.csv"
                frame.to_csv(path, index=False)
                paths.append(path)
        if "json" in formats:
            paths.append(self.write_json(records, config))

        for path in paths:
            logger.info(f"Results written to {path}")
        return paths

    def write_json(self, records: Sequence[ResultRecord], config: ExperimentConfig) -> Path:
        """Nested document: shared metadata, the full configuration and every record"""
        metadata = records[0].metadata if records else {}
        document = {
            "experiment": config.name,
            "metadata": metadata,
            "config": config.to_dict(),
            "records": [
                {key: value for key, value in record.to_dict().items() if key != "metadata"}
                for record in records
            ],
        }
        path = self.out_dir / f"{config.name}.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(_json_safe(document), f, indent=2)
        return path

    def write_plot_table(self, records: Sequence[ResultRecord], name: str) -> Path:
        """
        Wide table for plotting

        Spectra: one row per (l0, l), one column per (W, correction).
        Other records: one row per W, one column per (metric, correction,
        subspace), plus the matching trace columns.
        """
        spectra = records_frame(records, "spectrum")
        if not spectra.empty:
            spectra["column"] = "P|W=" + spectra["W"].map("{:.2f}".format) + "|" + spectra["correction_mode"]
            wide = spectra.pivot_table(index=["l0", "l"], columns="column", values="P", sort=False)
        else:
            wide = self._measure_table(records)

        path = self.out_dir / f"{name}_plot.csv"
        wide.to_csv(path)
        logger.info(f"Plot table written to {path}")
        return path

    def _measure_table(self, records: Sequence[ResultRecord]) -> pd.DataFrame:
        rows = []
        for record in records:
            if record.kind == "spectrum":
                continue
            label = f"{record.correction}|{record.modes}"
            rows.append({"W": record.W, "column": f"{record.metric}|{label}", "value": record.value})
            rows.append({"W": record.W, "column": f"{record.metric}_stderr|{label}", "value": record.stderr})
            if record.kind == "entanglement" and record.trace is not None:
                rows.append({"W": record.W, "column": f"trace|{label}", "value": record.trace})
        if not rows:
            return pd.DataFrame()
        frame = pd.DataFrame(rows).drop_duplicates(subset=["W", "column"])
        return frame.pivot(index="W", columns="column", values="value")

    def write_summary(self, rows: Sequence[Dict[str, Any]], name: str) -> Path:
        path = self.out_dir / f"{name}.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(_json_safe(list(rows)), f, indent=2)
        logger.info(f"Summary written to {path}")
        return path

    def write_table(self, frame: pd.DataFrame, name: str) -> Path:
        path = self.out_dir / f"{name}.csv"
        frame.to_csv(path, index=False)
        logger.info(f"Table written to {path}")
        return path
