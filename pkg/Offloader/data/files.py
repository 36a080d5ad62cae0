"""
Output File Management Module - Result directory layout

Every command writes into one output directory: result tables, the resolved
config echo, traces and logs each get a fixed location.
"""

import logging
import os
from typing import Optional

import pandas as pd

from Offloader.processing.reports import export_results

# Configure logging
logger = logging.getLogger(__name__)

CONFIG_ECHO = "config.resolved.env"


class OutputManager:
    """Paths and writers for one output directory"""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.ensure_dir(out_dir)

    @staticmethod
    def ensure_dir(path: str) -> str:
        if not os.path.exists(path):
            os.makedirs(path)
            logger.info(f"Created output directory {path}")
        return path

    @property
    def log_dir(self) -> str:
        return os.path.join(self.out_dir, "logs")

    def path(self, name: str, subdir: Optional[str] = None) -> str:
        directory = self.out_dir if subdir is None else self.ensure_dir(os.path.join(self.out_dir, subdir))
        return os.path.join(directory, name)

    def write_table(self, frame: pd.DataFrame, name: str, subdir: Optional[str] = None) -> str:
        return export_results(frame, self.path(name, subdir))

    def write_text(self, text: str, name: str) -> str:
        file_path = self.path(name)
        with open(file_path, "w", encoding="utf-8") as handle:
            handle.write(text)
        logger.info(f"Wrote {file_path}")
        return file_path

    def echo_config(self, config) -> str:
        """Write the fully resolved config next to the results"""
        return self.write_text(config.to_env(), CONFIG_ECHO)
