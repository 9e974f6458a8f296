import json
import logging
import os
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["replica", "direction", "total_mass"]


def _encode(value):
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, Decimal):
        # repr of the nearest double reproduces the literal for decimal inputs
        return float(value)
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")


class FilePersistence:
    def __init__(self):
        super().__init__()

    @staticmethod
    def dumps_result(result):
        return json.dumps(result, default=_encode, sort_keys=True, indent=2, allow_nan=True) + "\n"

    @staticmethod
    def save_result(result, filename):
        directory = os.path.dirname(str(filename))
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(filename, "w", encoding="utf-8") as handle:
            handle.write(FilePersistence.dumps_result(result))
        logger.info(f"Wrote result to {filename}")

    @staticmethod
    def load_result(filename):
        if not os.path.exists(filename):
            raise FileNotFoundError(f"File not found: {filename}")
        with open(filename, encoding="utf-8") as handle:
            return json.load(handle)

    @staticmethod
    def save_traces(traces, filename):
        directory = os.path.dirname(str(filename))
        if directory:
            os.makedirs(directory, exist_ok=True)
        traces[TRACE_COLUMNS].to_csv(filename, index=False, float_format="%.17g")
        logger.info(f"Wrote {len(traces)} trace rows to {filename}")

    @staticmethod
    def load_traces(filename):
        if os.path.exists(filename):
            return pd.read_csv(filename, float_precision="round_trip")
        else:
            logger.warning(f"Trace file {filename} is missing; returning an empty table")
            return pd.DataFrame(columns=TRACE_COLUMNS)
