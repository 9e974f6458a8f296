import math

import pandas as pd

from toda_cft.core.sphere_geometry import SPHERE_VOLUME


class Summarizer:
    def __init__(self):
        super().__init__()

    @staticmethod
    def summarize_by_direction(traces, expected=SPHERE_VOLUME):
        # Group replica totals by simple-root direction
        summary = (
            traces.groupby("direction")["total_mass"]
            .agg(["count", "mean", "std", "median"])
            .reset_index()
        )
        summary["stderr"] = summary["std"] / summary["count"].map(math.sqrt)
        # Distance of the mean from the Wick value in standard errors
        summary["z_score"] = (summary["mean"] - expected) / summary["stderr"]
        summary = summary.rename(columns={"count": "replicas"})
        return summary[["direction", "replicas", "mean", "stderr", "median", "z_score"]]

    @staticmethod
    def summarize_ledger(ledger):
        # One row per oracle group with pass counts
        entries = pd.DataFrame(ledger, columns=["group", "name", "passed", "detail"])
        summary = entries.groupby("group")["passed"].agg(["count", "sum"]).reset_index()
        summary = summary.rename(columns={"count": "checks", "sum": "passed"})
        summary["passed"] = summary["passed"].astype(int)
        summary["failed"] = summary["checks"] - summary["passed"]
        return summary.sort_values(by="group").reset_index(drop=True)
