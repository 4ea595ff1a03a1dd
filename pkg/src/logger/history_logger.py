import logging

import pandas as pd

from src.utils import save_dataframe

logger = logging.getLogger(__name__)

ADMM_HISTORY_COLUMNS = ["k", "rho", "r_norm", "s_norm", "cost", "lagrangian", "rel_error",
                        "forward_solves", "adjoint_solves", "incremental_solves"]
INCG_HISTORY_COLUMNS = ["k", "cost", "grad_norm", "alpha", "gdm", "eta", "cg_iterations",
                        "cg_reason", "backtracks", "rel_error",
                        "forward_solves", "adjoint_solves", "incremental_solves"]


class HistoryLogger:
    """Per-iteration records of one run, kept as a list of rows"""

    def __init__(self, run_name, columns):
        self.run_name = run_name
        self.columns = list(columns)
        self.rows = []

    def log_iteration(self, **row):
        unknown = set(row) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown history columns {sorted(unknown)}")
        self.rows.append({column: row.get(column) for column in self.columns})

    def __len__(self):
        return len(self.rows)

    @property
    def last(self):
        return self.rows[-1] if self.rows else {}

    def get_history_dataframe(self):
        if not self.rows:
            return pd.DataFrame(columns=self.columns)
        return pd.DataFrame(self.rows, columns=self.columns)

    def save(self, path):
        path = save_dataframe(self.get_history_dataframe(), path)
        logger.debug("history of %s saved to %s", self.run_name, path)
        return path

    def get_history_stats(self):
        df = self.get_history_dataframe()
        if df.empty:
            return {"run": self.run_name, "iterations": 0}
        stats = {"run": self.run_name, "iterations": len(df)}
        for column in ("cost", "rel_error", "r_norm", "s_norm", "grad_norm"):
            if column in df.columns and df[column].notna().any():
                stats[f"final_{column}"] = float(df[column].dropna().iloc[-1])
        for column in ("forward_solves", "adjoint_solves", "incremental_solves"):
            if column in df.columns and df[column].notna().any():
                stats[column] = int(df[column].dropna().iloc[-1])
        return stats
