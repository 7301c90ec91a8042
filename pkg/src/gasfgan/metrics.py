"""Imputation error metrics, missing-rate accounting and report aggregation.

Metrics are scored only where ``eval_mask == 1``, i.e. the positions that
were withheld and imputed and whose ground truth is known.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from gasfgan.errors import DataError

METRICS = ("mae", "rmse", "mre")


def _flagged(truth, imputed, eval_mask):
    y = np.asarray(truth, dtype=np.float64)
    yhat = np.asarray(imputed, dtype=np.float64)
    m = np.asarray(eval_mask)
    if y.shape != yhat.shape or y.shape != m.shape:
        raise DataError(f"shape mismatch: truth {y.shape}, imputed {yhat.shape}, "
                        f"mask {m.shape}")
    sel = m == 1
    if not sel.any():
        raise DataError("no positions flagged for evaluation")
    return y[sel], yhat[sel]


def mae(truth, imputed, eval_mask) -> float:
    y, yhat = _flagged(truth, imputed, eval_mask)
    return float(np.abs(y - yhat).mean())


def rmse(truth, imputed, eval_mask) -> float:
    y, yhat = _flagged(truth, imputed, eval_mask)
    return float(np.sqrt(((y - yhat) ** 2).mean()))


def mre(truth, imputed, eval_mask, return_excluded: bool = False):
    """Mean of ``|y - yhat| / y``; flagged positions with ``y == 0`` are left out.

    With ``return_excluded`` the number of left-out positions is returned too.
    """
    y, yhat = _flagged(truth, imputed, eval_mask)
    keep = y > 0
    if not keep.any():
        raise DataError("every flagged ground-truth value is zero; MRE undefined")
    value = float((np.abs(y[keep] - yhat[keep]) / y[keep]).mean())
    if return_excluded:
        return value, int((~keep).sum())
    return value


def realized_mr(masks) -> float:
    """Fraction of mask-zero entries across all samples."""
    masks = [np.asarray(m) for m in masks]
    if not masks:
        raise DataError("realized_mr needs at least one mask")
    total = sum(m.size for m in masks)
    missing = sum(int((m == 0).sum()) for m in masks)
    return missing / total


def eval_mask_of(corrupted) -> np.ndarray:
    """Positions withheld from a purposely corrupted series."""
    if corrupted.truth is None:
        return np.zeros(corrupted.T, dtype=np.uint8)
    return (corrupted.mask == 0).astype(np.uint8)


def score(truth, imputed, eval_mask) -> dict:
    value, excluded = mre(truth, imputed, eval_mask, return_excluded=True)
    return {"mae": mae(truth, imputed, eval_mask),
            "rmse": rmse(truth, imputed, eval_mask),
            "mre": value, "mre_excluded": excluded,
            "n_scored": int((np.asarray(eval_mask) == 1).sum())}


@dataclass
class MetricsReport:
    cells: pd.DataFrame
    aggregates: pd.DataFrame
    group_by: tuple

    def to_dict(self):
        return {"group_by": list(self.group_by),
                "repetitions": int(self.cells["repetition"].nunique())
                if "repetition" in self.cells else None,
                "aggregates": json.loads(self.aggregates.to_json(orient="records")),
                "cells": json.loads(self.cells.to_json(orient="records"))}

    def write(self, stem):
        """``<stem>_cells.csv``, ``<stem>_aggregates.csv`` and ``<stem>.json``."""
        stem = str(stem)
        self.cells.to_csv(stem + "_cells.csv", index=False)
        self.aggregates.to_csv(stem + "_aggregates.csv", index=False)
        with open(stem + ".json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def aggregate_report(results, group_by="sensor") -> MetricsReport:
    """Mean/median/min/max of every metric per group.

    ``results`` is a list of dicts (or a DataFrame) with the metric columns and
    the grouping keys, one row per (sensor, MR, repetition) cell.
    """
    cells = results if isinstance(results, pd.DataFrame) else pd.DataFrame(list(results))
    if cells.empty:
        raise DataError("no results to aggregate")
    keys = (group_by,) if isinstance(group_by, str) else tuple(group_by)
    missing = [k for k in keys + METRICS if k not in cells.columns]
    if missing:
        raise DataError(f"results lack columns {missing}")
    sort_cols = [c for c in ("sensor", "cluster", "day_class", "mr", "repetition")
                 if c in cells.columns]
    cells = cells.sort_values(sort_cols, kind="mergesort").reset_index(drop=True)
    agg = cells.groupby(list(keys), sort=True)[list(METRICS)].agg(
        ["mean", "median", "min", "max"])
    agg.columns = [f"{m}_{stat}" for m, stat in agg.columns]
    agg["count"] = cells.groupby(list(keys), sort=True).size()
    return MetricsReport(cells, agg.reset_index(), keys)


def plot_mr_sweep(report_or_cells, path, metric="mae"):
    """Metric vs missing rate, one line per sensor."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cells = getattr(report_or_cells, "cells", report_or_cells)
    fig, ax = plt.subplots(figsize=(6, 4))
    for sensor, grp in cells.groupby("sensor"):
        curve = grp.groupby("mr")[metric].mean()
        ax.plot(curve.index * 100, curve.values, marker="o", label=str(sensor))
    ax.set_xlabel("missing rate (%)")
    ax.set_ylabel(metric.upper())
    if cells["sensor"].nunique() <= 10:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_error_cdf(errors_by_label, path):
    """Empirical CDF of absolute imputation errors, one curve per label."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, errs in errors_by_label.items():
        e = np.sort(np.asarray(errs, dtype=np.float64))
        if e.size:
            ax.plot(e, np.arange(1, e.size + 1) / e.size, label=str(label))
    ax.set_xlabel("absolute error (veh/interval)")
    ax.set_ylabel("cumulative fraction")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sensor_summary(report_or_cells, path, metric="mae"):
    """Per-sensor box plot of a metric across MR and repetitions."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cells = getattr(report_or_cells, "cells", report_or_cells)
    groups = [(str(s), g[metric].values) for s, g in cells.groupby("sensor")]
    fig, ax = plt.subplots(figsize=(max(4, len(groups) * 0.5), 4))
    ax.boxplot([g for _, g in groups])
    ax.set_xticks(range(1, len(groups) + 1), [s for s, _ in groups], rotation=90)
    ax.set_ylabel(metric.upper())
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
