"""The five pipeline stages behind the command line.

Layout under ``output_dir``::

    dataset/<sensor>.zip, dataset/summary.json          ingest
    cluster/assignment.json, cluster/inertia.csv         cluster
    cluster_<k>/<day_class>/checkpoint.zip, trainlog.jsonl   train
    impute/...                                           impute
    evaluate/...                                         evaluate
    report/*.png                                         report
"""
from __future__ import annotations

import dataclasses
import json
import logging
import re
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from gasfgan import baselines, cluster as clus
from gasfgan._archive import read_archive, write_archive
from gasfgan.config import RunConfig
from gasfgan.data import (CorruptionSpec, DailySeries, corrupt, day_class_of,
                          load_all_sensors, load_series, save_series, train_test_split)
from gasfgan.errors import ConflictError, DataError
from gasfgan.gasf import fit_stats, series_to_images
from gasfgan.impute import (ImputationFailure, impute_batch,
                            write_results_csv, write_results_json)
from gasfgan.metrics import (aggregate_report, eval_mask_of, mae, plot_error_cdf,
                             plot_mr_sweep, plot_sensor_summary, rmse, score)
from gasfgan.model import (build_discriminator, build_generator, load_checkpoint,
                           save_checkpoint)
from gasfgan.train import TrainLog, train

log = logging.getLogger(__name__)

METHODS = ("gan", "historical_average", "mean_fill")


class MissingCheckpointError(DataError):
    pass


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", str(name))


def _dirs(cfg: RunConfig):
    root = Path(cfg.output_dir)
    return {"dataset": root / "dataset", "cluster": root / "cluster",
            "impute": root / "impute", "evaluate": root / "evaluate",
            "report": root / "report"}


def model_dir(cfg: RunConfig, cluster_id, day_class) -> Path:
    return Path(cfg.output_dir) / f"cluster_{cluster_id}" / day_class


# ---------------------------------------------------------------- ingest

def cmd_ingest(cfg: RunConfig) -> dict:
    """Parse every CSV, serialize one dataset archive per sensor, write a summary."""
    merged: dict[str, dict] = {}
    for p in cfg.paths:
        path = cfg.resolve(p)
        for sid, series in load_all_sensors(path, cfg.T).items():
            days = merged.setdefault(sid, {})
            for s in series:
                if s.day in days:
                    raise ConflictError(f"{path}: sensor {sid} day {s.day} also "
                                        f"appears in an earlier file")
                days[s.day] = s
    if not merged:
        raise DataError("no sensor records found in the input files")
    out = _dirs(cfg)["dataset"]
    out.mkdir(parents=True, exist_ok=True)
    sensors = {}
    for sid in sorted(merged):
        series = [merged[sid][d] for d in sorted(merged[sid])]
        fname = _safe(sid) + ".zip"
        save_series(out / fname, series, meta={"sensor_id": sid})
        full = [s for s in series if s.fully_observed]
        counts = {dc: sum(day_class_of(s.day, set(cfg.holidays)) == dc for s in full)
                  for dc in cfg.day_classes}
        slots = len(series) * cfg.T
        sensors[sid] = {
            "file": fname,
            "days": len(series),
            "fully_observed": counts,
            "days_with_gaps": len(series) - len(full),
            "missing_fraction": float(sum(cfg.T - s.n_observed for s in series) / slots),
        }
    summary = {"T": cfg.T, "n_sensors": len(sensors), "sensors": sensors}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    log.info("ingested %d sensors", len(sensors))
    return summary


def load_dataset(cfg: RunConfig) -> dict[str, list[DailySeries]]:
    out = _dirs(cfg)["dataset"]
    summary_path = out / "summary.json"
    if not summary_path.is_file():
        raise DataError(f"{summary_path} not found; run ingest first")
    summary = json.loads(summary_path.read_text())
    return {sid: load_series(out / info["file"])
            for sid, info in sorted(summary["sensors"].items())}


def sensor_splits(cfg: RunConfig, series: list[DailySeries]) -> dict:
    """``{day_class: {"train", "test", "gaps"}}`` for one sensor.

    Fully observed days are split train/test with a seed derived from the
    sensor and day class; days with gaps are kept apart.
    """
    holidays = set(cfg.holidays)
    out = {}
    for dc in cfg.day_classes:
        days = [s for s in series if day_class_of(s.day, holidays) == dc]
        full = [s for s in days if s.fully_observed]
        gaps = [s for s in days if not s.fully_observed and s.n_observed > 0]
        if full:
            sid = series[0].sensor_id
            tr, te = train_test_split(full, cfg.split_ratio,
                                      cfg.seed_for(f"split/{sid}/{dc}"))
        else:
            tr, te = [], []
        out[dc] = {"train": tr, "test": te, "gaps": gaps}
    return out


# ---------------------------------------------------------------- cluster

def cmd_cluster(cfg: RunConfig, k: int | None = None) -> clus.ClusterAssignment:
    """Group sensors by quantile profiles of their training days."""
    data = load_dataset(cfg)
    features, skipped = [], []
    for sid, series in data.items():
        splits = sensor_splits(cfg, series)
        days = [s for dc in cfg.day_classes for s in splits[dc]["train"]]
        if len(days) < 2:
            skipped.append(sid)
            continue
        features.append(clus.build_features(days, sid))
    if skipped:
        warnings.warn(f"sensors without 2 fully observed training days are left "
                      f"unclustered: {skipped}", stacklevel=2)
    if not features:
        raise DataError("no sensor has enough fully observed days to cluster")
    k = k if k is not None else cfg.k
    seed = cfg.seed_for("cluster")
    elbow = None
    if k is not None:
        assignment = clus.kmeans_fit(features, k, seed)
        ks, inertias = [k], [assignment.inertia]
    elif len(features) == 1:
        assignment = clus.kmeans_fit(features, 1, seed)
        ks, inertias = [1], [assignment.inertia]
    else:
        lo, hi = cfg.k_range
        ks = list(range(lo, min(hi, len(features)) + 1))
        if len(ks) < 3:
            # too few candidates for a bend; keep a single group
            warnings.warn(f"{len(features)} sensors are too few for elbow "
                          f"selection; using K={lo}", stacklevel=2)
            assignment = clus.kmeans_fit(features, lo, seed)
            ks, inertias = [lo], [assignment.inertia]
        else:
            elbow = clus.elbow_select(features, ks, seed)
            assignment = elbow.assignment
            ks, inertias = elbow.ks, elbow.inertias
    out = _dirs(cfg)["cluster"]
    out.mkdir(parents=True, exist_ok=True)
    clus.save_assignment(assignment, out / "assignment.json", elbow)
    clus.write_inertia_csv(ks, inertias, out / "inertia.csv")
    log.info("K=%d over %d sensors", assignment.K, len(features))
    return assignment


def load_cluster_assignment(cfg: RunConfig) -> clus.ClusterAssignment:
    path = _dirs(cfg)["cluster"] / "assignment.json"
    if not path.is_file():
        raise DataError(f"{path} not found; run cluster first")
    return clus.load_assignment(path)


# ---------------------------------------------------------------- train

def _cluster_ids(assignment, cluster_id):
    ids = sorted(set(int(v) for v in assignment.labels.values()))
    if cluster_id is None:
        return ids
    if int(cluster_id) not in ids:
        raise DataError(f"cluster {cluster_id} has no sensors; known clusters {ids}")
    return [int(cluster_id)]


def training_days(cfg, data, assignment, cluster_id, day_class):
    days = []
    for sid in assignment.members(cluster_id):
        days += sensor_splits(cfg, data[sid])[day_class]["train"]
    return days


def cmd_train(cfg: RunConfig, cluster_id=None, day_class=None, resume: bool = False):
    """Train one model per (cluster, day class); returns ``{(k, dc): checkpoint_path}``."""
    data = load_dataset(cfg)
    assignment = load_cluster_assignment(cfg)
    classes = [day_class] if day_class else list(cfg.day_classes)
    jobs = [(k, dc) for k in _cluster_ids(assignment, cluster_id) for dc in classes]
    # check every job has enough data before training anything
    prepared = {}
    for k, dc in jobs:
        days = training_days(cfg, data, assignment, k, dc)
        need = 2 * cfg.train.batch_size
        if len(days) < need:
            raise DataError(f"cluster {k} {dc}: {len(days)} fully observed training "
                            f"days, need at least {need}")
        prepared[(k, dc)] = days
    out = {}
    for k, dc in jobs:
        out[(k, dc)] = _train_one(cfg, k, dc, prepared[(k, dc)], resume)
    return out


def _train_one(cfg, k, dc, days, resume):
    mdir = model_dir(cfg, k, dc)
    mdir.mkdir(parents=True, exist_ok=True)
    ck_path = mdir / "checkpoint.zip"
    log_path = mdir / "trainlog.jsonl"
    previous = None
    if resume and ck_path.is_file():
        previous = load_checkpoint(ck_path)
        stats = previous.stats
        log.info("cluster %s %s: resuming from epoch %d", k, dc, previous.epoch)
    else:
        stats = fit_stats([s.values for s in days], cfg.pad)
    images, normalized = series_to_images(days, stats, cfg.smooth_sigma)
    tcfg = dataclasses.replace(cfg.train, seed=cfg.seed_for(f"train/{k}/{dc}"))
    gen = build_generator(cfg.generator_spec(), seed=cfg.seed_for(f"init/g/{k}/{dc}"))
    disc = build_discriminator(cfg.discriminator_spec(),
                               seed=cfg.seed_for(f"init/d/{k}/{dc}"))

    def on_epoch(snapshot, trainlog):
        if snapshot.epoch % cfg.checkpoint_every == 0:
            save_checkpoint(snapshot, ck_path)
            trainlog.write_jsonl(log_path)

    ckpt, trainlog = train(images, gen, disc, tcfg, stats, real_series=normalized,
                           resume=previous, on_epoch=on_epoch,
                           meta={"cluster_id": k, "day_class": dc})
    save_checkpoint(ckpt, ck_path)
    trainlog.write_jsonl(log_path)
    return ck_path


# ---------------------------------------------------------------- impute

def _load_models(cfg, pairs):
    """Checkpoints for every (cluster, day class) in ``pairs``, checked up front."""
    missing = [(k, dc) for k, dc in sorted(pairs)
               if not (model_dir(cfg, k, dc) / "checkpoint.zip").is_file()]
    if missing:
        names = ", ".join(f"cluster {k} ({dc})" for k, dc in missing)
        raise MissingCheckpointError(f"no trained model for {names}; run "
                                     f"'gasfgan train --cluster <id>' first")
    return {pair: load_checkpoint(model_dir(cfg, *pair) / "checkpoint.zip")
            for pair in sorted(pairs)}


def _impute_with(models, cfg, samples, pairs, seeds):
    """Impute samples grouped by model; results come back in input order."""
    results = [None] * len(samples)
    for pair in sorted(set(pairs)):
        idx = [i for i, p in enumerate(pairs) if p == pair]
        batch = impute_batch([samples[i] for i in idx], models[pair], cfg.latent_search,
                             seeds=[seeds[i] for i in idx])
        for i, res in zip(idx, batch):
            if isinstance(res, ImputationFailure):
                res = dataclasses.replace(res, index=i)
            results[i] = res
    return results


def cmd_impute(cfg: RunConfig, mr=None, sweep: bool = False, one_shot=None,
               cluster_id=None):
    """Three modes: ``one_shot`` imputes the days in a CSV file; ``sweep`` (or an
    explicit ``mr`` list) corrupts held-out test days and scores them; otherwise
    the real gaps in the ingested data are filled."""
    out = _dirs(cfg)["impute"]
    out.mkdir(parents=True, exist_ok=True)
    assignment = load_cluster_assignment(cfg)
    if one_shot is not None:
        return _impute_one_shot(cfg, assignment, Path(one_shot), out)
    data = load_dataset(cfg)
    if mr is not None or sweep:
        mrs = tuple(mr) if mr is not None else cfg.mr_sweep
        return _impute_sweep(cfg, data, assignment, mrs, cluster_id, out)
    return _impute_gaps(cfg, data, assignment, cluster_id, out)


def _route(cfg, assignment, sid, data=None):
    if sid in assignment.labels:
        return int(assignment.labels[sid])
    if data is not None and sid in data:
        splits = sensor_splits(cfg, data[sid])
        days = [s for dc in cfg.day_classes for s in splits[dc]["train"]]
        if len(days) >= 2:
            return clus.route_sensor(sid, assignment, clus.build_features(days, sid))
    raise DataError(f"sensor {sid} is not in the cluster assignment and has too "
                    f"few fully observed days to be routed")


def _impute_one_shot(cfg, assignment, path, out):
    if not path.is_file():
        raise DataError(f"one-shot input not found: {path}")
    try:
        data = load_dataset(cfg)
    except DataError:
        data = None
    samples = [s for series in load_all_sensors(path, cfg.T).values() for s in series]
    if not samples:
        raise DataError(f"{path}: no records")
    holidays = set(cfg.holidays)
    pairs = [(_route(cfg, assignment, s.sensor_id, data), day_class_of(s.day, holidays))
             for s in samples]
    models = _load_models(cfg, set(pairs))
    seeds = [cfg.seed_for(f"search/{s.sensor_id}/{s.day}") for s in samples]
    results = _impute_with(models, cfg, samples, pairs, seeds)
    failed = [r for r in results if isinstance(r, ImputationFailure)]
    if len(failed) == len(results):
        raise failed[0].error
    stem = out / f"one_shot_{_safe(path.stem)}"
    write_results_csv(results, str(stem) + ".csv")
    write_results_json(results, str(stem) + ".json")
    return results


def _impute_gaps(cfg, data, assignment, cluster_id, out):
    samples, pairs = [], []
    for sid, series in data.items():
        if sid not in assignment.labels:
            continue
        k = int(assignment.labels[sid])
        if cluster_id is not None and k != int(cluster_id):
            continue
        for dc, parts in sensor_splits(cfg, series).items():
            samples += parts["gaps"]
            pairs += [(k, dc)] * len(parts["gaps"])
    if not samples:
        raise DataError("no days with gaps to impute")
    models = _load_models(cfg, set(pairs))
    seeds = [cfg.seed_for(f"search/{s.sensor_id}/{s.day}") for s in samples]
    results = _impute_with(models, cfg, samples, pairs, seeds)
    write_results_csv(results, out / "real_gaps.csv")
    write_results_json(results, out / "real_gaps.json")
    return results


def _score_or_nan(truth, imputed, mask):
    n = int(mask.sum())
    if not n:
        return {"mae": np.nan, "rmse": np.nan, "mre": np.nan, "mre_excluded": 0,
                "n_scored": 0}
    if not (truth[mask == 1] > 0).any():
        # MRE is undefined when every withheld truth value is zero
        return {"mae": mae(truth, imputed, mask), "rmse": rmse(truth, imputed, mask),
                "mre": np.nan, "mre_excluded": n, "n_scored": n}
    return score(truth, imputed, mask)


def _impute_sweep(cfg, data, assignment, mrs, cluster_id, out):
    """Corrupt test days at every MR and repetition, impute, score per cell.

    A cell is one (method, sensor, MR, repetition); its metrics pool the
    withheld positions of all that sensor's test days across day classes.
    """
    plan = []  # (sensor, cluster, day_class, test_days, ha_profile)
    for sid, series in data.items():
        if sid not in assignment.labels:
            continue
        k = int(assignment.labels[sid])
        if cluster_id is not None and k != int(cluster_id):
            continue
        for dc, parts in sensor_splits(cfg, series).items():
            test = parts["test"][:cfg.max_test_days] if cfg.max_test_days else parts["test"]
            if test and parts["train"]:
                plan.append((sid, k, dc, test, baselines.historical_profile(parts["train"])))
    if not plan:
        raise DataError("no held-out test days to evaluate")
    models = _load_models(cfg, {(k, dc) for _, k, dc, _, _ in plan})

    rows, errors, n_failed = [], {}, 0
    for mr in mrs:
        for rep in range(cfg.repetitions):
            samples, pairs, seeds, profiles = [], [], [], []
            for sid, k, dc, test, profile in plan:
                for s in test:
                    tag = f"{sid}/{s.day}/{mr!r}/{rep}"
                    samples.append(corrupt(s, CorruptionSpec(
                        mr, cfg.seed_for("corrupt/" + tag))))
                    pairs.append((k, dc))
                    seeds.append(cfg.seed_for("search/" + tag))
                    profiles.append(profile)
            results = _impute_with(models, cfg, samples, pairs, seeds)
            if rep == 0:
                write_results_csv(results, out / f"imputed_mr{mr:.2f}.csv")
            filled = {"gan": [], "historical_average": [], "mean_fill": []}
            for s, res, prof in zip(samples, results, profiles):
                if isinstance(res, ImputationFailure):
                    n_failed += 1
                    filled["gan"].append(None)
                else:
                    filled["gan"].append(res.imputed.values)
                filled["historical_average"].append(
                    baselines.historical_average_impute(s, prof).values)
                filled["mean_fill"].append(
                    baselines.mean_fill_impute(s).values if s.n_observed else None)
            for method in METHODS:
                for sid in dict.fromkeys(s.sensor_id for s in samples):
                    idx = [i for i, s in enumerate(samples) if s.sensor_id == sid
                           and filled[method][i] is not None]
                    if not idx:
                        continue
                    truth = np.concatenate([samples[i].ground_truth for i in idx])
                    imp = np.concatenate([filled[method][i] for i in idx])
                    mask = np.concatenate([eval_mask_of(samples[i]) for i in idx])
                    rows.append({"method": method, "sensor": sid,
                                 "cluster": int(assignment.labels[sid]),
                                 "mr": float(mr), "repetition": rep,
                                 "n_days": len(idx),
                                 **_score_or_nan(truth, imp, mask)})
                    if rep == 0 and mask.any():
                        errors.setdefault(f"{method}/{mr:.2f}", []).append(
                            np.abs(truth - imp)[mask == 1])
    cells = pd.DataFrame(rows)
    report = aggregate_report(cells, group_by=("method", "sensor"))
    report.write(out / "metrics")
    write_archive(out / "errors.zip", {"kind": "abs_errors", "repetition": 0},
                  {k: np.concatenate(v) for k, v in sorted(errors.items())})
    (out / "sweep.json").write_text(json.dumps(
        {"missing_rates": [float(m) for m in mrs], "repetitions": cfg.repetitions,
         "failed_samples": n_failed, "sensors": sorted({p[0] for p in plan})},
        indent=2, sort_keys=True))
    cmd_report(cfg)
    return report


# ---------------------------------------------------------------- evaluate / report

def _cells(cfg) -> pd.DataFrame:
    path = _dirs(cfg)["impute"] / "metrics_cells.csv"
    if not path.is_file():
        raise DataError(f"{path} not found; run 'gasfgan impute --sweep' first")
    return pd.read_csv(path, dtype={"sensor": str})


def cmd_evaluate(cfg: RunConfig) -> dict:
    """Aggregate the sweep cells by sensor, cluster and missing rate."""
    cells = _cells(cfg)
    out = _dirs(cfg)["evaluate"]
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for key in ("sensor", "cluster", "mr"):
        rep = aggregate_report(cells, group_by=("method", key))
        rep.aggregates.to_csv(out / f"by_{key}.csv", index=False)
        reports[key] = rep
    gan = cells[cells["method"] == "gan"]
    curve = gan.groupby("mr")[["mae", "rmse", "mre"]].mean()
    trend = {}
    if len(curve) >= 2:
        for m in ("mae", "rmse", "mre"):
            trend[m] = float(pd.Series(curve.index).corr(
                pd.Series(curve[m].values), method="spearman"))
    summary = {"overall": json.loads(
        cells.groupby("method")[["mae", "rmse", "mre"]].mean().to_json(orient="index")),
        "spearman_metric_vs_mr": trend}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return reports


def cmd_report(cfg: RunConfig) -> list[Path]:
    """Static figures from the sweep results and training logs."""
    out = _dirs(cfg)["report"]
    out.mkdir(parents=True, exist_ok=True)
    written = []
    cells = _cells(cfg)
    gan = cells[cells["method"] == "gan"]
    for metric in ("mae", "rmse", "mre"):
        p = out / f"{metric}_vs_mr.png"
        plot_mr_sweep(gan, p, metric)
        written.append(p)
    p = out / "sensor_mae.png"
    plot_sensor_summary(gan, p)
    written.append(p)
    err_path = _dirs(cfg)["impute"] / "errors.zip"
    if err_path.is_file():
        _, arrays, _ = read_archive(err_path)
        p = out / "error_cdf.png"
        plot_error_cdf({k: v for k, v in arrays.items() if k.startswith("gan/")}, p)
        written.append(p)
    for log_path in sorted(Path(cfg.output_dir).glob("cluster_*/*/trainlog.jsonl")):
        tl = TrainLog.read_jsonl(log_path)
        p = out / f"mmd_{log_path.parent.parent.name}_{log_path.parent.name}.png"
        _plot_mmd(tl, p)
        written.append(p)
    return written


def _plot_mmd(trainlog, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["epoch"] for r in trainlog.records], trainlog.mmd, marker=".")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MMD")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
