"""End-to-end pipelines behind the CLI: train -> tune -> attack -> report.

Every run directory holds ``config.ini`` (resolved), ``metrics.json``,
``trace.csv``, ``sweep.csv`` and ``target.snap`` / ``shadow.snap``. All
randomness is derived from the run seed, so a (config, seed) pair fixes
every byte written.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attacks import ATTACKS, build_query_set, run_attack_battery
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .data import gen_synthetic, load_csv, six_split
from .metrics import summarize
from .nn import ModelSpec, evaluate, init_model
from .snapshot import load_snapshot, save_snapshot
from .tuning import (
    PastConfig,
    TuningTrace,
    leak_pair,
    loss_gap,
    lossgap_reg_tune,
    member_sample,
    past_tune,
    privacy_sensitivity,
    sensitivity_concentration,
    standard_train,
    uniform_reg_tune,
)

log = logging.getLogger(__name__)

SIDES = ("target", "shadow")
HIST_BINS = np.logspace(-8, 1, 65)
SHARE_QUANTILES = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
BELOW_THRESHOLDS = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


def derive_seed(seed: int, tag: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(tag.encode())]).generate_state(1)[0])


# ---------------------------------------------------------------- setup


def load_dataset(cfg: ExperimentConfig):
    if cfg.data.source == "synthetic":
        return gen_synthetic(cfg.data.synthetic, derive_seed(cfg.seed, "data"))
    return load_csv(cfg.data.csv_path, cfg.data.has_header)


def prepare(cfg: ExperimentConfig):
    data = load_dataset(cfg)
    split = six_split(data, derive_seed(cfg.seed, "split"))
    spec = ModelSpec(data.dim, cfg.layer_widths, data.num_classes, cfg.activation)
    return split, spec


def query_sets(cfg: ExperimentConfig, split):
    q = build_query_set(split.target_train, split.target_test, derive_seed(cfg.seed, "query/target"), cfg.query_size)
    sq = build_query_set(split.shadow_train, split.shadow_test, derive_seed(cfg.seed, "query/shadow"), cfg.query_size)
    return q, sq


def resolved_pipeline(cfg: ExperimentConfig, point: dict) -> dict:
    """Everything that shapes a model's training, minus which data side it sees."""
    o = cfg.optim
    return {
        "layer_widths": list(cfg.layer_widths),
        "activation": cfg.activation,
        "lr0": o.lr0,
        "momentum": o.momentum,
        "weight_decay": o.weight_decay,
        "batch_size": o.batch_size,
        "tuning_lr0": cfg.tuning_lr0,
        "standard_epochs": cfg.standard_epochs,
        "tuning_epochs": cfg.tuning_epochs,
        "gap_batch_limit": cfg.defense.gap_batch_limit,
        **point,
    }


# ---------------------------------------------------------------- stages


def train_base(cfg: ExperimentConfig, split, spec):
    out = {}
    for side in SIDES:
        train, test, _ = split.side(side)
        params = init_model(spec, derive_seed(cfg.seed, f"init/{side}"))
        out[side] = standard_train(params, spec, train, test, cfg.standard_epochs, cfg.optim,
                                   seed=derive_seed(cfg.seed, f"batches/{side}"), infer_pair=leak_pair(split, side))
        log.info("%s base: %s", side, _fmt_record(out[side][1][-1]))
    return out


def defense_points(cfg: ExperimentConfig) -> list[dict]:
    """Expand the defense grid to concrete hyperparameter points."""
    d = cfg.defense
    if d.name == "none":
        return [{"defense": "none"}]
    if d.name == "past":
        if not d.alpha:
            raise ConfigError("defense.alpha", "defense = past requires alpha")
        return [{"defense": "past", "lambda": lam, "alpha": a} for lam, a in itertools.product(d.lam, d.alpha)]
    if d.name in ("l1", "l2"):
        return [{"defense": d.name, "lambda": lam} for lam in d.lam]
    return [{"defense": "lossgap", "mu": d.mu}]


def apply_defense(cfg: ExperimentConfig, point: dict, params, spec, split, side: str):
    name = point["defense"]
    opt = cfg.tuning_optim()
    seed = derive_seed(cfg.seed, f"tune/{side}")
    if name == "none":
        return params, TuningTrace()
    if name == "past":
        pc = PastConfig(lam=point["lambda"], alpha=point["alpha"], tuning_epochs=cfg.tuning_epochs,
                        standard_epochs=cfg.standard_epochs, gap_batch_limit=cfg.defense.gap_batch_limit)
        return past_tune(params, spec, split, pc, opt, seed=seed, side=side)
    if name in ("l1", "l2"):
        return uniform_reg_tune(params, spec, split, point["lambda"], int(name[1]), cfg.tuning_epochs, opt,
                                seed=seed, side=side)
    if name == "lossgap":
        return lossgap_reg_tune(params, spec, split, point["mu"], cfg.tuning_epochs, opt, seed=seed, side=side)
    raise ConfigError("defense.name", f"unknown defense {name!r}")


def tune_pair(cfg, point, base: dict, spec, split):
    """Apply one defense point to both target and shadow (adaptive attacker)."""
    out = {}
    pipelines = {}
    for side in SIDES:
        out[side] = apply_defense(cfg, point, base[side], spec, split, side)
        pipelines[side] = resolved_pipeline(cfg, point)
    if pipelines["target"] != pipelines["shadow"]:
        raise RuntimeError("shadow pipeline diverged from target pipeline")
    return out, pipelines


def evaluate_pair(cfg, spec, split, target, shadow, trace=None):
    q, sq = query_sets(cfg, split)
    report = run_attack_battery(target, shadow, spec, q, sq, seed=derive_seed(cfg.seed, "nn_attack"))
    te = evaluate(target, spec, split.target_test)
    tr = evaluate(target, spec, split.target_train)
    evals = {"test_accuracy": te.accuracy, "loss_gap": abs(tr.mean_loss - te.mean_loss)}
    summary = summarize(trace, report, evals, target)
    extras = {
        "train_accuracy": tr.accuracy,
        "infer_gap": loss_gap(target, spec, split.target_inference, split.shadow_test),
        "attack_accuracy": report.accuracies,
        "max_attack": report.max_attack,
        "query_size": {"members": int(q.membership.sum()), "nonmembers": int((1 - q.membership).sum())},
    }
    return summary, report, extras


# ---------------------------------------------------------------- artifacts

TRACE_FIELDS = ["side", "phase", "epoch", "global_epoch", "lr", "loss_gap", "train_acc", "test_acc",
                "gini", "near_zero_fraction", "infer_gap"]
SWEEP_FIELDS = ["defense", "lambda", "alpha", "mu", "status", "test_acc", "train_acc"] + \
    [f"adv_{a}" for a in ATTACKS] + ["max_adv", "p1", "loss_gap", "infer_gap", "gini", "near_zero_fraction"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _fmt_record(r):
    return (f"epoch {r.epoch} gap {r.loss_gap:.4f} train_acc {r.train_acc:.4f} "
            f"test_acc {r.test_acc:.4f} nzf {r.near_zero_fraction:.4f}")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n")


def trace_rows(traces: dict, offsets: dict | None = None) -> list[dict]:
    rows = []
    for side, trace in traces.items():
        off = (offsets or {}).get(side, 0)
        for r in trace.records:
            row = {
                "side": side, "phase": r.phase, "epoch": r.epoch, "global_epoch": off + r.epoch,
                "lr": r.lr, "loss_gap": r.loss_gap, "train_acc": r.train_acc, "test_acc": r.test_acc,
                "gini": r.gini, "near_zero_fraction": r.near_zero_fraction, "infer_gap": r.infer_gap,
            }
            for name, v in r.module_sensitivity.items():
                row[f"sens:{name}"] = v
            rows.append(row)
    return rows


def write_csv(path, rows: list[dict], fields: list[str]) -> None:
    extra = []
    for row in rows:
        for k in row:
            if k not in fields and k not in extra:
                extra.append(k)
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields + extra, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in fields + extra})


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def sweep_row(point: dict, summary=None, extras=None, error=None) -> dict:
    row = {"defense": point["defense"], "lambda": point.get("lambda"), "alpha": point.get("alpha"),
           "mu": point.get("mu")}
    if error is not None:
        row["status"] = f"error: {error}"
        return row
    row.update({
        "status": "ok",
        "test_acc": summary.test_accuracy,
        "train_acc": extras["train_accuracy"],
        "max_adv": summary.max_advantage,
        "p1": summary.p1,
        "loss_gap": summary.loss_gap,
        "infer_gap": extras["infer_gap"],
        "gini": summary.gini,
        "near_zero_fraction": summary.near_zero_fraction,
    })
    for a, v in summary.per_attack_advantage.items():
        row[f"adv_{a}"] = v
    return row


def _write_run(out: Path, cfg, stage, models, spec, traces, rows, metrics, trace_offsets=None):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg))
    for side in SIDES:
        save_snapshot(out / f"{side}.snap", models[side], spec, {"side": side, "stage": stage})
    write_csv(out / "trace.csv", trace_rows(traces, trace_offsets), TRACE_FIELDS)
    write_csv(out / "sweep.csv", rows, SWEEP_FIELDS)
    write_json(out / "metrics.json", metrics)


def _metrics_doc(stage, cfg, point, summary, extras, pipelines):
    return {
        "stage": stage,
        "seed": cfg.seed,
        "point": point,
        "summary": summary.to_dict(),
        **extras,
        "pipeline": pipelines,
        "shadow_matches_target": pipelines["target"] == pipelines["shadow"],
    }


def _load_pair(snapshot_dir: Path):
    models = {}
    spec = None
    for side in SIDES:
        params, spec, _ = load_snapshot(snapshot_dir / f"{side}.snap")
        models[side] = params
    return models, spec


def _check_spec(spec, snap_spec):
    if spec != snap_spec:
        raise ConfigError("--snapshot", f"snapshot model {snap_spec} does not match config model {spec}")


# ---------------------------------------------------------------- commands


def cmd_train(cfg: ExperimentConfig, out) -> dict:
    out = Path(out)
    split, spec = prepare(cfg)
    base = train_base(cfg, split, spec)
    models = {s: base[s][0] for s in SIDES}
    traces = {s: base[s][1] for s in SIDES}
    point = {"defense": "none"}
    pipelines = {s: resolved_pipeline(cfg, point) for s in SIDES}
    summary, _, extras = evaluate_pair(cfg, spec, split, models["target"], models["shadow"], traces["target"])
    metrics = _metrics_doc("train", cfg, point, summary, extras, pipelines)
    _write_run(out, cfg, "train", models, spec, traces, [sweep_row(point, summary, extras)], metrics)
    return metrics


def cmd_tune(cfg: ExperimentConfig, snapshot, out) -> dict:
    snapshot, out = Path(snapshot), Path(out)
    points = defense_points(cfg)
    if len(points) != 1:
        raise ConfigError("defense", f"tune takes a single hyperparameter point, got {len(points)}; use sweep")
    point = points[0]
    split, spec = prepare(cfg)
    base, snap_spec = _load_pair(snapshot)
    _check_spec(spec, snap_spec)
    tuned, pipelines = tune_pair(cfg, point, base, spec, split)
    models = {s: tuned[s][0] for s in SIDES}
    traces = {s: tuned[s][1] for s in SIDES}
    summary, _, extras = evaluate_pair(cfg, spec, split, models["target"], models["shadow"], traces["target"])
    metrics = _metrics_doc("tune", cfg, point, summary, extras, pipelines)
    offsets = {}
    base_trace = snapshot / "trace.csv"
    prior = read_csv(base_trace) if base_trace.exists() else []
    for side in SIDES:
        offsets[side] = sum(1 for r in prior if r["side"] == side)
    _write_run(out, cfg, "tune", models, spec, traces, [sweep_row(point, summary, extras)], metrics, offsets)
    if prior:
        # prepend the standard phase so the trace spans the whole schedule
        current = read_csv(out / "trace.csv")
        fields = list(current[0].keys()) if current else TRACE_FIELDS
        write_csv(out / "trace.csv", prior + current, fields)
    return metrics


def cmd_attack(cfg: ExperimentConfig, snapshot, out) -> dict:
    snapshot, out = Path(snapshot), Path(out)
    split, spec = prepare(cfg)
    models, snap_spec = _load_pair(snapshot)
    _check_spec(spec, snap_spec)
    summary, report, extras = evaluate_pair(cfg, spec, split, models["target"], models["shadow"])
    point = {"defense": cfg.defense.name}
    pipelines = {s: resolved_pipeline(cfg, point) for s in SIDES}
    metrics = _metrics_doc("attack", cfg, point, summary, extras, pipelines)
    metrics["thresholds"] = {
        "directions": report.thresholds.directions,
        "global": report.thresholds.global_thresholds,
        "per_class": {m: {str(k): v for k, v in t.items()} for m, t in report.thresholds.per_class.items()},
    }
    prior = read_csv(snapshot / "trace.csv") if (snapshot / "trace.csv").exists() else []
    _write_run(out, cfg, "attack", models, spec, {}, [sweep_row(point, summary, extras)], metrics)
    if prior:
        # carry the training history forward for report
        write_csv(out / "trace.csv", prior, list(prior[0].keys()))
    return metrics


def cmd_sweep(cfg: ExperimentConfig, out) -> dict:
    """Train one base pair, then tune + attack once per grid point."""
    out = Path(out)
    split, spec = prepare(cfg)
    base = train_base(cfg, split, spec)
    base_models = {s: base[s][0] for s in SIDES}
    base_summary, _, base_extras = evaluate_pair(cfg, spec, split, base_models["target"], base_models["shadow"])
    rows, points_doc = [], []
    models, traces = base_models, {s: base[s][1] for s in SIDES}
    for point in defense_points(cfg):
        try:
            tuned, pipelines = tune_pair(cfg, point, base_models, spec, split)
            t, s = tuned["target"][0], tuned["shadow"][0]
            summary, _, extras = evaluate_pair(cfg, spec, split, t, s, tuned["target"][1])
            rows.append(sweep_row(point, summary, extras))
            points_doc.append(_metrics_doc("sweep", cfg, point, summary, extras, pipelines))
            models = {"target": t, "shadow": s}
            log.info("sweep %s: acc %.4f max adv %.4f", point, summary.test_accuracy, summary.max_advantage)
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            log.warning("sweep point %s failed: %s", point, exc)
            rows.append(sweep_row(point, error=str(exc)))
            points_doc.append({"point": point, "error": str(exc)})
    base_pipes = {s: resolved_pipeline(cfg, {"defense": "none"}) for s in SIDES}
    metrics = {
        "stage": "sweep",
        "seed": cfg.seed,
        "baseline": _metrics_doc("train", cfg, {"defense": "none"}, base_summary, base_extras, base_pipes),
        "points": points_doc,
    }
    # snapshots hold the last successful grid point (or the base pair)
    _write_run(out, cfg, "sweep", models, spec, traces, rows, metrics)
    return metrics


def _hist_rows(label, values):
    mags = np.clip(np.abs(values), HIST_BINS[0], HIST_BINS[-1])
    counts, _ = np.histogram(mags, bins=HIST_BINS)
    return [{"run": label, "bin_lo": float(lo), "bin_hi": float(hi), "count": int(c)}
            for lo, hi, c in zip(HIST_BINS[:-1], HIST_BINS[1:], counts)]


def cmd_report(run_dirs, out) -> list[Path]:
    """Write CSV plot series for one or more run directories."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    gap_rows, gini_rows, hist_rows, sens_hist, share_rows, module_rows, scatter = [], [], [], [], [], [], []
    for run in map(Path, run_dirs):
        for name in ("config.ini", "trace.csv", "sweep.csv", "target.snap"):
            if not (run / name).exists():
                raise FileNotFoundError(f"missing artifact {run / name}")
        label = run.name
        cfg = load_config(run / "config.ini")
        for r in read_csv(run / "trace.csv"):
            common = {"run": label, "side": r["side"], "phase": r["phase"], "epoch": r["global_epoch"]}
            gap_rows.append({**common, "loss_gap": r["loss_gap"], "infer_gap": r["infer_gap"],
                             "train_acc": r["train_acc"], "test_acc": r["test_acc"]})
            gini_rows.append({**common, "gini": r["gini"], "near_zero_fraction": r["near_zero_fraction"]})
            for k, v in r.items():
                if k.startswith("sens:") and v != "":
                    module_rows.append({**common, "module": k[5:], "mean_sensitivity": v})
        params, spec, _ = load_snapshot(run / "target.snap")
        hist_rows.extend(_hist_rows(label, params.values))

        split, _ = prepare(cfg)
        infer = split.target_inference
        members = member_sample(split.target_train, len(infer), derive_seed(cfg.seed, "tune/target"))
        raw = privacy_sensitivity(params, spec, members, infer)
        if np.any(raw > 0):
            lo = max(raw[raw > 0].min(), 1e-16)
            bins = np.logspace(np.log10(lo), np.log10(raw.max()), 65)
            counts, _ = np.histogram(np.clip(raw, bins[0], bins[-1]), bins=bins)
            sens_hist.extend({"run": label, "bin_lo": float(a), "bin_hi": float(b), "count": int(c)}
                             for a, b, c in zip(bins[:-1], bins[1:], counts))
            below, share = sensitivity_concentration(raw)
            share_rows.extend({"run": label, "kind": "top_quantile_share", "x": q, "value": share(q)}
                              for q in SHARE_QUANTILES)
            share_rows.extend({"run": label, "kind": "fraction_below", "x": t, "value": below(t)}
                              for t in BELOW_THRESHOLDS)
        for r in read_csv(run / "sweep.csv"):
            scatter.append({"run": label, **{k: r.get(k, "") for k in
                                             ("defense", "lambda", "alpha", "mu", "status", "test_acc",
                                              "max_adv", "adv_loss", "p1")}})

    files = {
        "loss_gap_vs_epoch.csv": (gap_rows, ["run", "side", "phase", "epoch", "loss_gap", "infer_gap",
                                             "train_acc", "test_acc"]),
        "gini_vs_epoch.csv": (gini_rows, ["run", "side", "phase", "epoch", "gini", "near_zero_fraction"]),
        "weight_histogram.csv": (hist_rows, ["run", "bin_lo", "bin_hi", "count"]),
        "sensitivity_histogram.csv": (sens_hist, ["run", "bin_lo", "bin_hi", "count"]),
        "sensitivity_shares.csv": (share_rows, ["run", "kind", "x", "value"]),
        "module_sensitivity.csv": (module_rows, ["run", "side", "phase", "epoch", "module", "mean_sensitivity"]),
        "utility_privacy.csv": (scatter, ["run", "defense", "lambda", "alpha", "mu", "status", "test_acc",
                                          "max_adv", "adv_loss", "p1"]),
    }
    written = []
    for name, (rows, fields) in files.items():
        write_csv(out / name, rows, fields)
        written.append(out / name)
    return written


def override(cfg: ExperimentConfig, seed=None, defense=None, alpha=None, lam=None, out=None) -> ExperimentConfig:
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    kw = {}
    if defense is not None:
        kw["name"] = defense
    if alpha is not None:
        kw["alpha"] = tuple(alpha)
    if lam is not None:
        kw["lam"] = tuple(lam)
    if kw:
        cfg = cfg.with_defense(**kw)
    if out is not None:
        cfg = replace(cfg, out_dir=str(out))
    if cfg.defense.name == "past" and not cfg.defense.alpha:
        raise ConfigError("defense.alpha", "defense = past requires alpha")
    return cfg
