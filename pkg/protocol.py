"""
Continual slice protocol: train a learner slice by slice, evaluate it on every
slice seen so far, and aggregate over seeds. Also the pooled upper bound, the
ablation suite and the consolidated tables.
"""
import hashlib
import json
import os
from dataclasses import replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

import config
from baselines import MLP_DIRECT, TOC, TREE_BASELINE, make_learner
from errors import ConfigError, FingerprintMismatch, ProtocolError, TocError
from metrics import ACCURACY, AUROC, MetricMatrix, mean_se, safe_score, summarize_matrix
from models import RunReport, config_fingerprint, log_event
from nn_core import TrainControl
from replay import new_buffer
from tabular_data import Slice, load_prepared, synth_stream
from toc_model import save_checkpoint

METHOD_LABELS = {
    TOC: "Tree of Concepts",
    TREE_BASELINE: "Decision Tree",
    MLP_DIRECT: "MLP (direct, stand-in)",
}
SUITE = ("none", "no_replay", "no_concept_loss", "refresh_tree")
AUDIT_KEYS = ("node_agreement", "fidelity_gap", "contradiction_rate")


def load_stream(cfg):
    """The run's slice sequence: a prepared snapshot directory or a synthetic stream."""
    if cfg.dataset == "synthetic":
        return synth_stream(cfg.shift, cfg.synth_seed)
    return load_prepared(cfg.prepared_dir)


def train_control(cfg, seed):
    o = cfg.optim
    return TrainControl(max_epochs=o.max_epochs, patience=o.patience, batch_size=o.batch_size,
                        seed=seed, metric=cfg.metric)


def replay_quota(cfg, n_steps):
    if cfg.replay.quota is not None:
        return cfg.replay.quota
    return max(1, cfg.replay.capacity // n_steps) if cfg.replay.capacity > 0 else 0


def _score(cfg, learner, X, y, n_classes):
    if len(y) == 0:
        return None
    return safe_score(cfg.metric, learner.predict_scores(X), y, n_classes)


def _seen_test(slices):
    parts = [s.part("test") for s in slices]
    return np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _rules_hash(text):
    return None if text is None else hashlib.sha256(text.encode("utf-8")).hexdigest()


def _write_artifacts(out_dir, t, learner, rules, config_hash):
    os.makedirs(out_dir, exist_ok=True)
    if rules is not None:
        with open(os.path.join(out_dir, f"rules_step{t}.txt"), "w") as f:
            f.write(rules)
    snap = learner.snapshot()
    path = os.path.join(out_dir, f"checkpoint_step{t}.json")
    if learner.name == TOC:
        save_checkpoint(snap, path, config_hash)
    else:
        with open(path, "w") as f:
            json.dump({"learner": learner.name, "params": snap.to_dict(), "config_hash": config_hash},
                      f, sort_keys=True)


# ============================================================================
# One seed
# ============================================================================

def run_seed(cfg, stream, seed, ablation=None, artifact_dir=None):
    """Sequential protocol for one seed. Returns a JSON-ready dict."""
    ablation = ablation or cfg.ablation
    slices = stream.slices
    n_steps = len(slices)
    use_replay = cfg.replay.enabled and ablation != "no_replay"
    buffer = new_buffer(cfg.replay.capacity if use_replay else 0, cfg.replay.balanced, seed,
                        cfg.replay.balance_key)
    quota = replay_quota(cfg, n_steps)
    control = train_control(cfg, seed)
    config_hash = config_fingerprint(cfg)

    learner = make_learner(cfg, ablation)
    scaffold = pooled_slice(slices[:cfg.tree.fit_slices], f"{stream.name}:scaffold")
    try:
        learner.init(seed, stream.width, stream.n_classes, scaffold)
    except TocError as e:
        raise ProtocolError(f"learner init failed: {e.message}", step=1, seed=seed, cause=type(e).__name__)

    matrix = MetricMatrix(n_steps, cfg.metric)
    audits, rule_hashes, logs, undefined = [], [], [], []
    for t, slice_ in enumerate(slices, start=1):
        try:
            log = learner.train_slice(slice_, buffer, control)
            # M is updated after training on D_t, before evaluation
            concepts = learner.replay_concepts(slice_) if cfg.replay.balance_key == "concept" else None
            buffer.insert_after_slice(slice_, quota, concepts)

            for j, seen in enumerate(slices[:t], start=1):
                X_test, y_test = seen.part("test")
                value = _score(cfg, learner, X_test, y_test, stream.n_classes)
                if value is None:
                    undefined.append([t, j])
                matrix.set(t, j, value)

            X_seen, y_seen = _seen_test(slices[:t])
            audit = None
            if len(y_seen):
                audit = learner.audit(X_seen, y_seen, cfg.metric, stream.n_classes, cfg.tau,
                                      with_confusion=True)
            audits.append(None if audit is None else dict(step=t, **audit.to_dict()))

            rules = learner.rules(stream.preprocessor)
            rule_hashes.append(_rules_hash(rules))
            logs.append(None if log is None else log.to_dict())
            if cfg.write_artifacts and artifact_dir:
                _write_artifacts(artifact_dir, t, learner, rules, config_hash)
        except ProtocolError:
            raise
        except TocError as e:
            extra = {k: v for k, v in e.context.items() if k not in ("step", "seed", "cause")}
            raise ProtocolError(f"step {t} failed: {e.message}", step=t, seed=seed,
                                cause=type(e).__name__, **extra) from e

    hashes = [h for h in rule_hashes if h is not None]
    return {
        "seed": seed,
        "matrix": matrix.to_dict(),
        "summary": summarize_matrix(matrix),
        "undefined_entries": undefined,
        "audits": audits,
        "final_audit": audits[-1],
        "rule_hashes": rule_hashes,
        "rules_stable": len(set(hashes)) <= 1 if hashes else None,
        "train_logs": logs,
        "buffer": buffer.summary(),
    }


# ============================================================================
# Pooled upper bound
# ============================================================================

def pooled_slice(slices, name="pooled"):
    """Slices concatenated into one; split indices shifted, slice id 1."""
    if len(slices) == 1:
        return slices[0]
    offsets = np.cumsum([0] + [s.n_rows for s in slices[:-1]])

    def shifted(part):
        return np.concatenate([getattr(s, part) + off for s, off in zip(slices, offsets)]).astype(np.int64)

    return Slice(
        slice_id=1,
        rows=np.concatenate([s.rows for s in slices]),
        y=np.concatenate([s.y for s in slices]),
        provenance=name,
        X=np.vstack([s.X for s in slices]),
        train_idx=shifted("train_idx"),
        val_idx=shifted("val_idx"),
        test_idx=shifted("test_idx"),
    )


def upper_bound_seed(cfg, stream, seed, ablation=None):
    """Same learner and hyperparameters on the pooled train splits, no replay."""
    ablation = ablation or cfg.ablation
    pooled = pooled_slice(stream.slices, f"{stream.name}:pooled")
    learner = make_learner(cfg, None if ablation == "refresh_tree" else ablation)
    try:
        learner.init(seed, stream.width, stream.n_classes, pooled)
        learner.train_slice(pooled, new_buffer(0, seed=seed), train_control(cfg, seed))
    except TocError as e:
        raise ProtocolError(f"upper-bound training failed: {e.message}", seed=seed, cause=type(e).__name__)
    X, y = pooled.part("test")
    per_slice = [_score(cfg, learner, *s.part("test"), stream.n_classes) for s in stream.slices]
    return {"seed": seed, "pooled": _score(cfg, learner, X, y, stream.n_classes), "per_slice": per_slice}


def run_upper_bound(cfg, stream=None, n_jobs=None, ablation=None):
    """Full-data reference: mean ± SE over seeds plus the per-slice breakdown."""
    stream = stream or load_stream(cfg)
    results = Parallel(n_jobs=n_jobs or config.N_JOBS)(
        delayed(upper_bound_seed)(cfg, stream, seed, ablation) for seed in cfg.seed_list)
    mean, se = mean_se([r["pooled"] for r in results])
    per_slice = []
    for j in range(len(stream.slices)):
        m, s = mean_se([r["per_slice"][j] for r in results])
        per_slice.append({"slice": j + 1, "mean": m, "se": s})
    return {"mean": mean, "se": se, "values": [r["pooled"] for r in results], "per_slice": per_slice}


# ============================================================================
# Full runs
# ============================================================================

def _stat(values):
    mean, se = mean_se(values)
    return {"mean": mean, "se": se, "values": list(values)}


def aggregate(seeds):
    """Mean ± SE over seeds for the task aggregates and the final-step concept audit."""
    out = {key: _stat([s["summary"][key] for s in seeds]) for key in ("avg_past", "avg_current", "final_past")}
    audited = [s for s in seeds if s["final_audit"] is not None]
    if audited:
        for key in AUDIT_KEYS:
            out[key] = _stat([s["final_audit"][key] for s in audited])
        n_steps = len(audited[0]["audits"])
        out["audit_trajectory"] = [
            {key: mean_se([s["audits"][t][key] for s in audited if s["audits"][t]])[0] for key in AUDIT_KEYS}
            for t in range(n_steps)
        ]
    return out


def _notes(cfg, ablation):
    notes = []
    if cfg.learner == MLP_DIRECT:
        notes.append("mlp_direct is a direct-MLP stand-in for a deep tabular learner")
    if ablation == "no_concept_loss":
        notes.append("no_concept_loss: concept loss weight 0, label loss weight lam")
    if cfg.lam == 0:
        notes.append("lam=0: label loss removed, head receives no gradient")
    return notes


def run_protocol(cfg, stream=None, ablation=None, n_jobs=None, upper_bound=True):
    """Run every seed of one configuration and assemble the RunReport."""
    ablation = ablation or cfg.ablation
    stream = stream or load_stream(cfg)
    fingerprint = config_fingerprint(cfg)
    log_event("run_started", {"name": cfg.name, "learner": cfg.learner, "ablation": ablation,
                              "seeds": list(cfg.seed_list), "config_fingerprint": fingerprint})
    config.status(f"Running {cfg.name}: {cfg.learner}, {len(stream.slices)} slices, "
                  f"{len(cfg.seed_list)} seeds", level="info")

    def artifact_dir(seed):
        return os.path.join(cfg.output_dir, "artifacts", ablation, f"seed_{seed}")

    seeds = Parallel(n_jobs=n_jobs or config.N_JOBS)(
        delayed(run_seed)(cfg, stream, seed, ablation, artifact_dir(seed)) for seed in cfg.seed_list)
    for result in seeds:
        log_event("seed_finished", {"name": cfg.name, "seed": result["seed"], "buffer": result["buffer"],
                                    "avg_past": result["summary"]["avg_past"]})

    aggregates = aggregate(seeds)
    if upper_bound:
        aggregates["upper_bound"] = run_upper_bound(cfg, stream, n_jobs, ablation)

    use_replay = cfg.replay.enabled and ablation != "no_replay" and cfg.replay.capacity > 0
    report = RunReport(
        name=cfg.name,
        learner=cfg.learner,
        replay=use_replay,
        ablation=ablation,
        metric=cfg.metric,
        dataset=stream.name,
        dataset_fingerprint=stream.fingerprint,
        config_fingerprint=fingerprint,
        config=cfg.to_dict(),
        seeds=seeds,
        aggregates=aggregates,
        notes=_notes(cfg, ablation),
    )
    log_event("run_finished", {"name": cfg.name, "avg_past": aggregates["avg_past"]["mean"],
                               "avg_current": aggregates["avg_current"]["mean"]})
    config.status(f"Finished {cfg.name}: past {aggregates['avg_past']['mean']}, "
                  f"current {aggregates['avg_current']['mean']}")
    return report


def run_baseline(cfg, stream=None, n_jobs=None):
    if cfg.learner not in (TREE_BASELINE, MLP_DIRECT):
        raise ConfigError(f"run_baseline expects a baseline learner, got '{cfg.learner}'", field="learner")
    return run_protocol(cfg, stream, n_jobs=n_jobs)


def run_ablation_suite(base, n_jobs=None):
    """Component ablations on the base dataset, then the capacity sweep on the synthetic stream."""
    if base.learner != TOC:
        raise ConfigError("the ablation suite runs on the toc learner", field="learner")
    stream = load_stream(base)
    reports = []
    for tag in SUITE:
        cfg = replace(base, ablation=tag, name=f"{base.name}:{tag}").validate()
        log_event("ablation_step", {"name": cfg.name, "ablation": tag})
        reports.append(run_protocol(cfg, stream, n_jobs=n_jobs))

    shift = base.sweep_shift
    sweep_stream = synth_stream(shift, base.synth_seed)
    for capacity in base.capacity_sweep:
        cfg = replace(
            base,
            name=f"{base.name}:capacity_{capacity}",
            dataset="synthetic",
            prepared_dir=None,
            shift=shift,
            metric=AUROC if shift.K == 2 else ACCURACY,
            ablation="capacity_sweep",
            replay=replace(base.replay, enabled=capacity > 0, capacity=capacity, quota=None),
        ).validate()
        log_event("ablation_step", {"name": cfg.name, "ablation": "capacity_sweep", "capacity": capacity})
        reports.append(run_protocol(cfg, sweep_stream, n_jobs=n_jobs, upper_bound=False))
    return reports


# ============================================================================
# Tables & plot data
# ============================================================================

def _fmt(stat):
    if not stat or stat.get("mean") is None:
        return ""
    if stat.get("se") is None:
        return f"{stat['mean']:.3f}"
    return f"{stat['mean']:.3f} ± {stat['se']:.3f}"


def method_label(report):
    label = METHOD_LABELS.get(report.learner, report.learner)
    if report.ablation not in ("none", "no_replay"):
        label = f"{label} [{report.ablation}]"
    return label


def check_fingerprints(reports):
    """Reports merged into one table must share one dataset snapshot."""
    by_dataset = {}
    for report in reports:
        seen = by_dataset.setdefault(report.dataset, report.dataset_fingerprint)
        if seen != report.dataset_fingerprint:
            raise FingerprintMismatch(f"reports for '{report.dataset}' were run on different data snapshots",
                                      report=report.name)


def table_rows(reports):
    """Method / Replay / Full-data UB / Avg. Past-Task / Avg. Current-Task."""
    check_fingerprints(reports)
    rows = []
    for report in reports:
        agg = report.aggregates
        rows.append({
            "Method": method_label(report),
            "Replay": "yes" if report.replay else "no",
            "Full-data UB": _fmt(agg.get("upper_bound")),
            "Avg. Past-Task": _fmt(agg["avg_past"]),
            "Avg. Current-Task": _fmt(agg["avg_current"]),
        })
    return rows


def ablation_rows(reports):
    rows = []
    for report in reports:
        agg = report.aggregates
        rows.append({
            "Variant": report.name,
            "Ablation": report.ablation,
            "Replay capacity": report.config["replay"]["capacity"] if report.replay else 0,
            "Avg. Past-Task": _fmt(agg["avg_past"]),
            "Avg. Current-Task": _fmt(agg["avg_current"]),
            "Node agreement": _fmt(agg.get("node_agreement")),
            "Fidelity gap": _fmt(agg.get("fidelity_gap")),
            "Contradiction": _fmt(agg.get("contradiction_rate")),
        })
    return rows


def write_table(rows, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    pd.DataFrame(rows).to_csv(path, index=False)
    return path


def plot_points(reports):
    """One stability-plasticity point per report; no-replay/replay pairs share a segment id."""
    rows = []
    for report in reports:
        rows.append({
            "method": method_label(report),
            "replay": report.replay,
            "x": report.aggregates["avg_current"]["mean"],
            "y": report.aggregates["avg_past"]["mean"],
            "segment": None,
        })
    segment = 0
    for method in dict.fromkeys(r["method"] for r in rows):
        group = [r for r in rows if r["method"] == method]
        flags = {r["replay"] for r in group}
        if flags == {True, False}:
            segment += 1
            for r in group:
                r["segment"] = segment
    frame = pd.DataFrame(rows, columns=["method", "replay", "x", "y", "segment"])
    frame["segment"] = frame["segment"].astype("Int64")
    return frame
