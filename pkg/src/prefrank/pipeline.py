"""Pipeline stages behind the CLI: each one reads artifacts, writes
artifacts plus a run manifest, and is deterministic given its seed."""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

import numpy as np

from . import bayesopt, dataset, face, imaging, manifest, model, ranking
from .errors import IoError

# pool composition: share harvested from short intensity-guided BO runs
# (two per emotion), the rest split between feature-space and raw-actuator
# Sobol fillers (feature-space coverage teaches the model where expressions
# degrade, raw Sobol mirrors plain parameter sampling).
BO_SHARE = 0.5
FEATURE_FILL_SHARE = 2 / 3
MIN_BO_BUDGET = 6


def vector_from_features(phi, dim: int = face.DEFAULT_DIM) -> np.ndarray:
    """Actuator vector whose groups sit constantly at the given feature values."""
    v = np.empty(dim)
    for g, sl in enumerate(face.actuator_groups(dim)):
        v[sl] = phi[g]
    return v


def generate_pool_vectors(count: int, seed: int, dim: int = face.DEFAULT_DIM,
                          emotions=face.TRAINABLE_EMOTIONS) -> list[np.ndarray]:
    if count < 1:
        raise IoError("pool count must be >= 1")
    vectors: list[np.ndarray] = []
    runs = 2 * len(emotions)
    per_run = int(count * BO_SHARE) // runs if runs else 0
    if per_run >= MIN_BO_BUDGET:
        for i, emotion in enumerate(emotions):
            objective = bayesopt.latent_objective(emotion, dim=dim)
            for rep in range(2):
                _, trace = bayesopt.optimize(
                    objective, dim=dim, budget=per_run,
                    init=max(2, per_run // 3), seed=seed + 10 * i + rep)
                vectors.extend(it.x for it in trace.iterations)
    remaining = count - len(vectors)
    n_feature = int(remaining * FEATURE_FILL_SHARE)
    if n_feature:
        for phi in bayesopt.sobol_samples(face.NUM_FEATURES, n_feature, seed + 1009):
            vectors.append(vector_from_features(phi, dim))
    n_raw = count - len(vectors)
    if n_raw:
        vectors.extend(bayesopt.sobol_samples(dim, n_raw, seed + 2003))
    return vectors[:count]


def gen_pool(out_dir, count: int = 500, seed: int = 0,
             dim: int = face.DEFAULT_DIM) -> Path:
    """Render a candidate pool; writes pool.jsonl, pool/{id:04}.png, manifest."""
    started = time.time()
    out_dir = Path(out_dir)
    image_dir = out_dir / "pool"
    image_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, v in enumerate(generate_pool_vectors(count, seed, dim)):
        img = face.render(v)
        rel = f"pool/{i:04d}.png"
        imaging.write_image(out_dir / rel, img)
        entries.append(dataset.PoolEntry(
            entry_id=i, actuators=np.asarray(v), image_path=rel,
            sha256=manifest.sha256_file(out_dir / rel)))
    pool = dataset.CandidatePool(entries)
    pool_path = out_dir / dataset.POOL_MANIFEST
    dataset.save_pool(pool, pool_path)
    outputs = {e.image_path: e.sha256 for e in entries}
    outputs[dataset.POOL_MANIFEST] = manifest.sha256_file(pool_path)
    manifest.write_manifest(out_dir, "gen-pool",
                            {"count": count, "dim": dim}, {}, outputs,
                            seed, started)
    return pool_path


def select_subset(pool_path, out_dir, k: int = 100) -> Path:
    """Diversity-select k entries; writes subset.jsonl, pairs.csv, manifest."""
    started = time.time()
    pool_path = Path(pool_path)
    out_dir = Path(out_dir)
    manifest.verify_input_manifest(pool_path)
    pool = dataset.load_pool(pool_path)
    subset = dataset.select_diverse(pool, k)
    # keep image paths resolvable from the subset manifest's directory
    out_dir.mkdir(parents=True, exist_ok=True)
    rebased = []
    for e in subset.entries:
        rel = None
        if e.image_path:
            rel = os.path.relpath(pool_path.parent / e.image_path, out_dir)
        rebased.append(dataset.PoolEntry(e.entry_id, e.actuators, rel, e.sha256))
    subset = dataset.CandidatePool(rebased)
    subset_path = out_dir / "subset.jsonl"
    dataset.save_pool(subset, subset_path)
    pairs = dataset.enumerate_pairs(subset)
    pairs_path = out_dir / dataset.PAIRS_CSV
    dataset.save_pairs(pairs, pairs_path)
    manifest.write_manifest(
        out_dir, "select", {"k": k, "pairs": len(pairs)},
        {str(pool_path): manifest.sha256_file(pool_path)},
        {p.name: manifest.sha256_file(p) for p in (subset_path, pairs_path)},
        None, started)
    return subset_path


def annotate_synthetic(subset_path, emotion, out_dir, annotator: str = "synthetic",
                       seed: int = 0, latent_seed: int = 0) -> Path:
    """Complete a session with the synthetic intensity oracle; write its log."""
    started = time.time()
    subset_path = Path(subset_path)
    out_dir = Path(out_dir)
    manifest.verify_input_manifest(subset_path)
    emotion = face.Emotion.parse(emotion)
    pool = dataset.load_pool(subset_path)
    session = ranking.SortSession(pool.ids(), emotion, annotator, seed)
    oracle = ranking.latent_oracle(pool, emotion, seed=latent_seed)
    # timestamps pinned to 0.0 so synthetic runs hash identically
    session.run_with_oracle(oracle, timestamp=0.0)
    consistency = ranking.consistency_check(session.result, session.log)
    session_path = out_dir / ranking.session_filename(annotator, emotion)
    ranking.save_session(session, session_path)
    manifest.write_manifest(
        out_dir, f"annotate-{emotion.value}",
        {"annotator": annotator, "mode": "synthetic",
         "comparisons": session.answered_count(), "consistency": consistency},
        {str(subset_path): manifest.sha256_file(subset_path)},
        {session_path.name: manifest.sha256_file(session_path)},
        seed, started, name=f"manifest-annotate-{emotion.value}.json")
    return session_path


def load_session_rankings(session_paths) -> tuple[list[ranking.Ranking], str]:
    """Completed rankings from session files; returns (rankings, emotion)."""
    rankings = []
    emotion = None
    for path in session_paths:
        session = ranking.load_session(path)
        if not session.completed:
            raise IoError(f"session not complete: {path}")
        if emotion is None:
            emotion = session.emotion
        elif emotion != session.emotion:
            raise IoError(f"sessions mix emotions ({emotion} vs {session.emotion})")
        rankings.append(session.result)
    if not rankings:
        raise IoError("no sessions supplied")
    return rankings, emotion


DEFAULT_MODEL_KWARGS = dict(sigmoid_scale=20.0, hidden_dim=64, dtype="float32")


def train_stage(subset_path, session_paths, out_dir, folds: int = 5,
                config: model.TrainConfig | None = None,
                holdout_fraction: float = 0.15, **ranker_kwargs) -> Path:
    """Cross-validate, then train the deployable model on a fresh split.

    Writes model-{emotion}.json (checkpoint) and train-{emotion}.json
    (config, fold splits, per-epoch losses, accuracies).
    """
    started = time.time()
    subset_path = Path(subset_path)
    out_dir = Path(out_dir)
    config = (config or model.TrainConfig()).validate()
    kwargs = {**DEFAULT_MODEL_KWARGS, **ranker_kwargs}
    manifest.verify_input_manifest(subset_path)
    pool = dataset.load_pool(subset_path)
    rankings, emotion = load_session_rankings(session_paths)
    bank = model.preprocess_pool(pool)
    cv = model.kfold_cv(pool, rankings, emotion, k=folds, config=config,
                        bank=bank, **kwargs)

    # final model: image-level holdout for early stopping, train on the rest
    ids = pool.ids()
    row_of = {item: i for i, item in enumerate(ids)}
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(ids))
    n_val = max(2, int(round(holdout_fraction * len(ids))))
    val_ids = [ids[i] for i in perm[:n_val]]
    train_ids = [ids[i] for i in perm[n_val:]]
    lp_train = model.build_labels(rankings, dataset.enumerate_pairs(train_ids))
    lp_val = model.build_labels(rankings, dataset.enumerate_pairs(val_ids))
    rows = lambda prs: np.array([[row_of[a], row_of[b]] for a, b in prs], dtype=int)
    final = model.PreferenceRanker(
        target_emotion=emotion, seed=config.seed,
        learning_rate=config.learning_rate, weight_decay=config.weight_decay,
        momentum=config.momentum, epochs=config.epochs,
        batch_size=config.batch_size, patience=config.patience, **kwargs)
    final.fit(bank, rows(lp_train.pairs), lp_train.labels,
              rows(lp_val.pairs), lp_val.labels)
    holdout_accuracy = final.score(bank, rows(lp_val.pairs), lp_val.labels)

    model_path = out_dir / f"model-{emotion}.json"
    model.save_model(final, model_path)
    report = {
        "emotion": emotion,
        "config": {
            "learning_rate": config.learning_rate,
            "weight_decay": config.weight_decay,
            "momentum": config.momentum,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "patience": config.patience,
            "seed": config.seed,
            **{k: str(v) for k, v in kwargs.items()},
        },
        "folds": folds,
        "fold_val_ids": cv.fold_val_ids,
        "fold_pair_counts": cv.fold_pair_counts,
        "fold_accuracies": cv.fold_accuracies,
        "mean_accuracy": cv.mean_accuracy,
        "dropped_pairs": cv.dropped_pairs,
        "fold_histories": cv.histories,
        "final_holdout_accuracy": holdout_accuracy,
        "final_history": final.history_,
    }
    report_path = out_dir / f"train-{emotion}.json"
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n",
                           encoding="utf-8")
    inputs = {str(subset_path): manifest.sha256_file(subset_path)}
    for p in session_paths:
        inputs[str(p)] = manifest.sha256_file(p)
    manifest.write_manifest(
        out_dir, f"train-{emotion}",
        report["config"] | {"mean_accuracy": cv.mean_accuracy},
        inputs,
        {p.name: manifest.sha256_file(p) for p in (model_path, report_path)},
        config.seed, started, name=f"manifest-train-{emotion}.json")
    return model_path


def optimize_stage(model_path, out_dir, budget: int = 300, init: int = 20,
                   seed: int = 0) -> dict:
    """Run BO with a trained model as objective; write trace + best artifacts."""
    started = time.time()
    model_path = Path(model_path)
    out_dir = Path(out_dir)
    manifest.verify_input_manifest(model_path)
    mdl = model.load_model(model_path)
    emotion = face.Emotion.parse(mdl.target_emotion).value
    objective = bayesopt.preference_objective(mdl)
    best_x, trace = bayesopt.optimize(objective, dim=face.DEFAULT_DIM,
                                      budget=budget, init=init, seed=seed)
    # budget == init degenerates to quasi-random search; keep those traces
    # apart so baselines never clobber the guided runs
    is_baseline = budget == init
    prefix = "rs" if is_baseline else "bo"
    trace_path = out_dir / f"{prefix}-{emotion}-{seed}.csv"
    bayesopt.save_trace(trace, trace_path)
    artifacts = [trace_path]
    best_png = best_json = None
    if not is_baseline:
        best_png = out_dir / f"best-{emotion}.png"
        imaging.write_image(best_png, face.render(best_x))
        best_json = out_dir / f"best-{emotion}.json"
        best_json.write_text(json.dumps({
            "emotion": emotion,
            "seed": seed,
            "objective": float(trace.incumbents()[-1]),
            "actuators": [float(v) for v in best_x],
        }, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        artifacts += [best_png, best_json]
    stage = f"{'random' if is_baseline else 'optimize'}-{emotion}-{seed}"
    manifest.write_manifest(
        out_dir, stage,
        {"budget": budget, "init": init, "model": str(model_path),
         "trace": trace_path.name},
        {str(model_path): manifest.sha256_file(model_path)},
        {p.name: manifest.sha256_file(p) for p in artifacts},
        seed, started, name=f"manifest-{stage}.json")
    return {"trace": trace_path, "best_png": best_png, "best_json": best_json,
            "incumbent": float(trace.incumbents()[-1]), "best_x": best_x}


def report_stage(run_dirs, out_dir, latent_seed: int = 0) -> Path:
    """Aggregate training manifests and BO traces into a CSV + markdown table.

    BO runs whose budget equals their init count are treated as the
    random-search baseline column.
    """
    started = time.time()
    out_dir = Path(out_dir)
    accuracy: dict[str, float] = {}
    bo_rows: dict[str, list[float]] = {}
    rs_rows: dict[str, list[float]] = {}
    inputs = {}
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        for mpath in sorted(run_dir.glob("manifest-train-*.json")):
            data = manifest.read_manifest(mpath)
            emotion = data["stage"].removeprefix("train-")
            accuracy[emotion] = data["config"].get("mean_accuracy")
            inputs[str(mpath)] = manifest.sha256_file(mpath)
        for pattern in ("manifest-optimize-*.json", "manifest-random-*.json"):
            for mpath in sorted(run_dir.glob(pattern)):
                data = manifest.read_manifest(mpath)
                _, emotion, seed = data["stage"].split("-", 2)
                trace_name = data["config"]["trace"]
                trace = bayesopt.load_trace(run_dir / trace_name)
                incumbent = float(trace.incumbents()[-1])
                is_baseline = data["config"]["budget"] == data["config"]["init"]
                bucket = rs_rows if is_baseline else bo_rows
                bucket.setdefault(emotion, []).append(incumbent)
                inputs[str(run_dir / trace_name)] = manifest.sha256_file(run_dir / trace_name)

    emotions = sorted(set(accuracy) | set(bo_rows) | set(rs_rows))
    rows = []
    for emotion in emotions:
        rows.append({
            "emotion": emotion,
            "mean_cv_accuracy": accuracy.get(emotion),
            "bo_median_incumbent": float(np.median(bo_rows[emotion])) if emotion in bo_rows else None,
            "random_median_incumbent": float(np.median(rs_rows[emotion])) if emotion in rs_rows else None,
            "bo_runs": len(bo_rows.get(emotion, [])),
            "random_runs": len(rs_rows.get(emotion, [])),
        })
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        import csv as _csv

        writer = _csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else
                                 ["emotion"])
        writer.writeheader()
        writer.writerows(rows)
    md_path = out_dir / "report.md"
    lines = ["| emotion | mean CV accuracy | BO median incumbent | random median incumbent |",
             "|---|---|---|---|"]
    for r in rows:
        fmt = lambda v: "-" if v is None else f"{v:.4f}"
        lines.append(f"| {r['emotion']} | {fmt(r['mean_cv_accuracy'])} | "
                     f"{fmt(r['bo_median_incumbent'])} | {fmt(r['random_median_incumbent'])} |")
    md_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest.write_manifest(
        out_dir, "report", {"run_dirs": [str(d) for d in run_dirs]}, inputs,
        {p.name: manifest.sha256_file(p) for p in (csv_path, md_path)},
        None, started)
    return csv_path
