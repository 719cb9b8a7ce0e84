"""Command-line pipeline: gen-pool, select, annotate, train, optimize, report.

Every command is deterministic given its seed, writes a run manifest next
to its outputs, and is non-interactive when all flags are supplied.
Defaults resolve against --data-dir / $PREFRANK_DATA_DIR; a JSON or TOML
config file can supply any long-option value (flags win).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import face, model, pipeline, ranking
from .errors import PrefrankError

DATA_DIR_ENV = "PREFRANK_DATA_DIR"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise click.UsageError(f"config file not found: {path}")
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib

        return tomllib.loads(text)
    return json.loads(text)


class Context:
    def __init__(self, data_dir: Path, config: dict):
        self.data_dir = data_dir
        self.config = config

    def default(self, key: str, fallback):
        return self.config.get(key, fallback)


def _resolve(ctx_obj: Context, value, config_key: str, default_path):
    """flag > config file > data-dir default."""
    if value is not None:
        return Path(value)
    configured = ctx_obj.config.get(config_key)
    if configured is not None:
        return Path(configured)
    return ctx_obj.data_dir / default_path


@click.group()
@click.option("--data-dir", envvar=DATA_DIR_ENV, default="data",
              show_default=True, help="Root directory for pipeline artifacts.")
@click.option("--config", "config_path", default=None,
              help="JSON or TOML file supplying default option values.")
@click.pass_context
def cli(ctx, data_dir, config_path):
    """Preference-ranked expression generation pipeline."""
    ctx.obj = Context(Path(data_dir), _load_config(config_path))


@cli.command("gen-pool")
@click.option("--count", type=int, default=None, help="Pool size. [default: 500]")
@click.option("--seed", type=int, default=None, help="RNG seed. [default: 0]")
@click.option("--dim", type=int, default=None,
              help=f"Actuator dimension. [default: {face.DEFAULT_DIM}]")
@click.option("--out", "out_dir", default=None,
              help="Output directory. [default: DATA_DIR/pool]")
@click.pass_obj
def gen_pool(obj, count, seed, dim, out_dir):
    """Render the candidate pool (intensity-guided samples + Sobol fillers)."""
    count = count if count is not None else int(obj.default("count", 500))
    seed = seed if seed is not None else int(obj.default("seed", 0))
    dim = dim if dim is not None else int(obj.default("dim", face.DEFAULT_DIM))
    out = _resolve(obj, out_dir, "pool_dir", "pool")
    pool_path = pipeline.gen_pool(out, count=count, seed=seed, dim=dim)
    click.echo(f"pool: {count} images -> {pool_path}")


@cli.command("select")
@click.option("--pool", "pool_path", default=None,
              help="Pool manifest. [default: DATA_DIR/pool/pool.jsonl]")
@click.option("--k", type=int, default=None, help="Subset size. [default: 100]")
@click.option("--out", "out_dir", default=None,
              help="Output directory. [default: DATA_DIR/subset]")
@click.pass_obj
def select(obj, pool_path, k, out_dir):
    """Select a diverse subset and enumerate its comparison pairs."""
    pool_path = _resolve(obj, pool_path, "pool", Path("pool") / "pool.jsonl")
    k = k if k is not None else int(obj.default("k", 100))
    out = _resolve(obj, out_dir, "subset_dir", "subset")
    subset_path = pipeline.select_subset(pool_path, out, k=k)
    n_pairs = k * (k - 1) // 2
    click.echo(f"subset: {k} images, {n_pairs} pairs -> {subset_path}")


@cli.command("annotate")
@click.option("--mode", type=click.Choice(["human", "synthetic"]), default="synthetic",
              show_default=True)
@click.option("--emotion", default=None,
              help="Target emotion (or --all-emotions).")
@click.option("--all-emotions", is_flag=True, help="Loop over all six emotions.")
@click.option("--annotator", default="synthetic", show_default=True)
@click.option("--seed", type=int, default=None, help="Shuffle seed. [default: 0]")
@click.option("--subset", "--pool", "subset_path", default=None,
              help="Pool/subset manifest. [default: DATA_DIR/subset/subset.jsonl]")
@click.option("--out", "out_dir", default=None,
              help="Session directory. [default: DATA_DIR/sessions]")
@click.option("--bind", default="127.0.0.1:8000", show_default=True,
              help="host:port for --mode human.")
@click.option("--static", "static_dir", default=None,
              help="Optional UI bundle directory to serve at / (human mode).")
@click.option("--resume/--fresh", "resume", default=None,
              help="Continue or overwrite an existing synthetic session file.")
@click.pass_obj
def annotate(obj, mode, emotion, all_emotions, annotator, seed, subset_path,
             out_dir, bind, static_dir, resume):
    """Collect pairwise comparisons (HTTP service or synthetic oracle)."""
    subset_path = _resolve(obj, subset_path, "subset", Path("subset") / "subset.jsonl")
    out = _resolve(obj, out_dir, "sessions_dir", "sessions")
    seed = seed if seed is not None else int(obj.default("seed", 0))

    if mode == "human":
        from . import service
        import uvicorn

        host, _, port = bind.partition(":")
        app = service.create_app(subset_path, out, static_dir=static_dir)
        click.echo(f"annotation service on http://{bind} (pool: {subset_path})")
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000),
                    log_level="warning")
        return

    if all_emotions:
        emotions = list(face.TRAINABLE_EMOTIONS)
    elif emotion:
        emotions = [face.Emotion.parse(emotion)]
    else:
        raise click.UsageError("--emotion or --all-emotions is required")
    for emo in emotions:
        target = out / ranking.session_filename(annotator, emo)
        if target.exists():
            if resume is None:
                if sys.stdin.isatty():
                    resume = click.confirm(
                        f"session file {target} exists; keep it?", default=True)
                else:
                    raise click.UsageError(
                        f"{target} exists; pass --resume to keep or --fresh to overwrite")
            if resume:
                session = ranking.load_session(target)
                if session.completed:
                    click.echo(f"annotate[{emo.value}]: already complete ({target})")
                    continue
        session_path = pipeline.annotate_synthetic(
            subset_path, emo, out, annotator=annotator, seed=seed)
        session = ranking.load_session(session_path)
        click.echo(
            f"annotate[{emo.value}]: {session.answered_count()} comparisons -> "
            f"{session_path}")


@cli.command("train")
@click.option("--emotion", default=None, help="Emotion to train (or --all-emotions).")
@click.option("--all-emotions", is_flag=True)
@click.option("--sessions", "session_paths", multiple=True,
              help="Session files. [default: DATA_DIR/sessions/session-*-EMOTION.jsonl]")
@click.option("--subset", "subset_path", default=None)
@click.option("--folds", type=int, default=5, show_default=True)
@click.option("--lr", type=float, default=0.005, show_default=True)
@click.option("--weight-decay", type=float, default=1e-5, show_default=True)
@click.option("--momentum", type=float, default=0.9, show_default=True)
@click.option("--epochs", type=int, default=60, show_default=True)
@click.option("--batch-size", type=int, default=512, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--sigmoid-scale", type=float, default=20.0, show_default=True)
@click.option("--out", "out_dir", default=None,
              help="Model directory. [default: DATA_DIR/models]")
@click.pass_obj
def train(obj, emotion, all_emotions, session_paths, subset_path, folds, lr,
          weight_decay, momentum, epochs, batch_size, seed, sigmoid_scale, out_dir):
    """Cross-validate and train one preference model per emotion."""
    subset_path = _resolve(obj, subset_path, "subset", Path("subset") / "subset.jsonl")
    out = _resolve(obj, out_dir, "models_dir", "models")
    sessions_dir = obj.data_dir / "sessions"
    if all_emotions:
        emotions = [e.value for e in face.TRAINABLE_EMOTIONS]
    elif emotion:
        emotions = [face.Emotion.parse(emotion).value]
    else:
        raise click.UsageError("--emotion or --all-emotions is required")
    config = model.TrainConfig(learning_rate=lr, weight_decay=weight_decay,
                               momentum=momentum, epochs=epochs,
                               batch_size=batch_size, seed=seed)
    for emo in emotions:
        if session_paths:
            paths = [Path(p) for p in session_paths]
        else:
            paths = sorted(sessions_dir.glob(f"session-*-{emo}.jsonl"))
        if not paths:
            raise PrefrankError(f"no session files found for {emo} in {sessions_dir}")
        model_path = pipeline.train_stage(subset_path, paths, out, folds=folds,
                                          config=config, sigmoid_scale=sigmoid_scale)
        report = json.loads((out / f"train-{emo}.json").read_text())
        click.echo(f"train[{emo}]: mean CV accuracy "
                   f"{report['mean_accuracy']:.3f} -> {model_path}")


@cli.command("optimize")
@click.option("--model", "model_path", default=None,
              help="Checkpoint. [default: DATA_DIR/models/model-EMOTION.json]")
@click.option("--emotion", default=None, help="Emotion (with --all-emotions or default model path).")
@click.option("--all-emotions", is_flag=True)
@click.option("--budget", type=int, default=300, show_default=True)
@click.option("--init", "init_count", type=int, default=20, show_default=True,
              help="Initial quasi-random evaluations (budget == init is random search).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", default=None,
              help="Run directory. [default: DATA_DIR/runs]")
@click.pass_obj
def optimize(obj, model_path, emotion, all_emotions, budget, init_count, seed, out_dir):
    """Generate expressions by Bayesian optimization of a trained model."""
    out = _resolve(obj, out_dir, "runs_dir", "runs")
    models_dir = obj.data_dir / "models"
    if all_emotions:
        paths = sorted(models_dir.glob("model-*.json"))
        if not paths:
            raise PrefrankError(f"no model checkpoints in {models_dir}")
    elif model_path:
        paths = [Path(model_path)]
    elif emotion:
        paths = [models_dir / f"model-{face.Emotion.parse(emotion).value}.json"]
    else:
        raise click.UsageError("--model, --emotion, or --all-emotions is required")
    for path in paths:
        result = pipeline.optimize_stage(path, out, budget=budget,
                                         init=init_count, seed=seed)
        click.echo(f"optimize[{path.stem}]: incumbent {result['incumbent']:.4f} "
                   f"-> {result['trace']}")


@cli.command("report")
@click.option("--runs", "run_dirs", multiple=True,
              help="Run/model directories. [default: DATA_DIR/models DATA_DIR/runs]")
@click.option("--out", "out_dir", default=None,
              help="Report directory. [default: DATA_DIR/report]")
@click.pass_obj
def report(obj, run_dirs, out_dir):
    """Aggregate accuracies and optimization results into CSV + markdown."""
    if not run_dirs:
        run_dirs = [obj.data_dir / "models", obj.data_dir / "runs"]
    out = _resolve(obj, out_dir, "report_dir", "report")
    csv_path = pipeline.report_stage([Path(d) for d in run_dirs], out)
    click.echo(f"report -> {csv_path}")
    click.echo((out / "report.md").read_text().rstrip())


def main(argv=None) -> int:
    """Entry point with the documented exit codes (0 ok, 1 usage, 2 runtime)."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.UsageError as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.Abort:
        click.echo("aborted", err=True)
        sys.exit(EXIT_USAGE)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_RUNTIME)
    except (PrefrankError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)


if __name__ == "__main__":
    main()
