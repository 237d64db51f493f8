"""Command line entry point: ``tbrisk <subcommand> --config run.yaml``.

Each subcommand writes into ``<out>/<subcommand>/`` and finishes with a
``manifest.json`` listing the config hash, the seed and a sha256 per
artifact. On failure a single JSON line is printed to stderr and the
manifest is marked incomplete.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import encoders as enc_mod
from . import pipeline as pl
from .data import days_to_date
from .encoders import FittedEncoder, iv_rank
from .errors import ConfigError, TBRiskError
from .explain import SurrogateConfig, TrainStats, encoder_groups, local_surrogate, mean_abs_shapley, shapley_sample
from .fairness import add_age_band, cohort_report, compare_balance, expand_cohort_data
from .metrics import classification_report
from .models import fit, load_model, save_model
from .seeding import derive_seed
from .synthgen import generate, write_generated

COMMANDS = ("generate", "clean", "split", "encode-bench", "train", "evaluate", "select", "explain", "fairness", "report")


def _dump(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Collects the artifacts of one subcommand and writes its manifest."""

    def __init__(self, cfg: pl.PipelineConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.dir = cfg.output_dir / command
        self.dir.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.artifacts.append(p)
        return p

    def json(self, name: str, obj) -> None:
        _dump(obj, self.path(name))

    def manifest(self, status: str = "complete", error: dict | None = None) -> None:
        body = {
            "command": self.command,
            "config_hash": self.cfg.config_hash,
            "seed": self.cfg.seed,
            "status": status,
            "artifacts": {p.name: _sha256(p) for p in sorted(set(self.artifacts)) if p.exists()},
        }
        if error:
            body["error"] = error
        _dump(body, self.dir / "manifest.json")


def _iso(days: int) -> str:
    return days_to_date(int(days)).isoformat()


def _saved_model(cfg: pl.PipelineConfig, splits):
    """Model and encoder written by ``train`` if present, otherwise fit now."""
    model_path = cfg.output_dir / "train" / "model.json"
    enc_path = cfg.output_dir / "train" / "encoder.json"
    if model_path.is_file() and enc_path.is_file():
        return FittedEncoder.from_json(enc_path.read_text(encoding="utf-8")), load_model(model_path)
    return pl.train_default(cfg, splits)


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(cfg, run: Run) -> None:
    if "synthgen" not in cfg.section("data"):
        raise ConfigError("generate needs a data.synthgen section")
    gc = pl.gen_config(cfg)
    ds, truth = generate(gc)
    paths = write_generated(ds, truth, run.dir)
    for p in paths.values():
        run.artifacts.append(Path(p))
    positives = sum(c == gc.positive_label for c in ds.strings(ds.schema.target))
    run.json("generate.json", {"n_rows": ds.n_rows, "prevalence": positives / ds.n_rows, "intercept": truth.intercept})


def cmd_clean(cfg, run: Run) -> None:
    ds, log = pl.cleaned(cfg)
    ds.to_csv(run.path("data.csv"))
    ds.schema.dump(run.path("schema.yaml"))
    run.json("cleaning_log.json", log.entries)


def cmd_split(cfg, run: Run) -> None:
    sp = pl.split(cfg)
    for name in ("train", "validation", "test", "passive"):
        getattr(sp, name).to_csv(run.path(f"{name}.csv"))
    train_end, val_end, test_end, passive_start = sp.boundary_dates
    run.json(
        "split.json",
        {
            "sizes": sp.sizes(),
            "train_end": _iso(train_end),
            "validation_end": _iso(val_end),
            "test_end": _iso(test_end),
            "passive_start": _iso(passive_start),
        },
    )


def cmd_encode_bench(cfg, run: Run) -> None:
    sp = pl.split(cfg)
    families, space, alpha, beta, top = pl.model_section(cfg)
    result = pl.select_encoder(pl.encoder_candidates(cfg), sp, space, beta, pl.resample_plan(cfg), cfg.jobs)
    result.write_leaderboard(run.path("encoder_leaderboard.csv"))
    run.json("encoder_selection.json", result.to_dict())
    run.json("iv_rank.json", [r.__dict__ for r in iv_rank(sp.train)])


def cmd_train(cfg, run: Run) -> None:
    sp = pl.split(cfg)
    encoder, model = pl.train_default(cfg, sp)
    save_model(model, run.path("model.json"))
    run.path("encoder.json").write_text(encoder.to_json(), encoding="utf-8")
    scores = model.predict_proba(pl.features(encoder, sp.validation))
    run.json("validation_report.json", classification_report(scores, sp.validation.labels).to_dict())


def cmd_evaluate(cfg, run: Run) -> None:
    sp = pl.split(cfg)
    part = cfg.section("evaluate").get("split", "passive")
    if part not in ("validation", "test", "passive"):
        raise ConfigError(f"cannot evaluate on split {part!r}")
    encoder, model = _saved_model(cfg, sp)
    ds = getattr(sp, part)
    threshold = float(cfg.section("metrics").get("threshold", 0.5))
    report = classification_report(model.predict_proba(pl.features(encoder, ds)), ds.labels, threshold)
    run.json(f"{part}_report.json", report.to_dict())
    for p in report.write_curves(str(run.dir / part)):
        run.artifacts.append(Path(p))


def cmd_select(cfg, run: Run) -> None:
    sp = pl.split(cfg)
    enc_result, model_result, final = pl.run_select(cfg, sp)
    enc_result.write_leaderboard(run.path("encoder_leaderboard.csv"))
    model_result.write_leaderboard(run.path("model_leaderboard.csv"))
    run.json("selection.json", {"encoder": enc_result.to_dict(), "model": model_result.to_dict()})
    save_model(final.model, run.path("model.json"))
    run.path("encoder.json").write_text(final.encoder.to_json(), encoding="utf-8")
    run.json("passive_report.json", final.report.to_dict())
    if final.report.positives:
        for p in final.report.write_curves(str(run.dir / "passive")):
            run.artifacts.append(Path(p))


def cmd_explain(cfg, run: Run) -> None:
    sp = pl.split(cfg)
    s = cfg.section("explain")
    part = s.get("split", "test")
    if part not in ("train", "validation", "test"):
        raise ConfigError(f"explain runs on train/validation/test, not {part!r}")
    encoder, model = _saved_model(cfg, sp)
    X_train = pl.features(encoder, sp.train)
    X = pl.features(encoder, getattr(sp, part))
    rows = [int(r) for r in s.get("rows", range(min(5, len(X))))]
    for r in rows:
        if not 0 <= r < len(X):
            raise ConfigError(f"explain row {r} outside the {part} split (size {len(X)})")
    rng = np.random.default_rng(derive_seed(cfg.seed, "explain", "background"))
    n_bg = min(int(s.get("background", 100)), len(X_train))
    background = X_train[np.sort(rng.choice(len(X_train), n_bg, replace=False))]
    n_perm = int(s.get("n_permutations", 200))
    stats = TrainStats.fit(X_train, encoder_groups(encoder.feature_names, encoder.categorical))
    sur_cfg = dict(s.get("surrogate") or {})
    out = []
    for r in rows:
        att = shapley_sample(model, X[r], background, n_perm, derive_seed(cfg.seed, "explain", "shapley", r))
        sur = local_surrogate(
            model, X[r], SurrogateConfig(seed=derive_seed(cfg.seed, "explain", "surrogate", r), **sur_cfg), stats
        )
        att.write_csv(run.path(f"shapley_row{r}.csv"))
        sur.attribution.write_csv(run.path(f"surrogate_row{r}.csv"))
        out.append({"row": r, "shapley": att.to_dict(), "surrogate": sur.to_dict()})
    run.json("attributions.json", out)
    table = mean_abs_shapley(model, X[rows], background, max(1, n_perm // 4), derive_seed(cfg.seed, "explain", "mean"))
    run.json("mean_abs_shapley.json", [{"feature": f, "mean_abs": v} for f, v in table])


def _cohort_values(ds, column):
    if column == "age_band" and "age_band" not in ds:
        ds = add_age_band(ds)
    if column not in ds:
        raise ConfigError(f"cohort column {column!r} not in data")
    return [c if c is not None else "" for c in ds.strings(column)]


def cmd_fairness(cfg, run: Run) -> None:
    sp = pl.split(cfg)
    s = cfg.section("fairness")
    columns = list(s.get("columns") or ["gender"])
    floor = float(s.get("floor", 0.7))
    encoder, model = pl.train_default(cfg, sp)
    val = sp.validation
    scores = model.predict_proba(pl.features(encoder, val))
    summary = {"cohorts": {}, "balance": {}, "expansion": []}
    for col in columns:
        cohorts = _cohort_values(val, col)
        within = cohort_report(scores, val.labels, cohorts, col, floor=floor)
        within.write_csv(run.path(f"cohorts_{col}.csv"))
        summary["cohorts"][col] = within.to_dict()
        summary["balance"][col] = compare_balance(scores, val.labels, cohorts, col).to_dict()

    exp = dict(s.get("expand") or {})
    targets = [tuple(t) for t in exp.get("cohorts", [])]
    if not targets and columns and columns[0] != "age_band":
        targets = [(columns[0], v) for v in summary["cohorts"][columns[0]]["low_cohorts"]]
    if targets:
        factor = float(exp.get("factor", 2.0))
        bigger = expand_cohort_data(sp.train, targets, factor, derive_seed(cfg.seed, "fairness", "expand") % 2**32)
        kind = pl.encoder_candidates(cfg)[0]
        families, *_ = pl.model_section(cfg)
        enc2, tr2 = enc_mod.fit_transform(kind, bigger)
        model2 = fit(families[0], tr2.X, bigger.labels, seed=derive_seed(cfg.seed, "train"),
                     feature_names=tr2.names, n_jobs=cfg.jobs)
        scores2 = model2.predict_proba(pl.features(enc2, val))
        for col, value in targets:
            cohorts = _cohort_values(val, col)
            before = cohort_report(scores, val.labels, cohorts, col).entry(value)
            after = cohort_report(scores2, val.labels, cohorts, col).entry(value)
            summary["expansion"].append(
                {"column": col, "value": value, "factor": factor,
                 "recall_at_20_before": before.recall_at_20, "recall_at_20_after": after.recall_at_20}
            )
    run.json("fairness.json", summary)


def cmd_report(cfg, run: Run) -> None:
    merged = {}
    for sub in sorted(COMMANDS):
        d = cfg.output_dir / sub
        if sub == "report" or not d.is_dir():
            continue
        merged[sub] = {
            p.name: json.loads(p.read_text(encoding="utf-8")) for p in sorted(d.glob("*.json"))
        }
    run.json("summary.json", merged)


HANDLERS = {
    "generate": cmd_generate,
    "clean": cmd_clean,
    "split": cmd_split,
    "encode-bench": cmd_encode_bench,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "select": cmd_select,
    "explain": cmd_explain,
    "fairness": cmd_fairness,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tbrisk", description="TB treatment-outcome risk pipeline")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--seed", type=int, help="global seed (overrides the config)")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--jobs", type=int, help=f"worker threads (overrides ${pl.JOBS_ENV} and the config)")
    return parser


def _error_line(command: str, exc: BaseException) -> dict:
    return {"command": command, "error": type(exc).__name__, "message": str(exc)}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    run = None
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be a non-negative integer")
        cfg = pl.PipelineConfig.load(args.config, seed=args.seed, out=args.out, jobs=args.jobs)
        run = Run(cfg, args.command)
        HANDLERS[args.command](cfg, run)
        run.manifest()
    except (TBRiskError, OSError, ValueError, KeyError) as exc:
        err = _error_line(args.command, exc)
        if run is not None:
            run.manifest(status="incomplete", error=err)
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
