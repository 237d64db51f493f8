"""Config-driven pipeline steps shared by the command line subcommands.

Every step is a pure function of the :class:`PipelineConfig`; all randomness
comes from ``config.seed`` through :func:`derive_seed`, one label per
component, so changing one component's settings cannot shift another's
random stream.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import encoders as enc_mod
from .data import Dataset, Schema, load_csv
from .encoders import EncoderKind
from .errors import ConfigError
from .models import ModelSpec, fit
from .preprocess import CleaningPlan, SplitBundle, clean, temporal_split
from .resample import ResamplePlan
from .seeding import derive_seed
from .selection import SearchSpace, encode_splits, final_fit_predict, select_encoder, select_model
from .synthgen import GenConfig, fairness_config, generate, headline_config

JOBS_ENV = "TBRISK_JOBS"

PRESETS = {"headline": headline_config, "fairness": fairness_config}


def _child(seed: int, label: str) -> int:
    # encoders and synthgen store their seed as a plain 32-bit int
    return derive_seed(seed, label) % (2**32)


@dataclass
class PipelineConfig:
    raw: dict
    seed: int
    output_dir: Path
    jobs: int = 1
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path, seed=None, out=None, jobs=None) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_dict(raw, seed=seed, out=out, jobs=jobs, base_dir=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, seed=None, out=None, jobs=None, base_dir=None) -> "PipelineConfig":
        raw = copy.deepcopy(raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if "seed" not in raw:
            raise ConfigError("a global seed is required (config key 'seed' or --seed)")
        if out is not None:
            raw["output_dir"] = str(out)
        if "output_dir" not in raw:
            raise ConfigError("an output directory is required (config key 'output_dir' or --out)")
        if jobs is None:
            jobs = os.environ.get(JOBS_ENV, raw.get("jobs", 1))
        if "data" not in raw:
            raise ConfigError("config needs a 'data' section")
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        out_dir = Path(raw["output_dir"])
        if not out_dir.is_absolute():
            out_dir = base / out_dir
        return cls(raw, int(raw["seed"]), out_dir, max(1, int(jobs)), base)

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name) or {})

    def hashed_content(self) -> dict:
        """Config content that determines numeric outputs (paths and jobs excluded)."""
        return {k: v for k, v in self.raw.items() if k not in ("output_dir", "jobs")}

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.hashed_content(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


# --------------------------------------------------------------------------
# steps


def gen_config(cfg: PipelineConfig) -> GenConfig:
    spec = dict(cfg.section("data").get("synthgen") or {})
    preset = spec.pop("preset", None)
    seed = _child(cfg.seed, "synthgen")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown synthgen preset {preset!r}")
        gc = PRESETS[preset](seed=seed, **({"n_rows": int(spec.pop("n_rows"))} if "n_rows" in spec else {}))
        for key, value in spec.items():
            if not hasattr(gc, key):
                raise ConfigError(f"unknown synthgen option {key!r}")
            setattr(gc, key, value)
        gc.__post_init__()
        return gc
    spec.setdefault("seed", seed)
    try:
        return GenConfig.from_dict(spec)
    except TypeError as exc:
        raise ConfigError(f"bad synthgen section: {exc}") from None


def load_data(cfg: PipelineConfig) -> Dataset:
    data = cfg.section("data")
    if "synthgen" in data:
        return generate(gen_config(cfg))[0]
    if "csv" not in data or "schema" not in data:
        raise ConfigError("data section needs either 'synthgen' or both 'csv' and 'schema'")
    schema_path = cfg.path(data["schema"])
    csv_path = cfg.path(data["csv"])
    for p in (schema_path, csv_path):
        if not p.is_file():
            raise ConfigError(f"file not found: {p}")
    return load_csv(csv_path, Schema.load(schema_path), delimiter=data.get("delimiter", ","))


def cleaning_plan(cfg: PipelineConfig) -> CleaningPlan:
    section = cfg.section("cleaning")
    if "synthgen" in cfg.section("data"):
        section.setdefault("target_positive_values", ["LFU"])
    return CleaningPlan.from_dict(section)


def cleaned(cfg: PipelineConfig):
    return clean(load_data(cfg), cleaning_plan(cfg))


def split(cfg: PipelineConfig, ds: Dataset | None = None) -> SplitBundle:
    if ds is None:
        ds, _ = cleaned(cfg)
    s = cfg.section("split")
    return temporal_split(
        ds,
        s.get("date_column", "notification_date"),
        int(s.get("passive_window_days", 183)),
        tuple(s.get("ratios", (0.70, 0.15, 0.15))),
    )


def encoder_candidates(cfg: PipelineConfig) -> list[EncoderKind]:
    seed = _child(cfg.seed, "encoder")
    out = []
    for item in cfg.raw.get("encoders") or ["target"]:
        item = {"name": item} if isinstance(item, str) else dict(item)
        item.setdefault("seed", seed)
        out.append(EncoderKind.from_dict(item))
    return out


def resample_plan(cfg: PipelineConfig) -> ResamplePlan:
    s = cfg.section("resample")
    s.setdefault("seed", _child(cfg.seed, "resample"))
    return ResamplePlan(**s)


def model_section(cfg: PipelineConfig):
    s = cfg.section("models")
    families = [
        ModelSpec(f) if isinstance(f, str) else ModelSpec(f["family"], dict(f.get("params") or {}))
        for f in s.get("families") or ["gbdt"]
    ]
    search = dict(s.get("search") or {})
    search.setdefault("seed", _child(cfg.seed, "search"))
    return (
        families,
        SearchSpace.from_dict(search),
        float(s.get("alpha", 0.0)),
        float(s.get("beta", 0.0)),
        int(s.get("ensemble_top", 5)),
    )


def run_select(cfg: PipelineConfig, splits: SplitBundle, with_final: bool = True):
    """Encoder search, model search and (optionally) the passive-split refit."""
    families, space, alpha, beta, top = model_section(cfg)
    plan = resample_plan(cfg)
    enc_result = select_encoder(encoder_candidates(cfg), splits, space, beta, plan, cfg.jobs)
    data = encode_splits(enc_result.best_encoder, splits)
    model_result = select_model(families, data, space, alpha, plan, top, enc_result.best_encoder, cfg.jobs)
    final = None
    if with_final:
        final = final_fit_predict(
            model_result,
            splits.modeling,
            splits.passive,
            seed=derive_seed(cfg.seed, "final"),
            resample_plan=plan,
            threshold=float(cfg.section("metrics").get("threshold", 0.5)),
            n_jobs=cfg.jobs,
        )
    return enc_result, model_result, final


def train_default(cfg: PipelineConfig, splits: SplitBundle):
    """Fit the first encoder candidate and the first model family on train."""
    kind = encoder_candidates(cfg)[0]
    families, *_ = model_section(cfg)
    encoder, tr = enc_mod.fit_transform(kind, splits.train)
    model = fit(families[0], tr.X, splits.train.labels, seed=derive_seed(cfg.seed, "train"),
                feature_names=tr.names, n_jobs=cfg.jobs)
    return encoder, model


def features(encoder, ds: Dataset) -> np.ndarray:
    return enc_mod.transform(encoder, ds).X
