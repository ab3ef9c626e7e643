"""Run configuration: JSON file, overridable by CLI flags.

Precedence is flags > config file > defaults. The resolved configuration
is hashed into the run manifest so a run can be reproduced exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .ca import SvdParams
from .errors import ConfigError, InvalidParameter
from .filtering import FilterCriteria

_VALIDATE_KEYS = {
    "analyses", "lexicon", "audience", "groups", "groups_kind",
    "users_truth", "brands_truth", "min_title_matches", "bootstrap_b",
    "small_group_floor",
}
_ANALYSES = ("title-salary", "audience", "groups", "recovery")


@dataclass
class PipelineConfig:
    brands: str | None = None
    edges: str | None = None
    users: str | None = None
    out: str = "out"
    delimiter: str = ","
    seed: int = 0
    threads: int = 1
    k_dims: int = 3
    criteria: FilterCriteria = field(default_factory=FilterCriteria)
    svd: SvdParams = field(default_factory=SvdParams)
    anchor: dict | None = None
    standardize_population: str = "all_projected"
    single_pass_prune: bool = False
    validate: dict = field(default_factory=dict)
    synth: dict | None = None

    _TOP_KEYS = {
        "brands", "edges", "users", "out", "delimiter", "seed", "threads",
        "k_dims", "criteria", "svd", "anchor", "standardize_population",
        "single_pass_prune", "validate", "synth",
    }

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        unknown = set(raw) - cls._TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        for key in ("brands", "edges", "users", "out", "delimiter",
                    "standardize_population", "anchor", "synth"):
            if key in raw:
                setattr(cfg, key, raw[key])
        for key in ("seed", "threads", "k_dims"):
            if key in raw:
                setattr(cfg, key, int(raw[key]))
        if "single_pass_prune" in raw:
            cfg.single_pass_prune = bool(raw["single_pass_prune"])
        try:
            if "criteria" in raw:
                cfg.criteria = FilterCriteria.from_dict(raw["criteria"])
            svd_raw = dict(raw.get("svd", {}))
            svd_raw.setdefault("seed", cfg.seed)
            cfg.svd = SvdParams.from_dict(svd_raw)
        except InvalidParameter as err:
            raise ConfigError(str(err)) from err
        if "validate" in raw:
            unknown = set(raw["validate"]) - _VALIDATE_KEYS
            if unknown:
                raise ConfigError(f"unknown validate keys: {sorted(unknown)}")
            cfg.validate = dict(raw["validate"])
            for name in cfg.validate.get("analyses", []):
                if name not in _ANALYSES:
                    raise ConfigError(
                        f"unknown analysis {name!r}; choose from {_ANALYSES}")
        cfg.check()
        return cfg

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def check(self):
        if self.standardize_population not in ("all_projected", "model"):
            raise ConfigError(
                "standardize_population must be all_projected or model")
        if self.k_dims < 1:
            raise ConfigError("k_dims must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.anchor is not None:
            missing = {"kind", "ids", "sign"} - set(self.anchor)
            if missing:
                raise ConfigError(f"anchor requires keys {sorted(missing)}")
        paths = [p for p in (self.brands, self.edges, self.users) if p]
        if len(paths) != len(set(paths)):
            raise ConfigError("input paths must be distinct")

    def to_dict(self) -> dict:
        return {
            "brands": self.brands,
            "edges": self.edges,
            "users": self.users,
            "out": self.out,
            "delimiter": self.delimiter,
            "seed": self.seed,
            "threads": self.threads,
            "k_dims": self.k_dims,
            "criteria": self.criteria.to_dict(),
            "svd": self.svd.to_dict(),
            "anchor": self.anchor,
            "standardize_population": self.standardize_population,
            "single_pass_prune": self.single_pass_prune,
            "validate": self.validate,
            "synth": self.synth,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def out_dir(self) -> Path:
        return Path(self.out)
