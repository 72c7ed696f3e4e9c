"""Experiment configuration files.

An experiment config is a JSON document with four optional sections::

    {
      "data": {"kind": "synth2d", "n_per_cluster": 2000, "seed": 7, ...},
      "training": {"steps": 20000, "loss": {"lambda_div": 0.03, ...}, ...},
      "eval": {"n_per_condition": null, "seed": 0},
      "out_dir": null
    }

Missing fields take their defaults; unknown keys are rejected.  Command-line
flags override file values.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from typing import Any, Dict, Optional

from .errors import ConfigError, InvalidArgumentError
from .losses import LossConfig
from .training import TrainingConfig

DATA_DEFAULTS = {
    "kind": "synth2d",
    "n_per_cluster": 2000,
    "n_particles": 500,
    "n_repeats": 50,
    "seed": 7,
    "q": 0.0,
    "calo_params": {},
}
EVAL_DEFAULTS = {
    # None: match the real dataset's group sizes
    "n_per_condition": None,
    "seed": 0,
    "plots": True,
}
_TRAINING_FIELDS = {f.name for f in dataclasses.fields(TrainingConfig)}
_LOSS_FIELDS = {f.name for f in dataclasses.fields(LossConfig)}
_TOP = {"data", "training", "eval", "out_dir"}


def default_config() -> Dict[str, Any]:
    training = TrainingConfig().to_dict()
    training.pop("out_dir")
    return {
        "data": dict(DATA_DEFAULTS),
        "training": training,
        "eval": dict(EVAL_DEFAULTS),
        "out_dir": None,
    }


def _check_keys(section: str, doc: dict, allowed) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")


def merge(base: dict, override: dict) -> dict:
    """Validated deep merge of ``override`` onto ``base``."""
    _check_keys("config", override, _TOP)
    out = copy.deepcopy(base)
    if "data" in override:
        _check_keys("data", override["data"], DATA_DEFAULTS)
        out["data"].update(override["data"])
    if "eval" in override:
        _check_keys("eval", override["eval"], EVAL_DEFAULTS)
        out["eval"].update(override["eval"])
    if "training" in override:
        tr = override["training"]
        _check_keys("training", tr, _TRAINING_FIELDS - {"out_dir"})
        loss = tr.get("loss", {})
        _check_keys("training.loss", loss, _LOSS_FIELDS)
        out["training"].update({k: v for k, v in tr.items() if k != "loss"})
        out["training"]["loss"].update(loss)
    if "out_dir" in override:
        out["out_dir"] = override["out_dir"]
    return out


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> dict:
    """Defaults, then the file at ``path``, then ``overrides``."""
    cfg = default_config()
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        cfg = merge(cfg, doc)
    if overrides:
        cfg = merge(cfg, overrides)
    if cfg["data"]["kind"] not in ("synth2d", "calo"):
        raise ConfigError(f"data.kind must be synth2d or calo, got {cfg['data']['kind']!r}")
    training_config(cfg)  # validate eagerly
    return cfg


def training_config(cfg: dict, out_dir: Optional[str] = None) -> TrainingConfig:
    try:
        return TrainingConfig.from_dict(dict(cfg["training"], out_dir=out_dir))
    except (TypeError, InvalidArgumentError) as exc:
        raise ConfigError(f"invalid training config: {exc}") from None


def fingerprint(cfg: dict) -> str:
    """Stable hash of the canonicalized config (output location excluded)."""
    doc = {k: v for k, v in cfg.items() if k != "out_dir"}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def dump(cfg: dict) -> str:
    return json.dumps(dict(cfg, fingerprint=fingerprint(cfg)), indent=1, sort_keys=True)
