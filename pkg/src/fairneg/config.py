"""INI run configuration: schema, type checking, overrides and hashing."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from typing import Any, Callable

from .samplers import STRATEGIES, SamplerConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid, unknown or missing configuration value."""


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _float_list(text: str) -> list[float]:
    return [float(s) for s in _str_list(text)]


def _int_list(text: str) -> list[int]:
    return [int(s) for s in _str_list(text)]


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return t
    return parse


def _raw(text: str) -> str:
    return text


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: str | None
    is_path: bool = False


SCHEMA: dict[str, Key] = {
    # raw data and preparation
    "data.ratings": Key(str, None, is_path=True),
    "data.attributes": Key(str, None, is_path=True),
    "data.ratings_sep": Key(_raw, "::"),
    "data.attributes_sep": Key(_raw, ","),
    "data.user_col": Key(int, "0"),
    "data.item_col": Key(int, "1"),
    "data.attr_item_col": Key(int, "0"),
    "data.attr_label_col": Key(int, "1"),
    "data.label_sep": Key(_raw, ""),
    "data.groups": Key(_str_list, None),
    "data.multi_label": Key(_choice("drop", "error"), "drop"),
    "data.split_seed": Key(int, "0"),
    "data.prepared": Key(str, None, is_path=True),
    # synthetic generator
    "synth.users": Key(int, "200"),
    "synth.items": Key(int, "100"),
    "synth.density": Key(float, "0.1"),
    "synth.item_share": Key(_float_list, "0.5,0.5"),
    "synth.feedback_share": Key(_float_list, ""),
    "synth.rank": Key(int, "8"),
    "synth.concentration": Key(float, "1.0"),
    "synth.popularity_skew": Key(float, "1.0"),
    "synth.seed": Key(int, "0"),
    "synth.labels": Key(_str_list, ""),
    # backbone
    "model.backbone": Key(_choice("mf", "lightgcn"), "mf"),
    "model.dim": Key(int, "64"),
    "model.l2": Key(float, "0.01"),
    "model.lr": Key(_opt_float, "auto"),
    "model.layers": Key(int, "3"),
    # sampler
    "sampler.strategy": Key(_choice(*STRATEGIES), "fairneg"),
    "sampler.beta": Key(float, "0.5"),
    "sampler.tau": Key(float, "0.4"),
    "sampler.dns_pool": Key(int, "16"),
    "sampler.popularity_exponent": Key(float, "1.0"),
    "sampler.candidate_pool": Key(int, "0"),
    # training
    "train.epochs": Key(int, "100"),
    "train.batch_size": Key(int, "1024"),
    "train.patience": Key(int, "10"),
    "train.seed": Key(int, "0"),
    "train.eval_k": Key(int, "20"),
    "train.gamma": Key(float, "0.1"),
    "train.alpha": Key(float, "0.1"),
    "train.dynamic": Key(_bool, "true"),
    "train.floor": Key(float, "0.001"),
    # evaluation
    "eval.ks": Key(_int_list, "20,30"),
    "eval.aggregation": Key(_choice("micro", "macro"), "micro"),
    # bookkeeping
    "run.name": Key(str, ""),
}


class RunConfig(dict):
    """Flat ``section.key -> typed value`` mapping with every schema key present."""

    def train_config(self) -> TrainConfig:
        try:
            sampler = SamplerConfig(
                strategy=self["sampler.strategy"],
                beta=self["sampler.beta"],
                tau=self["sampler.tau"],
                dns_pool=self["sampler.dns_pool"],
                popularity_exponent=self["sampler.popularity_exponent"],
                candidate_pool=self["sampler.candidate_pool"],
            )
            return TrainConfig(
                sampler=sampler,
                backbone=self["model.backbone"],
                dim=self["model.dim"],
                l2=self["model.l2"],
                lr=self["model.lr"],
                n_layers=self["model.layers"],
                epochs_max=self["train.epochs"],
                batch_size=self["train.batch_size"],
                patience=self["train.patience"],
                seed=self["train.seed"],
                eval_k=self["train.eval_k"],
                gamma=self["train.gamma"],
                alpha=self["train.alpha"],
                dynamic=self["train.dynamic"],
                floor=self["train.floor"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def method_name(self) -> str:
        if self["run.name"]:
            return self["run.name"]
        names = {"uns": "UNS", "nncf": "NNCF", "dns": "DNS", "fairstatic": "FairStatic", "fairneg": "FairNeg"}
        return names[self["sampler.strategy"]]

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if self.get(k) in (None, [], "")]
        if missing:
            raise ConfigError(f"missing required configuration keys: {missing}")

    def to_json(self) -> dict:
        return {k: self[k] for k in sorted(self)}

    def digest(self) -> str:
        """Hash of every non-path value; paths are covered by the data hash instead."""
        body = {k: v for k, v in self.to_json().items() if not SCHEMA[k].is_path}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _parse_value(key: str, text: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown configuration key {key!r}")
    spec = SCHEMA[key]
    if text == "" and spec.default in (None,):
        return None
    try:
        return spec.parse(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def load_config(path=None, overrides=()) -> RunConfig:
    """Read an INI file (optional) and apply ``section.key=value`` overrides, which win."""
    raw: dict[str, str] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in parser.sections():
            for key, value in parser.items(section):
                raw[f"{section}.{key}"] = value
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()

    cfg = RunConfig()
    for key in raw:
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
    for key, spec in SCHEMA.items():
        text = raw.get(key, spec.default)
        cfg[key] = None if text is None else _parse_value(key, text)
    # construct once so range checks (beta, tau, ...) fail before any work
    cfg.train_config()
    if not cfg["eval.ks"] or min(cfg["eval.ks"]) < 1:
        raise ConfigError("eval.ks must list positive cutoffs")
    return cfg
