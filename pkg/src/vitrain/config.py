"""Declarative experiment configuration.

Configs are flat ``key = value`` INI files with three sections:
``[experiment]`` (kind, seeds, output directory), ``[data]`` and ``[train]``.
Every field has a documented default matching the experiment presets, so an
empty file plus a kind is a complete configuration. Unknown fields and
malformed values are rejected with the section and field named.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "write_config"]

KINDS = ("probit", "two-moon", "gcn-recover", "panel", "theory-check")


class ConfigError(ValueError):
    """A configuration problem the user has to fix; names the field."""


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int_list(raw: str):
    return tuple(int(tok) for tok in raw.replace(",", " ").split())


_PARSERS = {
    "int": int,
    "float": float,
    "bool": _parse_bool,
    "str": lambda s: s.strip(),
    "int_list": _parse_int_list,
}

# (type, default) per section and field
_EXPERIMENT_FIELDS = {
    "kind": ("str", "probit"),
    "seeds": ("int_list", (0, 1, 2)),
}

_DATA_FIELDS = {
    "n_train": ("int", 2000),
    "n_test": ("int", 500),
    "dim": ("int", 50),
    "noise": ("float", 0.1),
    "nodes": ("int", 15),
    "edge_prob": ("float", 0.15),
    "channels": ("int", 2),
    "teacher_hidden": ("int", 2),
    "perturb_frac": ("float", 0.2),
    "lag": ("int", 5),
    "knn": ("int", 4),
    "n_train_days": ("int", 360),
    "panel_csv": ("str", ""),
    "panel_days": ("int", 500),
    "panel_classes": ("int", 2),
}

_TRAIN_FIELDS = {
    "method": ("str", "svi"),
    "epochs": ("int", 0),          # 0 means "use the experiment preset"
    "batch_size": ("int", 0),
    "lr": ("float", 0.0),
    "momentum": ("float", -1.0),
    "nesterov": ("str", ""),
    "loss": ("str", ""),
    "hidden": ("int", 0),
    "hidden_sweep": ("int_list", ()),
    "bn": ("str", ""),
    "snapshot_every": ("int", 0),
    "record_dynamics": ("bool", False),
}

_SCHEMA = {
    "experiment": _EXPERIMENT_FIELDS,
    "data": _DATA_FIELDS,
    "train": _TRAIN_FIELDS,
}


@dataclass
class ExperimentConfig:
    kind: str = "probit"
    seeds: tuple[int, ...] = (0, 1, 2)
    data: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def overrides(self) -> dict:
        """Keyword overrides for the experiment builders: every configured
        field that differs from its 'unset' sentinel."""
        out = dict(self.data)
        sentinels = {name: default for name, (_, default) in _TRAIN_FIELDS.items()}
        for name, value in self.train.items():
            if name in ("method", "hidden_sweep", "record_dynamics"):
                continue
            if name == "momentum":
                if value >= 0:
                    out["momentum"] = value
                continue
            if value != sentinels.get(name) and value not in ("", 0, 0.0):
                if name == "nesterov":
                    out["nesterov"] = _parse_bool(value)
                else:
                    out[name] = value
        return out


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        schema = _SCHEMA[section]
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(f"unknown field {key!r} in section [{section}]")
            typ, _default = schema[key]
            try:
                value = _PARSERS[typ](raw)
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for [{section}] {key}: {raw!r} ({exc})"
                ) from None
            if section == "experiment":
                setattr(cfg, key if key != "kind" else "kind", value)
            elif section == "data":
                cfg.data[key] = value
            else:
                cfg.train[key] = value
    if cfg.kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {cfg.kind!r}; choose from {KINDS}")
    return cfg


def write_config(cfg: ExperimentConfig, path) -> None:
    """Echo the effective configuration; re-running from the echo reproduces
    the outputs."""
    parser = configparser.ConfigParser()
    parser["experiment"] = {
        "kind": cfg.kind,
        "seeds": ",".join(str(s) for s in cfg.seeds),
    }
    parser["data"] = {k: str(v) for k, v in sorted(cfg.data.items())}
    parser["train"] = {
        k: (",".join(str(x) for x in v) if isinstance(v, tuple) else str(v))
        for k, v in sorted(cfg.train.items())
    }
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def resolved_defaults(kind: str) -> ExperimentConfig:
    cfg = ExperimentConfig(kind=kind)
    return cfg
