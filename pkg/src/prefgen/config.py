"""INI run configuration: one ``[section]`` per pipeline stage plus ``[run]``.

Every key is declared in :data:`SCHEMA` with a parser and a default, so a
typo or a malformed value fails early with the section and key named.
"""
from __future__ import annotations

import configparser
from pathlib import Path
from typing import Any, Callable

from .exceptions import ConfigError

MODES = ("baseline", "enhanced", "advanced")
MODE_ALIASES = {"dcgan": "baseline", "ccgan-internal": "enhanced", "ccgan-external": "advanced"}


def _int(v: str) -> int:
    return int(v)


def _pos_int(v: str) -> int:
    n = int(v)
    if n < 1:
        raise ValueError("must be a positive integer")
    return n


def _float(v: str) -> float:
    return float(v)


def _pos_float(v: str) -> float:
    x = float(v)
    if not x > 0:
        raise ValueError("must be positive")
    return x


def _fraction(v: str) -> float:
    x = float(v)
    if not 0 < x < 1:
        raise ValueError("must lie strictly between 0 and 1")
    return x


def _str(v: str) -> str:
    return v.strip()


def _optional(parser: Callable) -> Callable:
    def parse(v: str):
        return None if v.strip().lower() in ("", "none", "auto") else parser(v)
    return parse


def _choice(*options: str) -> Callable:
    def parse(v: str) -> str:
        v = v.strip()
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return v
    return parse


def _mode(v: str) -> str:
    v = MODE_ALIASES.get(v.strip(), v.strip())
    if v not in MODES:
        raise ValueError(f"must be one of {', '.join(MODES + tuple(MODE_ALIASES))}")
    return v


def _score_range(v: str):
    if v.strip().lower() == "auto":
        return "auto"
    parts = [float(p) for p in v.split(",")]
    if len(parts) != 2:
        raise ValueError("expected 'lo,hi' or 'auto'")
    return tuple(parts)


def _upsample(v: str):
    v = v.strip().lower()
    if v in ("", "none"):
        return None
    if v == "balance":
        return "balance"
    return _pos_int(v)


def _label(v: str):
    v = v.strip().lower()
    return v if v in ("top", "bottom") else float(v)


SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "run": {
        "mode": (_mode, "advanced"),
        "seed": (_int, 0),
    },
    "synth": {
        "latent_dim": (_pos_int, 2),
        "n_consumers": (_pos_int, 400),
        "n_templates": (_pos_int, 100),
        "n_themes": (_optional(_pos_int), None),
        "image_size": (_pos_int, 32),
        "alpha": (_float, -3.0),
        "beta": (_float, 2.0),
        "gamma": (_float, 0.1),
        "face_photos": (_pos_int, 2),
        "face_size": (_pos_int, 16),
        "face_noise": (_float, 0.02),
        "n_external_templates": (_int, 100),
        "n_external_photos": (_int, 400),
        "external_spread": (_pos_float, 1.5),
        "external_face_size": (_pos_int, 8),
    },
    "ingest": {
        "input_dir": (_str, ""),
    },
    "embed": {
        "face_dim": (_pos_int, 128),
        "design_dim": (_pos_int, 1000),
    },
    "train-predictor": {
        "n_trees": (_pos_int, 100),
        "class_weighting": (_choice("balanced", "none"), "balanced"),
        "test_fraction": (_fraction, 0.4),
        "upsample_target": (_upsample, None),
    },
    "label": {
        "score_range": (_score_range, "auto"),
        "bin_width": (_pos_float, 0.025),
        "per_label_cap": (_optional(_pos_int), 200),
        "min_per_label_replication": (_optional(_pos_int), None),
        "n_labels": (_pos_int, 10),
    },
    "train-gan": {
        "iterations": (_pos_int, 600),
        "feature_map_base": (_pos_int, 16),
        "batch_size": (_pos_int, 64),
        "latent_dim": (_optional(_pos_int), None),
        "learning_rate": (_pos_float, 2e-4),
        "d_steps_per_iter": (_optional(_pos_int), None),
        "augment_policy": (_str, "translation,cutout"),
        "vicinal": (_choice("hard", "soft"), "hard"),
        "kappa_factor": (_pos_float, 1.0),
        "sigma": (_optional(_float), None),
        "kappa": (_optional(_float), None),
    },
    "generate": {
        "n_images": (_pos_int, 200),
        "label": (_label, "top"),
    },
    "evaluate": {
        "n_reference": (_pos_int, 3),
        "histogram_bins": (_pos_int, 20),
    },
    "report": {},
}


def defaults() -> dict[str, dict[str, Any]]:
    return {section: {k: default for k, (_, default) in keys.items()} for section, keys in SCHEMA.items()}


def parse_config(text: str = "", source: str = "<string>") -> dict[str, dict[str, Any]]:
    """Validate INI text against :data:`SCHEMA`; unspecified keys take defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = defaults()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: [{section}] unknown key {key!r}")
            parse, _ = SCHEMA[section][key]
            try:
                cfg[section][key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key} = {raw!r}: {exc}") from None
    return cfg


def load_config(path) -> dict[str, dict[str, Any]]:
    if path is None:
        return defaults()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
