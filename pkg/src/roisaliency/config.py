"""One JSON config for the whole pipeline, with strict validation.

Every run is described by a single document so artifacts can be reproduced
from the config stored next to them. Unknown keys are rejected; every knob
has a default except the sliding-window parameters, which must be stated
explicitly. All randomness derives from the single top-level seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .corruption import SamplingConfig
from .data import DataError
from .interpret import InterpretConfig
from .nn.train import TrainConfig
from .preprocess import WindowConfig
from .synthgen import SynthConfig


class ConfigError(DataError):
    """Invalid run configuration."""


_PATH_KEYS = {
    "nifti",
    "train_manifest",
    "val_manifest",
    "dataset",
    "atlas",
    "model",
}

ARCHITECTURES = ("auto", "synth_cnn", "cnn3d")


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "out"
    threads: int = 1
    synth: SynthConfig = field(default_factory=SynthConfig)
    window: WindowConfig | None = None
    target_shape: tuple[int, int, int] | None = None
    arch: str = "auto"
    cnn3d_filters: tuple[int, ...] = (8, 16, 16, 32, 32, 64)
    cnn3d_hidden: int = 64
    train: TrainConfig = field(default_factory=TrainConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    interpret: InterpretConfig = field(default_factory=InterpretConfig)
    table1_repeats: int = 10
    sweep_alpha_jsd: tuple[float, ...] = (0.01, 0.05, 0.2)
    sweep_alpha_w: tuple[float, ...] = (0.01, 0.05, 0.2)
    paths: dict[str, str] = field(default_factory=dict)


def _require(section: dict, name: str, allowed: set[str]) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {sorted(unknown)}")


def _get_int(section: dict, key: str, default: int, name: str) -> int:
    value = section.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"'{name}.{key}' must be an integer, got {value!r}")
    return value


def _get_number(section: dict, key: str, default: float, name: str) -> float:
    value = section.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{name}.{key}' must be a number, got {value!r}")
    return float(value)


def _get_bool(section: dict, key: str, default: bool, name: str) -> bool:
    value = section.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"'{name}.{key}' must be true/false, got {value!r}")
    return value


def _get_str(section: dict, key: str, default: str, name: str) -> str:
    value = section.get(key, default)
    if not isinstance(value, str):
        raise ConfigError(f"'{name}.{key}' must be a string, got {value!r}")
    return value


def _parse_synth(section: dict, seed: int) -> SynthConfig:
    _require(
        section,
        "synth",
        {"image_side", "patch_side", "n_class0", "n_class1", "noise_sigma", "test_per_class"},
    )
    base = SynthConfig()
    return SynthConfig(
        image_side=_get_int(section, "image_side", base.image_side, "synth"),
        patch_side=_get_int(section, "patch_side", base.patch_side, "synth"),
        n_class0=_get_int(section, "n_class0", base.n_class0, "synth"),
        n_class1=_get_int(section, "n_class1", base.n_class1, "synth"),
        noise_sigma=_get_number(section, "noise_sigma", base.noise_sigma, "synth"),
        test_per_class=_get_int(section, "test_per_class", base.test_per_class, "synth"),
        seed=seed,
    )


def _parse_window(section: dict) -> WindowConfig:
    _require(section, "window", {"w", "stride"})
    if "w" not in section or "stride" not in section:
        raise ConfigError("'window' requires both 'w' and 'stride' (no defaults)")
    return WindowConfig(
        w=_get_int(section, "w", 0, "window"), stride=_get_int(section, "stride", 0, "window")
    )


def _parse_train(section: dict, seed: int) -> tuple[TrainConfig, str, tuple[int, ...], int]:
    _require(
        section,
        "train",
        {
            "learning_rate",
            "batch_size",
            "max_epochs",
            "l2_coefficient",
            "dropout",
            "patience",
            "arch",
            "cnn3d_filters",
            "cnn3d_hidden",
        },
    )
    base = TrainConfig()
    cfg = TrainConfig(
        learning_rate=_get_number(section, "learning_rate", base.learning_rate, "train"),
        batch_size=_get_int(section, "batch_size", base.batch_size, "train"),
        max_epochs=_get_int(section, "max_epochs", base.max_epochs, "train"),
        l2_coefficient=_get_number(section, "l2_coefficient", base.l2_coefficient, "train"),
        dropout=_get_bool(section, "dropout", base.dropout, "train"),
        patience=_get_int(section, "patience", base.patience, "train"),
        seed=seed,
    )
    arch = _get_str(section, "arch", "auto", "train")
    if arch not in ARCHITECTURES:
        raise ConfigError(f"'train.arch' must be one of {ARCHITECTURES}, got {arch!r}")
    filters = section.get("cnn3d_filters", [8, 16, 16, 32, 32, 64])
    if not (isinstance(filters, list) and len(filters) == 6 and all(isinstance(f, int) for f in filters)):
        raise ConfigError("'train.cnn3d_filters' must be a list of six integers")
    hidden = _get_int(section, "cnn3d_hidden", 64, "train")
    return cfg, arch, tuple(filters), hidden


def _parse_sampling(section: dict, seed: int) -> SamplingConfig:
    _require(
        section,
        "sampling",
        {"samples_per_roi", "correlation_bins", "weight_mode", "exclude_own_subject"},
    )
    base = SamplingConfig()
    return SamplingConfig(
        samples_per_roi=_get_int(section, "samples_per_roi", base.samples_per_roi, "sampling"),
        correlation_bins=_get_int(section, "correlation_bins", base.correlation_bins, "sampling"),
        weight_mode=_get_str(section, "weight_mode", base.weight_mode, "sampling"),
        exclude_own_subject=_get_bool(
            section, "exclude_own_subject", base.exclude_own_subject, "sampling"
        ),
        seed=seed,
    )


def _parse_interpret(section: dict, sampling: SamplingConfig) -> InterpretConfig:
    _require(
        section,
        "interpret",
        {"alpha_jsd", "alpha_w", "bootstrap_replicates", "histogram_bins"},
    )
    base = InterpretConfig()
    return InterpretConfig(
        alpha_jsd=_get_number(section, "alpha_jsd", base.alpha_jsd, "interpret"),
        alpha_w=_get_number(section, "alpha_w", base.alpha_w, "interpret"),
        bootstrap_replicates=_get_int(
            section, "bootstrap_replicates", base.bootstrap_replicates, "interpret"
        ),
        histogram_bins=_get_int(section, "histogram_bins", base.histogram_bins, "interpret"),
        sampling=sampling,
    )


def _parse_alpha_list(section: dict, key: str, default: tuple[float, ...]) -> tuple[float, ...]:
    values = section.get(key, list(default))
    if not (isinstance(values, list) and values and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) and 0.0 < v < 1.0 for v in values
    )):
        raise ConfigError(f"'sweep.{key}' must be a nonempty list of numbers in (0, 1)")
    return tuple(float(v) for v in values)


_TOP_KEYS = {
    "seed",
    "out_dir",
    "threads",
    "synth",
    "window",
    "target_shape",
    "train",
    "sampling",
    "interpret",
    "table1",
    "sweep",
    "paths",
}


def parse_run_config(doc: dict[str, Any]) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _require(doc, "config", _TOP_KEYS)
    seed = _get_int(doc, "seed", 0, "config")
    if seed < 0:
        raise ConfigError(f"'seed' must be non-negative, got {seed}")
    threads = _get_int(doc, "threads", 1, "config")
    if threads < 1:
        raise ConfigError(f"'threads' must be >= 1, got {threads}")
    out_dir = _get_str(doc, "out_dir", "out", "config")

    for key in ("synth", "window", "train", "sampling", "interpret", "table1", "sweep", "paths"):
        if key in doc and not isinstance(doc[key], dict):
            raise ConfigError(f"'{key}' must be an object")

    synth = _parse_synth(doc.get("synth", {}), seed)
    window = _parse_window(doc["window"]) if "window" in doc else None

    target_shape = None
    if doc.get("target_shape") is not None:
        ts = doc["target_shape"]
        if not (isinstance(ts, list) and len(ts) == 3 and all(isinstance(v, int) and v > 0 for v in ts)):
            raise ConfigError("'target_shape' must be a list of three positive integers")
        target_shape = tuple(ts)

    train_cfg, arch, filters, hidden = _parse_train(doc.get("train", {}), seed)
    sampling = _parse_sampling(doc.get("sampling", {}), seed)
    interpret_cfg = _parse_interpret(doc.get("interpret", {}), sampling)

    table1 = doc.get("table1", {})
    _require(table1, "table1", {"repeats"})
    repeats = _get_int(table1, "repeats", 10, "table1")
    if repeats < 1:
        raise ConfigError(f"'table1.repeats' must be >= 1, got {repeats}")

    sweep = doc.get("sweep", {})
    _require(sweep, "sweep", {"alpha_jsd", "alpha_w"})
    sweep_jsd = _parse_alpha_list(sweep, "alpha_jsd", RunConfig().sweep_alpha_jsd)
    sweep_w = _parse_alpha_list(sweep, "alpha_w", RunConfig().sweep_alpha_w)

    paths = doc.get("paths", {})
    _require(paths, "paths", _PATH_KEYS)
    for key, value in paths.items():
        if not isinstance(value, str):
            raise ConfigError(f"'paths.{key}' must be a string path")

    return RunConfig(
        seed=seed,
        out_dir=out_dir,
        threads=threads,
        synth=synth,
        window=window,
        target_shape=target_shape,
        arch=arch,
        cnn3d_filters=filters,
        cnn3d_hidden=hidden,
        train=train_cfg,
        sampling=sampling,
        interpret=interpret_cfg,
        table1_repeats=repeats,
        sweep_alpha_jsd=sweep_jsd,
        sweep_alpha_w=sweep_w,
        paths=dict(paths),
    )


def load_run_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Load a config file (or start from defaults) and apply CLI overrides.

    Recognized overrides: seed, out_dir, threads — the global flags. They are
    applied to the raw document before validation so seed derivation stays
    consistent.
    """
    doc: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    return parse_run_config(doc)
