"""Experiment configuration: an INI file with one section per command plus ``[run]``.

Every key has a type and a default.  Values resolve as defaults, then the
file, then command-line flags.  Unknown sections or keys are errors, so a
typo can never silently fall back to a default.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidArgument

# section -> key -> (type, default, help)
SCHEMA: dict[str, dict[str, tuple[type, object, str]]] = {
    "run": {
        "seed": (int, 0, "root seed; every random stream is derived from it"),
        "out": (str, "out", "output directory"),
        "threads": (int, 1, "worker cap for parallel fits"),
        "experiment": (str, "", "experiment name written to metrics.csv (default: the command)"),
    },
    "gen-data": {
        "generator": (str, "shapes", "blobs | shapes | external"),
        "classes": (int, 3, "class count"),
        "per_class": (int, 100, "training instances per class"),
        "test_per_class": (int, 100, "test instances per class"),
        "size": (int, 16, "side length of generated images"),
        "channels": (int, 3, "channels of generated images"),
        "path": (str, "", "external: training data file"),
        "test_path": (str, "", "external: test data file"),
        "format": (str, "cifar10", "external: cifar10 | idx"),
        "labels_path": (str, "", "external idx: training labels file"),
        "test_labels_path": (str, "", "external idx: test labels file"),
    },
    "encode": {
        "data": (str, "", "LDS1 dataset to encode"),
        "per_class": (int, 0, "fields per class sampled as in warm-up; 0 encodes every instance"),
        "budget": (int, 0, "per-field parameter budget; 0 uses layers and width"),
        "layers": (int, 3, "hidden sine layers"),
        "width": (int, 20, "hidden width"),
        "omega0": (float, 30.0, "sine frequency scale"),
        "iters": (int, 5000, "Adam iterations per field"),
        "lr": (float, 5e-4, "Adam learning rate"),
    },
    "decode": {
        "bundle": (str, "", "NFB1 bundle"),
        "dims": (str, "", "comma-separated decode lattice; empty for the bundle's own"),
    },
    "distill": {
        "data": (str, "", "LDS1 training set"),
        "init": (str, "", "NFB1 bundle to start from; empty runs a warm-up"),
        "loss": (str, "dm", "dm | dc"),
        "iterations": (int, 500, "outer iterations"),
        "real_batch": (int, 32, "real instances per class per step"),
        "synth_batch": (int, 0, "fields per class per step; 0 uses all"),
        "field_lr": (float, 1e-3, "Adam learning rate on field parameters"),
        "flip": (bool, False, "paired random horizontal flip"),
        "crop": (bool, False, "paired random shift with zero fill"),
        "cutout": (bool, False, "paired random cutout"),
        "net_depth": (int, 3, "matching network conv blocks"),
        "net_width": (int, 32, "matching network filters"),
        "dc_loops": (int, 2, "matching steps per network in DC"),
        "dc_inner_steps": (int, 5, "classifier updates on the synthetic set between DC matching steps"),
        "dc_lr": (float, 0.01, "classifier learning rate in DC"),
        "per_class": (int, 1, "warm-up fields per class"),
        "budget": (int, 0, "warm-up per-field budget; 0 uses layers and width"),
        "layers": (int, 3, "warm-up hidden sine layers"),
        "width": (int, 20, "warm-up hidden width"),
        "omega0": (float, 30.0, "warm-up sine frequency scale"),
        "warmup_iters": (int, 5000, "warm-up Adam iterations"),
        "warmup_lr": (float, 5e-4, "warm-up Adam learning rate"),
    },
    "eval": {
        "synth": (str, "", "NFB1 bundle or LDS1 dataset to train on"),
        "test": (str, "", "LDS1 test set"),
        "repeats": (int, 5, "independently initialized classifiers"),
        "epochs": (int, 300, "training epochs per classifier"),
        "lr": (float, 1e-3, "Adam learning rate"),
        "batch": (int, 256, "minibatch size"),
        "depth": (int, 3, "conv blocks"),
        "width": (int, 32, "filters per conv"),
        "model": (str, "convnet", "convnet | mlp"),
        "flip": (bool, False, "random horizontal flip"),
        "crop": (bool, False, "random shift with zero fill"),
        "cutout": (bool, False, "random cutout"),
    },
    "baseline": {
        "data": (str, "", "LDS1 dataset whose instances are reconstructed"),
        "method": (str, "fred", "ddif | fred | idc | vanilla"),
        "budget": (int, 0, "per-instance budget in scalars"),
        "limit": (int, 0, "reconstruct only the first N instances; 0 for all"),
        "restarts": (int, 1, "ddif: fits per instance, best kept"),
        "iters": (int, 5000, "ddif: Adam iterations"),
        "lr": (float, 5e-4, "ddif: Adam learning rate"),
        "omega0": (float, 30.0, "ddif: sine frequency scale"),
        "idc_method": (str, "bilinear", "idc: upsampling kernel"),
        "shared_mask": (bool, True, "fred: one mask selected over the whole dataset"),
    },
    "analyze": {
        "kind": (str, "theorem", "theorem | expansion"),
        "bmin": (int, 6, "theorem: smallest budget"),
        "bmax": (int, 200, "theorem: largest budget"),
        "zetas": (str, "1,2,4,8,10", "expansion: truncation orders"),
        "fields": (int, 20, "expansion: random fields"),
        "width": (int, 4, "expansion: hidden width"),
    },
    "report": {
        "inputs": (str, "", "comma-separated run directories or metrics.csv files"),
    },
}

COMMANDS = tuple(k for k in SCHEMA if k != "run")


def parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InvalidArgument(f"not a boolean: {text!r}")


def _convert(section: str, key: str, raw) -> object:
    kind = SCHEMA[section][key][0]
    try:
        if kind is bool:
            return raw if isinstance(raw, bool) else parse_bool(raw)
        return kind(raw)
    except (TypeError, ValueError) as exc:
        raise InvalidArgument(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}") from exc


@dataclass
class ExperimentConfig:
    """Resolved settings for one command: ``run`` keys plus the command's own section."""

    command: str
    run: dict[str, object]
    values: dict[str, object]

    def __getitem__(self, key: str):
        return self.values[key]

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section, vals in (("run", self.run), (self.command, self.values)):
            parser[section] = {k: str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float)
                               else str(v) for k, v in vals.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def read_file(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise InvalidArgument(f"{path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise InvalidArgument(f"{path}: unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise InvalidArgument(f"{path}: unknown key {key!r} in [{section}]")
        out[section] = dict(parser[section])
    return out


def resolve(command: str, file_values: dict[str, dict[str, str]] | None = None,
            overrides: dict[str, dict[str, object]] | None = None) -> ExperimentConfig:
    """Defaults, then file values, then overrides (``None`` overrides are ignored)."""
    if command not in COMMANDS:
        raise InvalidArgument(f"unknown command {command!r}")
    file_values = file_values or {}
    overrides = overrides or {}
    resolved = {}
    for section in ("run", command):
        vals = {k: spec[1] for k, spec in SCHEMA[section].items()}
        for source in (file_values.get(section, {}), overrides.get(section, {})):
            for k, v in source.items():
                if k not in SCHEMA[section]:
                    raise InvalidArgument(f"unknown key {k!r} in [{section}]")
                if v is not None:
                    vals[k] = _convert(section, k, v)
        resolved[section] = vals
    return ExperimentConfig(command, resolved["run"], resolved[command])


def derive_seed(root: int, stream: str) -> int:
    """Independent seed for a named stream: ``root`` xor a stable hash of the name."""
    digest = int.from_bytes(hashlib.sha256(stream.encode("utf-8")).digest()[:8], "little")
    return (int(root) ^ digest) & (2 ** 63 - 1)
