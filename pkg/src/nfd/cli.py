"""Command-line harness: ``nfd <command> [--config PATH] [--seed N] [--out DIR] [--threads N] ...``.

Every command writes into ``--out``: its products, ``config.ini`` (the fully
resolved settings), ``manifest.json`` (seeds, wall time, outputs) and, where
it measures something, ``metrics.csv``.  Failures print one JSON line on
stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (FredParam, fred_encode, fred_select_mask, reconstruct_at_budget, reconstruct_ddif_many,
                        save_fred)
from .codec import fit_fields, warmup_dataset
from .config import COMMANDS, SCHEMA, ExperimentConfig, derive_seed, read_file, resolve
from .datagen import generate
from .distill import AugFlags, DistillConfig, TrainConfig, distill, evaluate
from .errors import InvalidArgument, NfdError
from .field import FieldConfig, SyntheticDataset, decode_many, load_bundle, param_count, save_bundle
from .grid import GridTensor, LabeledDataset, mse, psnr
from .gridio import load_external, read_dataset, write_dataset
from .harmonic import expansion_error, harmonic_count, max_width, zeta_threshold
from .nets import ConvNetConfig

log = logging.getLogger("nfd")

METRIC_COLUMNS = ("experiment", "repeat", "seed", "metric", "value", "mean", "std")


class RunContext:
    """Output directory, seeds and bookkeeping shared by every command."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = Path(cfg.run["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.seeds: dict[str, int] = {}
        self.outputs: list[str] = []
        self.start = time.perf_counter()

    @property
    def experiment(self) -> str:
        return self.cfg.run["experiment"] or self.cfg.command

    @property
    def threads(self) -> int:
        return max(1, int(self.cfg.run["threads"]))

    def seed(self, stream: str) -> int:
        s = derive_seed(self.cfg.run["seed"], f"{self.cfg.command}/{stream}")
        self.seeds[stream] = s
        return s

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(name)
        return p

    def write_metrics(self, rows: list[tuple[int, int, str, float]]):
        """``rows`` are ``(repeat, seed, metric, value)``; mean and std are per metric."""
        by_metric: dict[str, list[float]] = {}
        for _, _, metric, value in rows:
            by_metric.setdefault(metric, []).append(value)
        with open(self.path("metrics.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_COLUMNS)
            for rep, seed, metric, value in rows:
                vals = np.asarray(by_metric[metric])
                with np.errstate(invalid="ignore"):   # infinite PSNR of exact copies
                    w.writerow([self.experiment, rep, seed, metric, _fmt(value), _fmt(vals.mean()), _fmt(vals.std())])

    def finish(self):
        (self.out / "config.ini").write_text(self.cfg.to_ini())
        manifest = {
            "command": self.cfg.command,
            "version": __version__,
            "root_seed": self.cfg.run["seed"],
            "seeds": self.seeds,
            "wall_time_s": round(time.perf_counter() - self.start, 3),
            "outputs": sorted(set(self.outputs)) + ["config.ini"],
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _fmt(v: float) -> str:
    return repr(float(v))


def _need(cfg: ExperimentConfig, key: str) -> str:
    if not cfg[key]:
        raise InvalidArgument(f"[{cfg.command}] {key} is required")
    if not Path(cfg[key]).exists():
        raise InvalidArgument(f"{cfg[key]}: no such file")
    return cfg[key]


def _field_config(n: int, m: int, cfg: ExperimentConfig) -> FieldConfig:
    if cfg["budget"] > 0:
        from .baselines import ddif_config_for_budget
        return ddif_config_for_budget(n, m, cfg["budget"], omega0=cfg["omega0"])
    return FieldConfig.uniform(n, m, cfg["layers"], cfg["width"], cfg["omega0"])


def _parse_dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise InvalidArgument(f"bad dims {text!r}") from exc
    if not dims or min(dims) < 1:
        raise InvalidArgument(f"bad dims {text!r}")
    return dims


def _decoded_dataset(ds: SyntheticDataset, dims) -> LabeledDataset:
    arr = decode_many(ds.fields, dims)
    classes = max(ds.labels) + 1 if ds.labels else 1
    return LabeledDataset([GridTensor(a) for a in arr], ds.labels, classes)


# -- commands ---------------------------------------------------------------------

def cmd_gen_data(ctx: RunContext):
    c = ctx.cfg
    if c["generator"] == "external":
        train = load_external(_need(c, "path"), c["format"], c["labels_path"] or None)
        test = load_external(_need(c, "test_path"), c["format"], c["test_labels_path"] or None,
                             class_count=train.class_count) if c["test_path"] else None
    else:
        train = generate(c["generator"], c["classes"], c["per_class"], c["size"], c["channels"], ctx.seed("train"))
        test = generate(c["generator"], c["classes"], c["test_per_class"], c["size"], c["channels"], ctx.seed("test"))
    write_dataset(train, ctx.path("train.lds"))
    if test is not None:
        write_dataset(test, ctx.path("test.lds"))
    log.info("wrote %d training instances", len(train))


def cmd_encode(ctx: RunContext):
    c = ctx.cfg
    real = read_dataset(_need(c, "data"))
    fcfg = _field_config(len(real.shape), real.channels, c)
    seed = ctx.seed("fit")
    if c["per_class"] > 0:
        ds = warmup_dataset(real, c["per_class"], fcfg, seed, iters=c["iters"], lr=c["lr"], threads=ctx.threads)
    else:
        fields, _ = fit_fields(real.array(), fcfg, [seed + j for j in range(len(real))], c["iters"], c["lr"])
        ds = SyntheticDataset(fields, real.labels, real.shape)
    save_bundle(ds, ctx.path("bundle.nfb"))
    # decode what was stored (single precision) so cmd_decode reproduces it exactly
    ds = load_bundle(ctx.out / "bundle.nfb")
    decoded = _decoded_dataset(ds, ds.decode_dims)
    write_dataset(decoded, ctx.path("decoded.lds"))
    log.info("encoded %d fields of %d parameters", len(ds), param_count(fcfg))


def cmd_decode(ctx: RunContext):
    c = ctx.cfg
    ds = load_bundle(_need(c, "bundle"))
    dims = _parse_dims(c["dims"]) if c["dims"] else ds.decode_dims
    write_dataset(_decoded_dataset(ds, dims), ctx.path("decoded.lds"))


def cmd_distill(ctx: RunContext):
    c = ctx.cfg
    real = read_dataset(_need(c, "data"))
    if c["init"]:
        init = load_bundle(_need(c, "init"))
    else:
        fcfg = _field_config(len(real.shape), real.channels, c)
        init = warmup_dataset(real, c["per_class"], fcfg, ctx.seed("warmup"), iters=c["warmup_iters"],
                              lr=c["warmup_lr"], threads=ctx.threads)
        save_bundle(init, ctx.path("init.nfb"))
    net = ConvNetConfig(real.channels, real.shape, real.class_count, depth=c["net_depth"], width=c["net_width"],
                        norm="instance" if c["loss"] == "dm" else "none")
    dcfg = DistillConfig(loss=c["loss"], iterations=c["iterations"], real_batch=c["real_batch"],
                         synth_batch=c["synth_batch"] or None, field_lr=c["field_lr"], seed=ctx.seed("distill"),
                         augment=AugFlags(c["flip"], c["crop"], c["cutout"]), net=net, dc_loops=c["dc_loops"],
                         dc_inner_steps=c["dc_inner_steps"], dc_lr=c["dc_lr"])
    with open(ctx.path("loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss", "wall_ms"])

        def on_step(it, loss, wall_ms):
            w.writerow([it, _fmt(loss), f"{wall_ms:.3f}"])
            if it % 50 == 0:
                log.info("iteration %d loss %.6g", it, loss)

        out = distill(real, init, dcfg, on_step)
    save_bundle(out, ctx.path("distilled.nfb"))


def _load_synthetic(path: str):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"NFB1":
        return load_bundle(path)
    return read_dataset(path)


def cmd_eval(ctx: RunContext):
    c = ctx.cfg
    synth = _load_synthetic(_need(c, "synth"))
    test = read_dataset(_need(c, "test"))
    net = ConvNetConfig(test.channels, test.shape, test.class_count, depth=c["depth"], width=c["width"],
                        kind=c["model"])
    tcfg = TrainConfig(net=net, epochs=c["epochs"], lr=c["lr"], batch=c["batch"],
                       augment=AugFlags(c["flip"], c["crop"], c["cutout"]))
    seed = ctx.seed("train")
    _, _, accs = evaluate(synth, test, tcfg, c["repeats"], seed)
    ctx.write_metrics([(r, seed, "accuracy", a) for r, a in enumerate(accs)])
    log.info("accuracy %.4f +- %.4f", np.mean(accs), np.std(accs))


def cmd_baseline(ctx: RunContext):
    c = ctx.cfg
    real = read_dataset(_need(c, "data"))
    if c["budget"] < 1:
        raise InvalidArgument("[baseline] budget must be positive")
    instances = real.instances[:c["limit"]] if c["limit"] > 0 else real.instances
    labels = real.labels[:len(instances)]
    seed = ctx.seed("fit")
    method = c["method"]
    if method == "ddif":
        recs = reconstruct_ddif_many(instances, c["budget"], seed=seed, iters=c["iters"], lr=c["lr"],
                                     omega0=c["omega0"], restarts=c["restarts"])
        save_bundle(SyntheticDataset([r.detail for r in recs], labels, real.shape), ctx.path("fields.nfb"))
    else:
        mask = None
        if method == "fred":
            k = c["budget"] // real.channels
            if k < 1:
                raise InvalidArgument("[baseline] budget below one coefficient per channel")
            mask = fred_select_mask(instances, k) if c["shared_mask"] else None
        recs = [reconstruct_at_budget(g, c["budget"], method, mask=mask, idc_method=c["idc_method"])
                for g in instances]
        if method == "fred" and mask is not None:
            coeffs = [fred_encode(g, mask) for g in instances]
            save_fred(FredParam(mask, coeffs, list(labels)), ctx.path("coeffs.frd"))
    decoded = LabeledDataset([r.grid for r in recs], labels, real.class_count)
    write_dataset(decoded, ctx.path("decoded.lds"))
    rows = []
    for i, (r, g) in enumerate(zip(recs, instances)):
        rows.append((i, seed, "mse", mse(r.grid, g)))
        rows.append((i, seed, "psnr", psnr(r.grid, g)))
        rows.append((i, seed, "budget", float(r.budget)))
    ctx.write_metrics(rows)


def cmd_analyze(ctx: RunContext):
    c = ctx.cfg
    if c["kind"] == "theorem":
        with open(ctx.path("theorem.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["B", "d", "zeta_threshold", "zeta", "harmonic_count"])
            for b in range(c["bmin"], c["bmax"] + 1):
                d, th = max_width(b), zeta_threshold(b)
                z = math.ceil(th)
                w.writerow([b, d, _fmt(th), z, harmonic_count(z, d)])
    elif c["kind"] == "expansion":
        from .field import init_siren
        zetas = _parse_dims(c["zetas"])
        rng = np.random.default_rng(ctx.seed("fields"))
        with open(ctx.path("expansion.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["field", "zeta", "sup_error"])
            for j in range(c["fields"]):
                f = init_siren(FieldConfig.uniform(1, 1, 2, c["width"]), int(rng.integers(2 ** 31)))
                # keep the folded middle layer inside the unit ball, where truncation converges
                f.weights[1] = rng.uniform(-1, 1, size=f.weights[1].shape) / f.config.omega0
                f.biases[0] = rng.uniform(-0.5, 0.5, size=f.biases[0].shape) / f.config.omega0
                f.biases[1] = rng.uniform(-0.5, 0.5, size=f.biases[1].shape) / f.config.omega0
                for z in zetas:
                    w.writerow([j, z, _fmt(expansion_error(f, z))])
    else:
        raise InvalidArgument(f"unknown analysis {c['kind']!r}")


def _read_metrics(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != set(METRIC_COLUMNS):
        raise InvalidArgument(f"{path}: not a metrics file")
    return rows


def cmd_report(ctx: RunContext):
    c = ctx.cfg
    inputs = [p.strip() for p in c["inputs"].split(",") if p.strip()]
    if not inputs:
        raise InvalidArgument("[report] inputs is required")
    groups: dict[tuple[str, str], list[float]] = {}
    for item in inputs:
        path = Path(item)
        path = path / "metrics.csv" if path.is_dir() else path
        if not path.exists():
            raise InvalidArgument(f"{path}: no such file")
        for row in _read_metrics(path):
            groups.setdefault((row["experiment"], row["metric"]), []).append(float(row["value"]))
    with open(ctx.path("summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "metric", "count", "mean", "std", "min", "max"])
        for (exp, metric), vals in sorted(groups.items()):
            a = np.asarray(vals)
            with np.errstate(invalid="ignore"):
                w.writerow([exp, metric, len(a), _fmt(a.mean()), _fmt(a.std()), _fmt(a.min()), _fmt(a.max())])


HANDLERS = {
    "gen-data": cmd_gen_data, "encode": cmd_encode, "decode": cmd_decode, "distill": cmd_distill,
    "eval": cmd_eval, "baseline": cmd_baseline, "analyze": cmd_analyze, "report": cmd_report,
}


# -- argument parsing ---------------------------------------------------------------

def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nfd", description="Neural-field dataset distillation toolkit.")
    parser.add_argument("--version", action="version", version=f"nfd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command, help=f"run {command}")
        p.add_argument("--config", help="INI file with [run] and [%s] sections" % command)
        for section in ("run", command):
            for key, (kind, default, text) in SCHEMA[section].items():
                shown = str(default).lower() if kind is bool else default
                p.add_argument(_flag(key), dest=f"{section}.{key}", default=None,
                               metavar=kind.__name__.upper(), help=f"{text} (default: {shown})")
    return parser


def _overrides(ns: argparse.Namespace) -> dict[str, dict[str, object]]:
    out: dict[str, dict[str, object]] = {}
    for dest, value in vars(ns).items():
        if "." in dest and value is not None:
            section, key = dest.split(".", 1)
            out.setdefault(section, {})[key] = value
    return out


def _setup_logging():
    level = os.environ.get("NFD_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    ns = build_parser().parse_args(argv)
    try:
        file_values = read_file(ns.config) if ns.config else {}
        cfg = resolve(ns.command, file_values, _overrides(ns))
        ctx = RunContext(cfg)
        HANDLERS[ns.command](ctx)
        ctx.finish()
    except (NfdError, OSError) as exc:
        kind = getattr(exc, "kind", None) or type(exc).__name__
        print(json.dumps({"error": kind, "message": str(exc), "command": ns.command}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
