"""Command-line entry point: ``tempohier {train,evaluate,forecast,synth}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Options may also come from a ``key=value`` file passed with ``--config``;
flags given on the command line override the file.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .baselines import ctx_wind_avg_dataset
from .checkpoint import load_checkpoint, save_checkpoint
from .data import build_features, load_m5, synth_generate, write_m5
from .errors import ContractError, DataError, DimensionError, DomainError, TrainingError
from .hierarchy import HierarchySpec, bin_average
from .metrics import build_aggregation_tree, evaluate
from .trainer import DEFAULTS, TrainConfig, forecast_origin, train

log = logging.getLogger("tempohier")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("train", "evaluate", "forecast", "synth")
MODEL_CHOICES = ("encdec", "mono", "ctxwindavg")
LOSS_CHOICES = ("mse", "nbnll")
SPLITS = ("validation", "test")
COHERENCE_TOL = 1e-9


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = "train"
    data_dir: str | None = None
    model: str = "encdec"
    loss: str = "mse"
    lr: float | None = None
    rescale: bool | None = None
    epochs: int = 100
    seed: int = 0
    checkpoint: str | None = None
    out: str = "out"
    split: str = "test"
    series: int = 100
    days: int = 400
    audit_coherence: bool = False
    forecast_file: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.model not in MODEL_CHOICES:
            raise UsageError(f"unknown model {self.model!r}; choose from {', '.join(MODEL_CHOICES)}")
        if self.loss not in LOSS_CHOICES:
            raise UsageError(f"unknown loss {self.loss!r}; choose from {', '.join(LOSS_CHOICES)}")
        if self.split not in SPLITS:
            raise UsageError(f"unknown split {self.split!r}")
        if self.epochs < 0 or self.series < 1 or self.days < 1:
            raise UsageError("epochs, series and days must be positive")
        if self.lr is not None and not self.lr >= 0:
            raise UsageError(f"learning rate must be >= 0, got {self.lr}")

    def resolved(self) -> "RunConfig":
        """Fill learning rate and rescaling from the per-model defaults."""
        if self.model == "ctxwindavg":
            return self
        rescale, lr = DEFAULTS[(self.model, self.loss)]
        return dataclasses.replace(
            self,
            lr=self.lr if self.lr is not None else lr,
            rescale=self.rescale if self.rescale is not None else rescale,
        )

    def to_text(self) -> str:
        return "".join(f"{f.name}={_format_value(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**{k: _parse_value(known[k], v) for k, v in values.items()})

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls.from_mapping(read_key_values(text))


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("yes", "true", "1", "on"):
        return True
    if s in ("no", "false", "0", "off"):
        return False
    raise UsageError(f"expected yes/no, got {s!r}")


def _parse_value(field: dataclasses.Field, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    kind = str(field.type)
    if raw == "" and "None" in kind:
        return None
    try:
        if kind.startswith("bool"):
            return _parse_bool(raw)
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError as exc:
        raise UsageError(f"bad value for {field.name}: {raw!r}") from exc
    return raw


def read_key_values(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tempohier", description="Coherent daily/weekly sales forecasting")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "train": "train a model and write checkpoint, history and config echo",
        "evaluate": "score a checkpoint, the baseline or a forecast file on a held-out window",
        "forecast": "write daily and weekly forecast CSVs",
        "synth": "generate a synthetic dataset in the M5 file layout",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        # defaults are None so that only explicit flags override the config file
        p.add_argument("--config", help="key=value file with any of the options below")
        p.add_argument("--data-dir")
        p.add_argument("--model", choices=MODEL_CHOICES)
        p.add_argument("--loss", choices=LOSS_CHOICES)
        p.add_argument("--lr", type=float)
        p.add_argument("--rescale", choices=("yes", "no"))
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--checkpoint")
        p.add_argument("--out")
        p.add_argument("--split", choices=SPLITS)
        if name == "synth":
            p.add_argument("--series", type=int)
            p.add_argument("--days", type=int)
        if name == "evaluate":
            p.add_argument("--audit-coherence", action="store_const", const="yes")
            p.add_argument("--forecast-file", help="score a daily forecast CSV instead of a model")
        if name == "forecast":
            p.add_argument("--audit-coherence", action="store_const", const="yes")
    return parser


def config_from_args(argv) -> tuple[RunConfig, argparse.Namespace]:
    ns = build_parser().parse_args(argv)
    values: dict[str, str] = {}
    if ns.config:
        path = Path(ns.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        values.update(read_key_values(path.read_text()))
    for key, v in vars(ns).items():
        if key in ("config", "verbose") or v is None:
            continue
        values[key] = v if isinstance(v, str) else repr(v)
    values["command"] = ns.command
    return RunConfig.from_mapping(values), ns


# -- commands ---------------------------------------------------------------


def _require_data(cfg: RunConfig):
    if not cfg.data_dir:
        raise UsageError("--data-dir is required")
    return load_m5(cfg.data_dir)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _check_coherence(fine, coarse, spec: HierarchySpec, tol: float = COHERENCE_TOL) -> float:
    gap = float(np.max(np.abs(bin_average(fine, spec) - coarse))) if len(fine) else 0.0
    if not gap <= tol:
        raise DomainError(f"coherence audit failed: max |bin_average(fine) - coarse| = {gap:.3e}")
    log.info("coherence audit passed, max gap %.3e", gap)
    return gap


def cmd_train(cfg: RunConfig) -> int:
    from .plotting import plot_history

    if cfg.model == "ctxwindavg":
        raise UsageError("the ctxwindavg baseline has no parameters to train")
    cfg = cfg.resolved()
    ds = _require_data(cfg)
    out = _out_dir(cfg)
    spec = HierarchySpec()
    tc = TrainConfig(loss=cfg.loss, rescale=cfg.rescale, lr=cfg.lr, epochs=cfg.epochs, seed=cfg.seed)
    result = train(cfg.model, tc, build_features(ds), spec)
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else out / "model.ckpt"
    save_checkpoint(ckpt, result.params, result.config)
    result.write_history(out / "history.csv")
    (out / "run_config.txt").write_text(cfg.to_text())
    if result.history:
        plot_history(out / "training.png", result.history, title=f"{cfg.model} / {cfg.loss}")
    print(f"checkpoint={ckpt}")
    print(f"best_epoch={result.best_epoch}")
    print(f"best_val_rmsed={result.best_val_rmsed:.6f}")
    if result.aborted:
        print(f"aborted={result.aborted}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _model_forecasts(cfg: RunConfig, ds, origin: int, spec: HierarchySpec):
    if cfg.model == "ctxwindavg" and not cfg.checkpoint:
        return ctx_wind_avg_dataset(ds, origin, spec)
    if not cfg.checkpoint:
        raise UsageError("--checkpoint is required unless --model ctxwindavg")
    params, mcfg = load_checkpoint(cfg.checkpoint)
    fs = build_features(ds)
    if mcfg.schema.digest() != fs.schema.digest():
        raise DataError("checkpoint feature schema does not match the dataset's categorical vocabulary")
    return forecast_origin(mcfg, params, fs, origin)


def read_forecast_csv(path, ids) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"forecast file not found: {path}")
    with path.open(newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != "id":
        raise DataError(f"{path}: missing 'id' header")
    table = {}
    for n, row in enumerate(rows[1:], 2):
        try:
            table[row[0]] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise DataError(f"{path}, line {n}: {exc}") from exc
    missing = [i for i in ids if i not in table]
    if missing:
        raise DataError(f"{path}: no forecast for {len(missing)} series, e.g. {missing[0]}")
    values = np.array([table[i] for i in ids], dtype=np.float64)
    if not np.isfinite(values).all():
        raise DataError(f"{path}: non-finite forecast values")
    return values


def write_forecast_csv(path, ids, values: np.ndarray, prefix: str) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id"] + [f"{prefix}{j + 1}" for j in range(values.shape[1])])
        for i, row in zip(ids, values):
            w.writerow([i] + [f"{v:.6f}" for v in row])
    return path


def cmd_evaluate(cfg: RunConfig) -> int:
    from .plotting import plot_forecasts

    ds = _require_data(cfg)
    out = _out_dir(cfg)
    spec = HierarchySpec()
    origin = ds.split_origin(cfg.split)
    if cfg.forecast_file:
        fine = read_forecast_csv(cfg.forecast_file, ds.ids)
        if fine.shape[1] != spec.h:
            raise DataError(f"forecast file has {fine.shape[1]} days, expected {spec.h}")
        coarse = bin_average(fine, spec)
    else:
        fine, coarse = _model_forecasts(cfg, ds, origin, spec)
    if cfg.audit_coherence:
        _check_coherence(fine, coarse, spec)
    report = evaluate(ds, build_aggregation_tree(ds), fine, coarse, origin, spec)
    if not all(np.isfinite(v) for v in report.as_dict().values()):
        log.warning("some metrics are not finite: %s", report.as_dict())
    report.write(out)
    plot_forecasts(out / "forecasts.png", ds.sales[:, origin - spec.c:origin].astype(np.float64),
                   ds.sales[:, origin:origin + spec.h].astype(np.float64), fine, coarse, spec,
                   ids=ds.ids, title=f"{cfg.split} window")
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_forecast(cfg: RunConfig) -> int:
    ds = _require_data(cfg)
    out = _out_dir(cfg)
    spec = HierarchySpec()
    fine, coarse = _model_forecasts(cfg, ds, ds.split_origin(cfg.split), spec)
    if cfg.audit_coherence:
        _check_coherence(fine, coarse, spec)
    daily = write_forecast_csv(out / "forecast_daily.csv", ds.ids, fine, "F")
    weekly = write_forecast_csv(out / "forecast_weekly.csv", ds.ids, coarse, "W")
    print(f"daily={daily}")
    print(f"weekly={weekly}")
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    ds = synth_generate(cfg.seed, cfg.series, cfg.days)
    try:
        paths = write_m5(ds, out)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {out}: {exc}") from exc
    for p in paths:
        print(p)
    return EXIT_OK


HANDLERS = {"train": cmd_train, "evaluate": cmd_evaluate, "forecast": cmd_forecast, "synth": cmd_synth}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    verbose = "-v" in argv or "--verbose" in argv
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg, _ = config_from_args(argv)
        return HANDLERS[cfg.command](cfg)
    except (UsageError, ContractError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, DomainError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
