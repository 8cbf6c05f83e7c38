"""Full-M5 run: CtxWindAVG anchor plus EncDec and Mono at the default settings.

Usage: python scripts/reproduce_m5.py /path/to/m5 [--epochs 100] [--out m5_run]

Expects calendar.csv, sell_prices.csv and sales_train_evaluation.csv in the
given directory. Each trained model is scored on the test window and the
metrics land in ``<out>/<model>/metrics.{txt,json}``. Slow on CPU.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from tempohier.baselines import ctx_wind_avg_dataset
from tempohier.checkpoint import save_checkpoint
from tempohier.data import build_features, load_m5
from tempohier.hierarchy import HierarchySpec
from tempohier.metrics import build_aggregation_tree, evaluate
from tempohier.trainer import TrainConfig, forecast_origin, train


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("data_dir")
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="m5_run")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    spec = HierarchySpec()
    ds = load_m5(args.data_dir)
    tree = build_aggregation_tree(ds)
    origin = ds.split_origin("test")
    out = Path(args.out)

    fine, coarse = ctx_wind_avg_dataset(ds, origin, spec)
    rep = evaluate(ds, tree, fine, coarse, origin, spec)
    rep.write(out / "ctxwindavg")
    print("ctxwindavg", rep.to_text().replace("\n", " "))

    fs = build_features(ds)
    for kind in ("encdec", "mono"):
        res = train(kind, TrainConfig(loss="mse", epochs=args.epochs, seed=args.seed), fs)
        save_checkpoint(out / kind / "model.ckpt", res.params, res.config)
        res.write_history(out / kind / "history.csv")
        fine, coarse = forecast_origin(res.config, res.params, fs, origin)
        rep = evaluate(ds, tree, fine, coarse, origin, spec)
        rep.write(out / kind)
        print(kind, f"best_epoch={res.best_epoch}", rep.to_text().replace("\n", " "))


if __name__ == "__main__":
    main()
