"""Command-line front end.

Subcommands: gen-data, train, eval, noise-bench, ood-bench, ablate, probe,
ttest, report. The environment variable CMIR_SEED overrides the config
seed. Exit codes: 0 success, 1 run failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace as dc_replace

import numpy as np

from . import benches, reporting
from .errors import CmirError, ConfigError
from .metrics import probe as run_probe
from .metrics import paired_ttest
from .model import load_checkpoint, save_checkpoint
from .scm import generate, load_dataset, oracle_regression, save_dataset
from .trainer import TrainConfig, fit, load_config


def _apply_seed_override(cfg: TrainConfig) -> TrainConfig:
    env = os.environ.get("CMIR_SEED")
    if env is None:
        return cfg
    seed = int(env)
    return dc_replace(cfg, seed=seed, scm=dc_replace(cfg.scm, seed=seed))


def _parse_nr(spec: str) -> list[float]:
    """'0.1:0.7:0.1' -> [0.1, 0.2, ..., 0.7]; a bare number is a single NR."""
    if ":" not in spec:
        return [float(spec)]
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"bad NR range {spec!r} (want start:stop:step)")
    start, stop, step = (float(p) for p in parts)
    if step <= 0:
        raise ConfigError("NR step must be positive")
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(count)]


def _print_report(name: str, report) -> None:
    parts = [
        f"{k}={v:.6f}"
        for k, v in report.as_dict().items()
        if k != "n" and v is not None
    ]
    print(f"{name}: " + " ".join(parts))


def cmd_gen_data(args) -> int:
    cfg = _apply_seed_override(load_config(args.config))
    dataset = generate(cfg.scm)
    save_dataset(dataset, args.out)
    print(f"wrote {sum(s.n for s in dataset.splits().values())} samples to {args.out}")
    for which in ("causal_latent", "spurious_latent", "raw"):
        scores = oracle_regression(dataset, which)
        print(
            f"oracle {which}: ood mae={scores['mae']:.4f} acc2={scores['acc2']:.4f}"
        )
    return 0


def cmd_train(args) -> int:
    cfg = _apply_seed_override(load_config(args.config))
    dataset = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "model.ckpt")
    record = fit(dc_replace(cfg, checkpoint_path=ckpt), dataset)
    reporting.write_csv(
        record.metric_rows(run_id=f"seed{cfg.seed}"),
        os.path.join(args.out, "metrics.csv"),
        ["run", "split", "corruption", "metric", "value"],
    )
    with open(os.path.join(args.out, "run.txt"), "w") as fh:
        for key, value in sorted(record.config.items()):
            fh.write(f"{key}={value}\n")
        fh.write(f"best_epoch={record.best_epoch}\n")
        fh.write(f"best_val={record.best_val}\n")
        fh.write(f"wall_seconds={record.wall_seconds:.2f}\n")
        for epoch in record.history:
            fh.write(
                "epoch={epoch} total={train_total:.6f} pred={train_pred:.6f} "
                "inv={train_inv:.6f} dec={train_dec:.6f} rec={train_rec:.6f} "
                "val={val_score:.6f}\n".format(**epoch)
            )
    for split, report in sorted(record.reports.items()):
        _print_report(split, report)
    print(f"checkpoint: {ckpt}")
    return 0


def _eval_cfg(dataset, vanilla: bool) -> TrainConfig:
    return TrainConfig(
        task=dataset.config.task,
        vanilla=vanilla,
        scm=dataset.config,
        d=1,  # placeholder dims; evaluation never rebuilds the model
        d_prime=1,
    )


def cmd_eval(args) -> int:
    from .trainer import evaluate

    model = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    cfg = _eval_cfg(dataset, args.vanilla)
    for split, data in dataset.splits().items():
        _print_report(split, evaluate(model, data, cfg))
    return 0


def cmd_noise_bench(args) -> int:
    model = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    cfg = _eval_cfg(dataset, args.vanilla)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    rows = benches.noise_bench(
        model, dataset, cfg, kinds, _parse_nr(args.nr), split=args.split
    )
    columns = ["kind", "NR", "acc2", "mae", "acc7", "f1", "corr"]
    print(",".join(columns))
    for row in rows:
        print(",".join("" if row[c] is None else str(row[c]) for c in columns))
    if args.out:
        reporting.write_csv(rows, args.out, columns)
    return 0


def cmd_ood_bench(args) -> int:
    cfg = _apply_seed_override(load_config(args.config))
    seeds = [cfg.seed + i for i in range(args.seeds)]
    summary = benches.ood_bench(cfg, seeds)
    print(f"seeds: {seeds}")
    print(
        "median OOD acc2: full={:.4f} vanilla={:.4f} delta={:+.4f}".format(
            summary["median_full_ood_acc2"],
            summary["median_vanilla_ood_acc2"],
            summary["ood_acc2_delta"],
        )
    )
    print(
        "median ID acc2:  full={:.4f} vanilla={:.4f}".format(
            summary["median_full_id_acc2"], summary["median_vanilla_id_acc2"]
        )
    )
    if "median_full_worst_mae" in summary:
        print(
            "median worst-case env MAE: full={:.4f} vanilla={:.4f}".format(
                summary["median_full_worst_mae"],
                summary["median_vanilla_worst_mae"],
            )
        )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        rows = []
        for entry in summary["per_seed"]:
            for key, value in entry.items():
                if key in ("full_records", "vanilla_records", "seed"):
                    continue
                model_name, _, metric = key.partition("_")
                rows.append(
                    {
                        "run": f"seed{entry['seed']}-{model_name}",
                        "split": "test" if "ood" in key or "worst" in key else "test_id",
                        "corruption": "none",
                        "metric": metric,
                        "value": value,
                    }
                )
        reporting.write_csv(
            rows,
            os.path.join(args.out, "ood_bench.csv"),
            ["run", "split", "corruption", "metric", "value"],
        )
    return 0


def cmd_ablate(args) -> int:
    cfg = _apply_seed_override(load_config(args.config))
    record = benches.ablate_run(cfg, args.drop)
    for split, report in sorted(record.reports.items()):
        _print_report(f"{args.drop}/{split}", report)
    return 0


def cmd_probe(args) -> int:
    model = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    result = run_probe(model, dataset, args.target, args.input)
    if isinstance(result.score, float):
        print(f"probe target={args.target} input={args.input} mse={result.score:.6f}")
    else:
        _print_report(f"probe target={args.target} input={args.input}", result.score)
    return 0


def cmd_ttest(args) -> int:
    def load_scores(path):
        with open(path) as fh:
            return [float(line) for line in fh if line.strip()]

    p = paired_ttest(load_scores(args.a), load_scores(args.b))
    print(f"p_value={p:.6g}")
    return 0


def cmd_report(args) -> int:
    out_dir = args.out or os.path.join(args.dir, "report")
    outputs = reporting.summarize_dir(args.dir, out_dir)
    print(f"summary: {outputs['summary_csv']}")
    print(f"text:    {outputs['summary_txt']}")
    for chart in outputs["charts"]:
        print(f"figure:  {chart}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmir",
        description="Train and evaluate disentangled invariant representations "
        "on the synthetic SCM testbed.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on every split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vanilla", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("noise-bench", help="corruption sweep on a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--kinds", default="g")
    p.add_argument("--nr", default="0.1:0.7:0.1")
    p.add_argument("--split", default="test_id")
    p.add_argument("--vanilla", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_noise_bench)

    p = sub.add_parser("ood-bench", help="full model vs raw-fusion baseline")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ood_bench)

    p = sub.add_parser("ablate", help="train with one constraint removed")
    p.add_argument("--config", required=True)
    p.add_argument("--drop", required=True, choices=["inv", "dec", "rec", "all"])
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("probe", help="probe frozen representations")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True, choices=["env", "label"])
    p.add_argument("--input", required=True, choices=["inv", "spu"])
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("ttest", help="paired t-test between two score files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(fn=cmd_ttest)

    p = sub.add_parser("report", help="aggregate CSVs and render figures")
    p.add_argument("--dir", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CmirError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
