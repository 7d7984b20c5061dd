"""Benchmark drivers shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import replace as dc_replace

import numpy as np

from .errors import ConfigError
from .metrics import MetricReport
from .model import CmirModel
from .rng import derive_seed
from .scm import CorruptionSpec, ScmDataset, Split, corrupt
from .trainer import RunRecord, TrainConfig, evaluate, fit

KIND_ALIASES = {
    "g": "gaussian_mix",
    "l": "laplace_mix",
    "e": "random_erase",
}


def noise_bench(
    model: CmirModel,
    dataset: ScmDataset,
    cfg: TrainConfig,
    kinds: list[str],
    nr_list: list[float],
    split: str = "test_id",
) -> list[dict]:
    """Evaluate a trained model on corrupted copies of a test split.

    Returns one row per (kind, NR) plus an Avg row per kind.
    """
    base = dataset.splits()[split]
    rows = []
    for kind in kinds:
        kind = KIND_ALIASES.get(kind, kind)
        maes, accs = [], []
        for nr in nr_list:
            spec = CorruptionSpec(
                kind=kind, NR=nr, seed=derive_seed(cfg.seed, "bench", kind)
            )
            report = evaluate(model, corrupt(base, spec), cfg)
            rows.append(_bench_row(kind, nr, report))
            if report.mae is not None:
                maes.append(report.mae)
            if report.acc2 is not None:
                accs.append(report.acc2)
        rows.append(
            {
                "kind": kind,
                "NR": "Avg",
                "acc2": float(np.mean(accs)) if accs else None,
                "mae": float(np.mean(maes)) if maes else None,
                "acc7": None,
                "f1": None,
                "corr": None,
            }
        )
    return rows


def _bench_row(kind: str, nr, report: MetricReport) -> dict:
    return {
        "kind": kind,
        "NR": nr,
        "acc2": report.acc2,
        "mae": report.mae,
        "acc7": report.acc7,
        "f1": report.f1,
        "corr": report.corr,
    }


def worst_case_env_mae(model: CmirModel, split: Split, cfg: TrainConfig) -> float:
    """Max per-environment MAE over the split's environment set."""
    from .trainer import predict_split

    preds = predict_split(model, split, cfg)
    if cfg.task == "classification":
        raise ConfigError("worst-case MAE is a regression quantity")
    worst = 0.0
    for env in np.unique(split.env):
        mask = split.env == env
        worst = max(worst, float(np.abs(preds[mask] - split.y[mask]).mean()))
    return worst


def ood_bench(cfg: TrainConfig, seeds: list[int], dataset: ScmDataset | None = None) -> dict:
    """Train the full model and the raw-fusion baseline under identical
    seeds, then compare in-distribution vs OOD performance."""
    per_seed = []
    for seed in seeds:
        full_cfg = dc_replace(cfg, seed=seed, vanilla=False, checkpoint_path=None)
        vanilla_cfg = dc_replace(cfg, seed=seed, vanilla=True, checkpoint_path=None)
        full = fit(full_cfg, dataset)
        vanilla = fit(vanilla_cfg, dataset)
        ds = dataset
        if ds is None:
            from .scm import generate

            ds = generate(full_cfg.scm)
        entry = {
            "seed": seed,
            "full_id_acc2": full.reports["test_id"].acc2,
            "full_ood_acc2": full.reports["test"].acc2,
            "vanilla_id_acc2": vanilla.reports["test_id"].acc2,
            "vanilla_ood_acc2": vanilla.reports["test"].acc2,
            "full_records": full,
            "vanilla_records": vanilla,
        }
        if cfg.task == "regression":
            entry["full_worst_mae"] = worst_case_env_mae(full.model, ds.test, full_cfg)
            entry["vanilla_worst_mae"] = worst_case_env_mae(
                vanilla.model, ds.test, vanilla_cfg
            )
            entry["full_ood_mae"] = full.reports["test"].mae
            entry["vanilla_ood_mae"] = vanilla.reports["test"].mae
        per_seed.append(entry)
    summary = {
        "seeds": seeds,
        "per_seed": per_seed,
        "median_full_ood_acc2": float(
            np.median([e["full_ood_acc2"] for e in per_seed])
        ),
        "median_vanilla_ood_acc2": float(
            np.median([e["vanilla_ood_acc2"] for e in per_seed])
        ),
        "median_full_id_acc2": float(
            np.median([e["full_id_acc2"] for e in per_seed])
        ),
        "median_vanilla_id_acc2": float(
            np.median([e["vanilla_id_acc2"] for e in per_seed])
        ),
    }
    if cfg.task == "regression":
        summary["median_full_worst_mae"] = float(
            np.median([e["full_worst_mae"] for e in per_seed])
        )
        summary["median_vanilla_worst_mae"] = float(
            np.median([e["vanilla_worst_mae"] for e in per_seed])
        )
    summary["ood_acc2_delta"] = (
        summary["median_full_ood_acc2"] - summary["median_vanilla_ood_acc2"]
    )
    return summary


def ablate_run(cfg: TrainConfig, drop: str, dataset: ScmDataset | None = None) -> RunRecord:
    flags = {
        "inv": {"no_inv": True},
        "dec": {"no_dec": True},
        "rec": {"no_rec": True},
        "all": {"vanilla": True},
        "none": {},
    }
    if drop not in flags:
        raise ConfigError(f"unknown ablation {drop!r} (want inv|dec|rec|all)")
    return fit(dc_replace(cfg, checkpoint_path=None, **flags[drop]), dataset)
