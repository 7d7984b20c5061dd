"""Evaluation metrics, the paired t-test, and representation probes.

Regression metrics follow the sentiment-analysis conventions: Acc7 rounds
and clamps to the [-3, 3] integer scale, Acc2/F1 skip neutral (zero-label)
samples and treat positive values as the positive class, MAE and Pearson
correlation use all samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConfigError, ContractError, DimensionError
from .model import CmirModel, Mlp
from .optim import AdamW
from .rng import stream
from .tensor import Tensor, backward

PROBE_STEPS = 200
PROBE_LR = 1e-2


@dataclass
class MetricReport:
    n: int
    mae: float | None = None
    corr: float | None = None
    acc7: float | None = None
    acc2: float | None = None
    f1: float | None = None
    positives: int = 0
    negatives: int = 0

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "mae": self.mae,
            "corr": self.corr,
            "acc7": self.acc7,
            "acc2": self.acc2,
            "f1": self.f1,
        }


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    if a.std() == 0 or b.std() == 0:
        return None
    return float(np.corrcoef(a, b)[0, 1])


def _binary_scores(pred_pos: np.ndarray, true_pos: np.ndarray) -> tuple[float, float]:
    acc = float((pred_pos == true_pos).mean())
    tp = int(np.sum(pred_pos & true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    if tp == 0:
        return acc, 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return acc, 2 * precision * recall / (precision + recall)


def compute_metrics(pred, target, task: str) -> MetricReport:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if task == "classification":
        if pred.ndim != 2:
            raise DimensionError("classification expects an N x C logit matrix")
        labels = target.ravel().astype(np.int64)
        if labels.shape[0] != pred.shape[0]:
            raise DimensionError("prediction/target length mismatch")
        hard = pred.argmax(axis=1)
        acc2, f1 = _binary_scores(hard == 1, labels == 1)
        return MetricReport(
            n=labels.shape[0],
            acc2=acc2,
            f1=f1,
            positives=int((labels == 1).sum()),
            negatives=int((labels == 0).sum()),
        )
    if task != "regression":
        raise ConfigError(f"unknown task {task!r}")
    pred = pred.ravel()
    target = target.ravel()
    if pred.shape != target.shape:
        raise DimensionError("prediction/target length mismatch")
    report = MetricReport(n=pred.shape[0])
    report.mae = float(np.abs(pred - target).mean())
    report.corr = _pearson(pred, target)
    rounded_pred = np.clip(np.rint(pred), -3, 3)
    rounded_true = np.clip(np.rint(target), -3, 3)
    report.acc7 = float((rounded_pred == rounded_true).mean())
    nonneutral = target != 0
    report.positives = int((target > 0).sum())
    report.negatives = int((target < 0).sum())
    if nonneutral.any():
        report.acc2, report.f1 = _binary_scores(
            pred[nonneutral] > 0, target[nonneutral] > 0
        )
    return report


# ------------------------------------------------------------------- t-test


def paired_ttest(scores_a, scores_b) -> float:
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError("paired scores must be equal-length vectors")
    if a.shape[0] < 2:
        raise ContractError("paired t-test needs at least two score pairs")
    diff = a - b
    if diff.std(ddof=1) == 0:
        return 0.0 if diff.mean() != 0 else 1.0
    t = diff.mean() / (diff.std(ddof=1) / np.sqrt(diff.shape[0]))
    return float(2.0 * stats.t.sf(abs(t), df=diff.shape[0] - 1))


# -------------------------------------------------------------------- probes


@dataclass
class ProbeResult:
    target: str  # env | label
    input_kind: str  # inv | spu
    score: float | MetricReport
    trained_steps: int = PROBE_STEPS
    lr: float = PROBE_LR
    warning: str | None = None


def _representations(model: CmirModel, split, input_kind: str) -> np.ndarray:
    blocks = []
    for m in range(model.config.num_modalities):
        adapted = model.adapt(m, Tensor(split.x[m]))
        z_inv, z_spu = model.encode(m, adapted)
        blocks.append((z_inv if input_kind == "inv" else z_spu).data)
    return np.hstack(blocks)


def _fit_probe(feats, targets, task, out_dim, seed) -> Mlp:
    probe = Mlp(feats.shape[1], 32, out_dim, depth=2, rng=stream(seed, "probe"))
    opt = AdamW(probe.parameters(), lr=PROBE_LR)
    from .losses import prediction_loss  # local import avoids a cycle

    x = Tensor(feats)
    t = Tensor(targets.reshape(-1, 1))
    kind = "cross_entropy" if task == "classification" else "mse"
    for _ in range(PROBE_STEPS):
        opt.zero_grad()
        loss = prediction_loss(probe(x), t, kind)
        backward(loss)
        opt.step()
    return probe


def probe(
    model: CmirModel,
    dataset,
    target: str,
    input_kind: str,
    seed: int = 0,
    trained: bool = True,
) -> ProbeResult:
    """Fit a small frozen-representation probe and score it held-out.

    env target: fit on 80% of the training split to predict the per-sample
    spurious-strength value, score MSE on the remaining 20%. label target:
    fit on the training split, score on the OOD test split.
    """
    if target not in ("env", "label"):
        raise ConfigError(f"unknown probe target {target!r}")
    if input_kind not in ("inv", "spu"):
        raise ConfigError(f"unknown probe input {input_kind!r}")
    before = [p.data.copy() for p in model.parameters()]
    task = dataset.config.task if target == "label" else "regression"

    train_feats = _representations(model, dataset.train, input_kind)
    if target == "env":
        cut = int(0.8 * train_feats.shape[0])
        fit_x, fit_y = train_feats[:cut], dataset.train.gamma[:cut]
        probe_net = _fit_probe(fit_x, fit_y, "regression", 1, seed)
        pred = probe_net(Tensor(train_feats[cut:])).data.ravel()
        score: float | MetricReport = float(
            np.mean((pred - dataset.train.gamma[cut:]) ** 2)
        )
    else:
        if task == "classification":
            fit_y = dataset.train.y_class.astype(np.float64)
            out_dim = 2
        else:
            fit_y = dataset.train.y
            out_dim = 1
        probe_net = _fit_probe(train_feats, fit_y, task, out_dim, seed)
        test_feats = _representations(model, dataset.test, input_kind)
        pred = probe_net(Tensor(test_feats)).data
        truth = (
            dataset.test.y_class if task == "classification" else dataset.test.y
        )
        score = compute_metrics(
            pred if task == "classification" else pred.ravel(), truth, task
        )

    after = model.parameters()
    for old, p in zip(before, after):
        if not np.array_equal(old, p.data):
            raise ContractError("probe mutated the frozen model")
    return ProbeResult(
        target=target,
        input_kind=input_kind,
        score=score,
        warning=None if trained else "probed model was never trained",
    )
