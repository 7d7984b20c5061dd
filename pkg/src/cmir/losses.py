"""The objective terms: prediction, invariance, orthogonality, reconstruction.

Scale conventions (recorded in every config echo):
  - the L1 invariance distance is averaged over elements by default, so the
    weight on it stays meaningful as batch size and width change; the raw
    summed form is available via normalize=False
  - the cross-correlation matrix is scaled by 1/d so entries are bona fide
    per-sample correlations in [-1, 1]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError
from .tensor import Tensor

_PROB_FLOOR = 1e-12
_STD_EPS = 1e-8


@dataclass
class LossBreakdown:
    pred: Tensor
    inv: list
    dec: list
    rec: list
    total: Tensor
    lambda1: float
    lambda2: float
    lambda3: float
    orth_alpha: float

    def as_floats(self) -> dict:
        return {
            "pred": self.pred.item(),
            "inv": [t.item() for t in self.inv],
            "dec": [t.item() for t in self.dec],
            "rec": [t.item() for t in self.rec],
            "total": self.total.item(),
        }


# ------------------------------------------------------------------ prediction


def prediction_loss(pred: Tensor, target: Tensor, kind: str) -> Tensor:
    if kind == "mse":
        _require_same_shape(pred, target)
        return T.mean_all(T.square(pred - target))
    if kind == "mae":
        _require_same_shape(pred, target)
        return T.mean_all(T.absolute(pred - target))
    if kind == "cross_entropy":
        classes = np.asarray(target.data, dtype=np.int64).ravel()
        n, c = pred.shape
        if classes.shape[0] != n:
            raise DimensionError(
                f"{n} logit rows but {classes.shape[0]} class ids"
            )
        if classes.min() < 0 or classes.max() >= c:
            raise DataError(
                f"class id outside [0, {c}): {classes.min()}..{classes.max()}"
            )
        onehot = np.zeros((n, c))
        onehot[np.arange(n), classes] = 1.0
        lse = _logsumexp_rows(pred)
        picked = T.sum_axis1(pred * Tensor(onehot))
        return T.mean_all(lse - picked)
    raise ConfigError(f"unknown prediction loss kind {kind!r}")


def _require_same_shape(a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


def _logsumexp_rows(logits: Tensor) -> Tensor:
    shift = Tensor(logits.data.max(axis=1, keepdims=True))  # constant shift
    return T.log(T.sum_axis1(T.exp(logits - shift))) + shift


def softmax_rows(logits: Tensor) -> Tensor:
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    e = T.exp(logits - shift)
    return e / T.sum_axis1(e)


# ------------------------------------------------------------------ invariance


def invariance_loss_l1(variants, pairs, normalize: bool = True) -> Tensor:
    variants = list(variants)
    shape = variants[0].shape
    for v in variants:
        if v.shape != shape:
            raise DimensionError(
                f"variant shapes differ: {shape} vs {v.shape}"
            )
    total = Tensor(0.0)
    for i, j in pairs:
        diff = T.absolute(variants[i] - variants[j])
        total = total + (T.mean_all(diff) if normalize else T.sum_all(diff))
    return total


def invariance_loss_kl(unimodal_logits, pairs) -> Tensor:
    logits = list(unimodal_logits)
    shape = logits[0].shape
    if shape[1] < 2:
        raise ConfigError(
            "distribution-matching invariance needs class logits; use the L1 "
            "form for regression"
        )
    for l in logits:
        if l.shape != shape:
            raise DimensionError(f"logit shapes differ: {shape} vs {l.shape}")
    probs = [T.clamp_min(softmax_rows(l), _PROB_FLOOR) for l in logits]
    logs = [T.log(p) for p in probs]
    total = Tensor(0.0)
    for i, j in pairs:
        kl_ij = T.sum_axis1(probs[i] * (logs[i] - logs[j]))
        kl_ji = T.sum_axis1(probs[j] * (logs[j] - logs[i]))
        total = total + T.mean_all(kl_ij + kl_ji)
    return total


# --------------------------------------------------------------- orthogonality


def normalize_rows(Z: Tensor) -> Tensor:
    if Z.shape[1] < 2:
        raise DimensionError("row normalization needs at least two features")
    centered = Z - T.mean_axis1(Z)
    std = T.sqrt(T.mean_axis1(T.square(centered)))  # population std
    return centered / (std + Tensor(_STD_EPS))


def correlation_matrix(Z_inv: Tensor, Z_spu: Tensor) -> Tensor:
    _require_same_shape(Z_inv, Z_spu)
    d = Z_inv.shape[1]
    return Tensor(1.0 / d) * T.matmul(normalize_rows(Z_inv), T.transpose(normalize_rows(Z_spu)))


def orthogonality_loss(C: Tensor, orth_alpha: float) -> Tensor:
    n, m = C.shape
    if n != m:
        raise DimensionError(f"correlation matrix must be square, got {C.shape}")
    if not 0.0 <= orth_alpha <= 1.0:
        raise ConfigError(f"orth_alpha must lie in [0, 1], got {orth_alpha}")
    # keep the diagonal at full weight, scale off-diagonal terms by alpha
    weights = np.full((n, n), orth_alpha)
    np.fill_diagonal(weights, 1.0)
    weighted = C * Tensor(weights)
    return T.sqrt(T.sum_all(T.square(weighted)))


# -------------------------------------------------------------- reconstruction


def reconstruction_loss(X: Tensor, X_hat: Tensor) -> Tensor:
    _require_same_shape(X, X_hat)
    return T.mean_all(T.square(X - X_hat))


# ----------------------------------------------------------------- total


def total_objective(
    pred: Tensor,
    inv,
    dec,
    rec,
    lambda1: float,
    lambda2: float,
    lambda3: float,
    orth_alpha: float = 1.0,
) -> LossBreakdown:
    for name, lam in (("lambda1", lambda1), ("lambda2", lambda2), ("lambda3", lambda3)):
        if lam < 0:
            raise ConfigError(f"{name} must be nonnegative, got {lam}")
    inv, dec, rec = list(inv), list(dec), list(rec)
    if not len(inv) == len(dec) == len(rec):
        raise DimensionError("per-modality term lists must have equal length")
    total = pred
    for inv_m, dec_m, rec_m in zip(inv, dec, rec):
        total = total + Tensor(lambda1) * inv_m
        total = total + Tensor(lambda2) * dec_m
        total = total + Tensor(lambda3) * rec_m
    return LossBreakdown(
        pred=pred,
        inv=inv,
        dec=dec,
        rec=rec,
        total=total,
        lambda1=lambda1,
        lambda2=lambda2,
        lambda3=lambda3,
        orth_alpha=orth_alpha,
    )
