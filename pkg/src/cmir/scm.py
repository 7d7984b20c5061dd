"""Linear-Gaussian structural causal model with known latents.

Generative process (all noise standard normal):
    c   ~ N(0, I)                          causal latent
    y   = w'c + label_noise_std * eta      label (w a fixed unit vector)
    env ~ Uniform over the environment set
    s   = gamma_env * y * u + 0.3 * eta    spurious latent (u a fixed unit vector)
    x_m = A_m c + B_m s + 0.1 * eta        observed modality features

A_m and B_m have seeded orthonormal columns. The training/validation splits
draw gamma from `gamma`; the OOD test split draws from `gamma_test`
(sign-flipped by default), and an extra in-distribution test split is kept
for side-by-side comparisons. The hidden latents are stored in a sidecar
only the oracle reads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, EmptyInputError
from .rng import stream

_S_NOISE = 0.3
_X_NOISE = 0.1


@dataclass
class ScmConfig:
    M: int = 3
    d_c: int = 4
    d_s: int = 4
    d_m: int = 12
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 2000
    gamma: list[float] = field(default_factory=lambda: [0.4, 1.0])
    gamma_test: list[float] | None = None  # default: sign-flipped gamma
    label_noise_std: float = 0.1
    # amplitude of the spurious channel in the observations; < 1 makes the
    # shortcut faint (high decoder gain needed) without touching its own SNR
    spurious_obs_scale: float = 1.0
    task: str = "regression"
    seed: int = 0

    def __post_init__(self):
        for name in ("M", "d_c", "d_s", "d_m", "n_train", "n_val", "n_test"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not self.gamma:
            raise ConfigError("gamma needs at least one environment strength")
        if self.gamma_test is None:
            self.gamma_test = [-g for g in self.gamma]
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.label_noise_std < 0:
            raise ConfigError("label_noise_std must be nonnegative")

    @property
    def env_count(self) -> int:
        return len(self.gamma)


@dataclass
class Split:
    x: list[np.ndarray]  # M arrays of shape (n, d_m)
    y: np.ndarray  # (n,) float labels
    y_class: np.ndarray  # (n,) int labels: 1 iff y > 0
    env: np.ndarray  # (n,) int environment ids
    gamma: np.ndarray  # (n,) float spurious strength per sample
    latent_c: np.ndarray | None = None
    latent_s: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass
class ScmDataset:
    config: ScmConfig
    train: Split
    val: Split
    test_id: Split  # in-distribution test (training gamma set)
    test: Split  # OOD test (gamma_test set)

    def splits(self) -> dict[str, Split]:
        return {
            "train": self.train,
            "val": self.val,
            "test_id": self.test_id,
            "test": self.test,
        }


def _unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    if cols > rows:
        raise ConfigError(f"cannot fit {cols} orthonormal columns in R^{rows}")
    q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q


def _draw_split(cfg: ScmConfig, name: str, n: int, gammas: list[float], mixers) -> Split:
    w, u, v, A, B = mixers
    rng = stream(cfg.seed, "scm", name)
    c = rng.standard_normal((n, cfg.d_c))
    y = c @ w + cfg.label_noise_std * rng.standard_normal(n)
    env = rng.integers(0, len(gammas), size=n)
    gam = np.asarray(gammas)[env]
    # label-linked component along u plus an environment signature along v
    s = gam[:, None] * (
        y[:, None] * u[None, :] + v[None, :]
    ) + _S_NOISE * rng.standard_normal((n, cfg.d_s))
    x = [
        c @ A[m].T
        + cfg.spurious_obs_scale * (s @ B[m].T)
        + _X_NOISE * rng.standard_normal((n, cfg.d_m))
        for m in range(cfg.M)
    ]
    return Split(
        x=x,
        y=y,
        y_class=(y > 0).astype(np.int64),
        env=env,
        gamma=gam,
        latent_c=c,
        latent_s=s,
    )


def generate(cfg: ScmConfig) -> ScmDataset:
    w = _unit_vector(stream(cfg.seed, "scm", "w"), cfg.d_c)
    u = _unit_vector(stream(cfg.seed, "scm", "u"), cfg.d_s)
    if cfg.d_s > 1:
        v = _unit_vector(stream(cfg.seed, "scm", "v"), cfg.d_s)
        v = v - (v @ u) * u  # keep the env signature off the label-linked axis
        v = v / np.linalg.norm(v)
    else:
        v = np.zeros(cfg.d_s)
    A = [
        _orthonormal_columns(stream(cfg.seed, "scm", "A", m), cfg.d_m, cfg.d_c)
        for m in range(cfg.M)
    ]
    B = [
        _orthonormal_columns(stream(cfg.seed, "scm", "B", m), cfg.d_m, cfg.d_s)
        for m in range(cfg.M)
    ]
    mixers = (w, u, v, A, B)
    return ScmDataset(
        config=cfg,
        train=_draw_split(cfg, "train", cfg.n_train, cfg.gamma, mixers),
        val=_draw_split(cfg, "val", cfg.n_val, cfg.gamma, mixers),
        test_id=_draw_split(cfg, "test_id", cfg.n_test, cfg.gamma, mixers),
        test=_draw_split(cfg, "test", cfg.n_test, cfg.gamma_test, mixers),
    )


# --------------------------------------------------------------------- oracle


def _ols_fit(features: np.ndarray, y: np.ndarray) -> np.ndarray:
    X = np.hstack([features, np.ones((features.shape[0], 1))])
    gram = X.T @ X
    try:
        return np.linalg.solve(gram, X.T @ y)
    except np.linalg.LinAlgError:
        warnings.warn("singular normal matrix; falling back to ridge 1e-6")
        return np.linalg.solve(gram + 1e-6 * np.eye(gram.shape[0]), X.T @ y)


def _oracle_features(split: Split, which: str) -> np.ndarray:
    if which == "causal_latent":
        if split.latent_c is None:
            raise DataError("split was saved without latents")
        return split.latent_c
    if which == "spurious_latent":
        if split.latent_s is None:
            raise DataError("split was saved without latents")
        return split.latent_s
    if which == "raw":
        return np.hstack(split.x)
    raise ConfigError(f"unknown oracle input {which!r}")


def oracle_regression(dataset: ScmDataset, which: str, test_split: str = "test") -> dict:
    """Closed-form least squares from the chosen input to y; test MAE and Acc2."""
    beta = _ols_fit(_oracle_features(dataset.train, which), dataset.train.y)
    test = dataset.splits()[test_split]
    feats = _oracle_features(test, which)
    pred = np.hstack([feats, np.ones((feats.shape[0], 1))]) @ beta
    mae = float(np.abs(pred - test.y).mean())
    nonneutral = test.y != 0
    acc2 = float(
        ((pred[nonneutral] > 0) == (test.y[nonneutral] > 0)).mean()
    )
    return {"mae": mae, "acc2": acc2}


# ----------------------------------------------------------------- corruption


@dataclass
class CorruptionSpec:
    kind: str  # gaussian_mix | laplace_mix | random_erase
    NR: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian_mix", "laplace_mix", "random_erase"):
            raise ConfigError(f"unknown corruption kind {self.kind!r}")
        if not 0.0 <= self.NR <= 1.0:
            raise ConfigError(f"noise rate must lie in [0, 1], got {self.NR}")


def corrupt(split: Split, spec: CorruptionSpec) -> Split:
    """Corrupt every modality of every sample; labels and latents untouched."""
    if spec.NR == 0.0:
        return replace(split, x=[xm.copy() for xm in split.x])
    out = []
    for m, xm in enumerate(split.x):
        rng = stream(spec.seed, "corrupt", spec.kind, m)
        if spec.kind == "gaussian_mix":
            noise = rng.standard_normal(xm.shape)
            out.append((1.0 - spec.NR) * xm + spec.NR * noise)
        elif spec.kind == "laplace_mix":
            noise = rng.laplace(0.0, 1.0, size=xm.shape)
            out.append((1.0 - spec.NR) * xm + spec.NR * noise)
        else:  # random_erase
            keep = rng.random(xm.shape) >= spec.NR
            out.append(xm * keep)
    return replace(split, x=out)


# ------------------------------------------------------------------- file I/O


def _header(cfg: ScmConfig, split_name: str, n: int) -> str:
    pairs = [
        ("split", split_name),
        ("n", n),
        ("M", cfg.M),
        ("d_m", cfg.d_m),
        ("task", cfg.task),
        ("seed", cfg.seed),
        ("label_noise_std", repr(cfg.label_noise_std)),
        ("spurious_obs_scale", repr(cfg.spurious_obs_scale)),
        ("gamma", ",".join(repr(g) for g in cfg.gamma)),
        ("gamma_test", ",".join(repr(g) for g in cfg.gamma_test)),
    ]
    return "# " + " ".join(f"{k}={v}" for k, v in pairs)


def save_dataset(dataset: ScmDataset, outdir) -> None:
    import os

    os.makedirs(outdir, exist_ok=True)
    cfg = dataset.config
    for name, split in dataset.splits().items():
        with open(os.path.join(outdir, f"{name}.dat"), "w") as fh:
            fh.write(_header(cfg, name, split.n) + "\n")
            for i in range(split.n):
                fields = [str(split.env[i]), f"{split.y[i]:.17g}"]
                for m in range(cfg.M):
                    fields.extend(f"{v:.17g}" for v in split.x[m][i])
                fh.write(" ".join(fields) + "\n")
    # hidden latents: sidecar only the oracle may read
    sidecar = {}
    for name, split in dataset.splits().items():
        sidecar[f"{name}_c"] = split.latent_c
        sidecar[f"{name}_s"] = split.latent_s
    np.savez(os.path.join(outdir, "latents.npz"), **sidecar)


def _parse_header(line: str) -> dict:
    if not line.startswith("# "):
        raise DataError("dataset file is missing its header line")
    out = {}
    for token in line[2:].split():
        key, _, value = token.partition("=")
        out[key] = value
    return out


def _load_split(path) -> tuple[dict, Split]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise EmptyInputError(f"empty dataset file {path}")
    meta = _parse_header(lines[0])
    M, d_m = int(meta["M"]), int(meta["d_m"])
    env, y, x = [], [], [[] for _ in range(M)]
    for line in lines[1:]:
        fields = line.split()
        if len(fields) != 2 + M * d_m:
            raise DataError(f"bad record width in {path}")
        env.append(int(fields[0]))
        y.append(float(fields[1]))
        for m in range(M):
            x[m].append([float(v) for v in fields[2 + m * d_m : 2 + (m + 1) * d_m]])
    y_arr = np.asarray(y)
    split_name = meta["split"]
    gammas = [float(g) for g in meta["gamma_test" if split_name == "test" else "gamma"].split(",")]
    env_arr = np.asarray(env, dtype=np.int64)
    return meta, Split(
        x=[np.asarray(block) for block in x],
        y=y_arr,
        y_class=(y_arr > 0).astype(np.int64),
        env=env_arr,
        gamma=np.asarray(gammas)[env_arr],
    )


def load_dataset(indir) -> ScmDataset:
    import os

    splits = {}
    meta = None
    for name in ("train", "val", "test_id", "test"):
        meta, splits[name] = _load_split(os.path.join(indir, f"{name}.dat"))
    cfg = ScmConfig(
        M=int(meta["M"]),
        d_m=int(meta["d_m"]),
        n_train=splits["train"].n,
        n_val=splits["val"].n,
        n_test=splits["test"].n,
        gamma=[float(g) for g in meta["gamma"].split(",")],
        gamma_test=[float(g) for g in meta["gamma_test"].split(",")],
        label_noise_std=float(meta["label_noise_std"]),
        spurious_obs_scale=float(meta.get("spurious_obs_scale", "1.0")),
        task=meta["task"],
        seed=int(meta["seed"]),
    )
    sidecar_path = os.path.join(indir, "latents.npz")
    if os.path.exists(sidecar_path):
        sidecar = np.load(sidecar_path)
        for name, split in splits.items():
            split.latent_c = sidecar[f"{name}_c"]
            split.latent_s = sidecar[f"{name}_s"]
    return ScmDataset(config=cfg, **splits)
