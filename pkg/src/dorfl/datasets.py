"""Synthetic contaminated clients and the Adult census loader."""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .errors import DataFormatError, InvalidInputError
from .transport import DiscreteDistribution

DEFAULT_MEANS = (
    (0.0, 0.0, 0.0, 0.0, 0.0),
    (1.0, 1.0, 0.0, 0.0, 0.0),
    (2.0, 2.0, 0.5, 1.0, 2.0),
)
DEFAULT_THETA_STAR = (1.0, -1.0, 0.5, 0.5, -0.5)


@dataclass(frozen=True)
class SyntheticConfig:
    num_clients: int = 3
    dim: int = 5
    means: Tuple[Tuple[float, ...], ...] = DEFAULT_MEANS
    sizes: Tuple[int, ...] = (100, 200, 500)
    contamination_rates: Tuple[float, ...] = (0.1, 0.05, 0.1)
    contamination_factors: Tuple[float, ...] = (7.0, 8.0, 9.0)
    shift_magnitudes: Tuple[float, ...] = (1.0, -0.5, 0.6)
    theta_star: Tuple[float, ...] = DEFAULT_THETA_STAR
    test_size_per_client: int = 1000
    seed: int = 0

    def __post_init__(self):
        n = self.num_clients
        for name in ("means", "sizes", "contamination_rates", "contamination_factors",
                     "shift_magnitudes"):
            if len(getattr(self, name)) != n:
                raise InvalidInputError(f"{name} needs one entry per client ({n})")
        if any(len(m) != self.dim for m in self.means) or len(self.theta_star) != self.dim:
            raise InvalidInputError(f"means and theta_star must have length {self.dim}")
        if any(s < 1 for s in self.sizes) or self.test_size_per_client < 1:
            raise InvalidInputError("sample sizes must be positive")
        if any(not 0 <= r <= 1 for r in self.contamination_rates):
            raise InvalidInputError("contamination rates must lie in [0, 1]")


@dataclass(frozen=True)
class FederatedDataset:
    clients: List[DiscreteDistribution]
    clean_test: DiscreteDistribution
    test_groups: List[np.ndarray]
    group_names: List[str]
    feature_stats: Dict[str, np.ndarray]
    contaminated: List[np.ndarray] = field(default_factory=list)
    threshold: Optional[float] = None
    score_feature: int = 0
    nominal_mean: Optional[np.ndarray] = None
    checksum: str = ""

    @property
    def dim(self) -> int:
        return self.clean_test.dim

    def group_test(self, i: int) -> DiscreteDistribution:
        idx = self.test_groups[i]
        return DiscreteDistribution.uniform(self.clean_test.features[idx], self.clean_test.labels[idx])

    def pooled_training_features(self) -> np.ndarray:
        return np.concatenate([c.features for c in self.clients])


def draw_labels(rng: np.random.Generator, x: np.ndarray, theta_star) -> np.ndarray:
    p_pos = expit(x @ np.asarray(theta_star, dtype=float))
    return np.where(rng.random(len(x)) < p_pos, 1, -1)


def generate_synthetic(cfg: SyntheticConfig) -> FederatedDataset:
    """Gaussian clients; a seeded prefix is scaled into outliers, the rest shifted on feature 0.

    Labels are drawn from the logistic law before any perturbation, so outliers
    keep the label of their clean ancestor.
    """
    root = np.random.SeedSequence(cfg.seed)
    train_seqs = root.spawn(cfg.num_clients)
    test_seqs = root.spawn(cfg.num_clients)
    clients, flags, tx, ty, groups = [], [], [], [], []
    offset = 0
    for i in range(cfg.num_clients):
        rng = np.random.default_rng(train_seqs[i])
        mu = np.asarray(cfg.means[i], dtype=float)
        n = cfg.sizes[i]
        x = rng.normal(mu, 1.0, size=(n, cfg.dim))
        y = draw_labels(rng, x, cfg.theta_star)
        bad = np.zeros(n, dtype=bool)
        # the epsilon guards rates such as 0.1 * 100 landing just below an integer
        bad[rng.permutation(n)[: int(np.floor(cfg.contamination_rates[i] * n + 1e-9))]] = True
        x[bad] *= cfg.contamination_factors[i]
        x[~bad, 0] += cfg.shift_magnitudes[i]
        clients.append(DiscreteDistribution.uniform(x, y))
        flags.append(bad)

        trng = np.random.default_rng(test_seqs[i])
        m = cfg.test_size_per_client
        xt = trng.normal(mu, 1.0, size=(m, cfg.dim))
        tx.append(xt)
        ty.append(draw_labels(trng, xt, cfg.theta_star))
        groups.append(np.arange(offset, offset + m))
        offset += m

    clean = DiscreteDistribution.uniform(np.concatenate(tx), np.concatenate(ty))
    means = np.asarray(cfg.means, dtype=float)
    return FederatedDataset(
        clients=clients,
        clean_test=clean,
        test_groups=groups,
        group_names=[f"client{i + 1}" for i in range(cfg.num_clients)],
        feature_stats={"mean": np.zeros(cfg.dim), "std": np.ones(cfg.dim)},
        contaminated=flags,
        nominal_mean=means.mean(axis=0),
    )


def prior_mean_estimate(data: FederatedDataset) -> np.ndarray:
    """Coordinate-wise median of the pooled training features."""
    return np.median(data.pooled_training_features(), axis=0)


def export_synthetic_csv(data: FederatedDataset, path):
    """One row per training sample: client_id, contaminated, x_1..x_d, label."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["client_id", "contaminated"] + [f"x_{k + 1}" for k in range(data.dim)] + ["label"])
        for i, (dist, bad) in enumerate(zip(data.clients, data.contaminated)):
            for x, y, b in zip(dist.features, dist.labels, bad):
                w.writerow([i, int(b)] + [repr(float(v)) for v in x] + [int(y)])


# ---------------------------------------------------------------- Adult census

ADULT_COLUMNS = (
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
)
ADULT_NUMERIC = ("age", "fnlwgt", "education-num", "capital-gain", "capital-loss", "hours-per-week")
ADULT_CATEGORICAL = tuple(c for c in ADULT_COLUMNS[:-1] if c not in ADULT_NUMERIC)
ADULT_GROUPS = ("White", "Black", "Other")


@dataclass(frozen=True)
class AdultConfig:
    train_path: str
    test_path: str
    capital_gain_threshold_dollars: float = 20000.0
    rho2: float = 2.0
    softness: float = 0.1

    def __post_init__(self):
        if self.capital_gain_threshold_dollars <= 0:
            raise InvalidInputError("capital-gain threshold must be positive")

    @classmethod
    def from_dir(cls, directory: Optional[str] = None, **kw) -> "AdultConfig":
        directory = directory or os.environ.get("DORFL_ADULT_DIR", "")
        return cls(os.path.join(directory, "adult.data"), os.path.join(directory, "adult.test"), **kw)


def _read_adult(path) -> List[Tuple[int, List[str]]]:
    """Rows as (line number, trimmed fields); skips blanks, comment lines and rows with '?'."""
    rows = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot read Adult file ({exc.strerror})", path) from exc
    with fh:
        for lineno, raw in enumerate(csv.reader(fh), start=1):
            fields = [f.strip() for f in raw]
            if not fields or fields == [""] or fields[0].startswith("|"):
                continue
            if len(fields) != len(ADULT_COLUMNS):
                raise DataFormatError(
                    f"expected {len(ADULT_COLUMNS)} columns, found {len(fields)}", path, lineno
                )
            if "?" in fields:
                continue
            rows.append((lineno, fields))
    if not rows:
        raise DataFormatError("no usable rows", path)
    return rows


def _parse_income(value: str, path, lineno) -> int:
    v = value.rstrip(".")
    if v == ">50K":
        return 1
    if v == "<=50K":
        return -1
    raise DataFormatError(f"unrecognised income label {value!r}", path, lineno)


def _columns(rows, path):
    numeric = np.empty((len(rows), len(ADULT_NUMERIC)))
    cats = {c: [] for c in ADULT_CATEGORICAL}
    labels = np.empty(len(rows), dtype=int)
    idx = {c: k for k, c in enumerate(ADULT_COLUMNS)}
    for r, (lineno, fields) in enumerate(rows):
        for k, c in enumerate(ADULT_NUMERIC):
            try:
                numeric[r, k] = float(fields[idx[c]])
            except ValueError:
                raise DataFormatError(f"non-numeric {c} value {fields[idx[c]]!r}", path, lineno) from None
        for c in ADULT_CATEGORICAL:
            cats[c].append(fields[idx[c]])
        labels[r] = _parse_income(fields[-1], path, lineno)
    return numeric, {c: np.array(v) for c, v in cats.items()}, labels


def _race_group(race: np.ndarray) -> np.ndarray:
    return np.where(race == "White", 0, np.where(race == "Black", 1, 2))


def _checksum(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 16), b""):
                h.update(block)
    return h.hexdigest()


def load_adult(cfg: AdultConfig) -> FederatedDataset:
    """Standardised numeric columns first, then one-hot categoricals (training-split levels)."""
    train_rows = _read_adult(cfg.train_path)
    test_rows = _read_adult(cfg.test_path)
    num_tr, cat_tr, y_tr = _columns(train_rows, cfg.train_path)
    num_te, cat_te, y_te = _columns(test_rows, cfg.test_path)

    mean = num_tr.mean(axis=0)
    std = num_tr.std(axis=0)
    if np.any(std == 0):
        raise DataFormatError("a numeric column is constant in the training split", cfg.train_path)

    def encode(num, cats):
        blocks = [(num - mean) / std]
        for c in ADULT_CATEGORICAL:
            levels = np.unique(cat_tr[c])
            blocks.append((cats[c][:, None] == levels[None, :]).astype(float))
        return np.hstack(blocks)

    x_tr = encode(num_tr, cat_tr)
    x_te = encode(num_te, cat_te)
    gain = ADULT_NUMERIC.index("capital-gain")
    threshold = (cfg.capital_gain_threshold_dollars - mean[gain]) / std[gain]

    g_tr = _race_group(cat_tr["race"])
    g_te = _race_group(cat_te["race"])
    clients = [DiscreteDistribution.uniform(x_tr[g_tr == k], y_tr[g_tr == k]) for k in range(3)]
    return FederatedDataset(
        clients=clients,
        clean_test=DiscreteDistribution.uniform(x_te, y_te),
        test_groups=[np.flatnonzero(g_te == k) for k in range(3)],
        group_names=list(ADULT_GROUPS),
        feature_stats={"mean": mean, "std": std},
        threshold=float(threshold),
        score_feature=gain,
        checksum=_checksum(cfg.train_path, cfg.test_path),
    )
