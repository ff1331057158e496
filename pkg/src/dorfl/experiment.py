"""Run configuration, evaluation metrics, experiment driver and report files."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import get_method
from .datasets import (AdultConfig, FederatedDataset, SyntheticConfig, generate_synthetic, load_adult,
                       prior_mean_estimate)
from .dro import HyperParams
from .errors import ConfigurationError, InvalidInputError
from .federation import TrainingTrace, run_training
from .model import NO_SCORE, OutlierScore, logistic_loss, logistic_loss_grad_theta
from .transport import DiscreteDistribution

DATASETS = ("synthetic", "adult")
METHOD_NAMES = ("dorfl", "erm", "afl", "wafl")
PRIOR_MODES = ("median", "nominal")


@dataclass(frozen=True)
class ScoreConfig:
    """Outlier score settings; ``variant = auto`` picks the dataset's natural score."""

    variant: str = "auto"
    rho2: Optional[float] = None
    softness: float = 0.1
    prior: str = "median"
    prior_offset: float = 0.0

    def __post_init__(self):
        if self.variant not in ("auto", "none", "quadratic", "sigmoid"):
            raise ConfigurationError(f"unknown score variant {self.variant!r}")
        if self.prior not in PRIOR_MODES:
            raise ConfigurationError(f"score.prior must be one of {PRIOR_MODES}")


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "synthetic"
    method: Tuple[str, ...] = ("dorfl",)
    seed: int = 0
    output_dir: str = "runs/default"
    hyper: HyperParams = HyperParams()
    score: ScoreConfig = ScoreConfig()
    synthetic: SyntheticConfig = SyntheticConfig()
    adult_dir: str = ""

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigurationError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        method = (self.method,) if isinstance(self.method, str) else tuple(self.method)
        bad = [m for m in method if m not in METHOD_NAMES]
        if not method or bad:
            raise ConfigurationError(f"unknown method(s) {bad}; expected {METHOD_NAMES}")
        object.__setattr__(self, "method", method)

    def with_method(self, name: str) -> "RunConfig":
        return dataclasses.replace(self, method=(name,))

    def flat(self) -> Dict[str, str]:
        """Every resolved setting as ``section.key -> text``."""
        out = {"run.dataset": self.dataset, "run.method": ",".join(self.method),
               "run.seed": str(self.seed), "run.output_dir": self.output_dir,
               "adult.dir": self.adult_dir}
        for section, obj in (("hyper", self.hyper), ("score", self.score), ("synthetic", self.synthetic)):
            for f in dataclasses.fields(obj):
                if section == "synthetic" and f.name == "seed":
                    continue
                out[f"{section}.{f.name}"] = _format(getattr(obj, f.name))
        return out


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ";".join(_format(v) for v in value)
        return ",".join(_format(v) for v in value)
    return str(value)


def _parse_value(text: str, template, name: str):
    """Convert ``text`` to the type of ``template`` (the field's current value)."""
    text = text.strip()
    try:
        if text.lower() == "none":
            return None
        if isinstance(template, tuple):
            if template and isinstance(template[0], tuple):
                return tuple(tuple(float(v) for v in row.split(",")) for row in text.split(";"))
            kind = type(template[0]) if template else float
            return tuple(kind(v) for v in text.split(","))
        if isinstance(template, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(template, int):
            return int(text)
        if isinstance(template, float) or template is None:
            # optional settings (step sizes, rho2) are unset floats
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"cannot parse {name} = {text!r}") from None


def _update(obj, section: str, items: Dict[str, str]):
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, text in items.items():
        if key not in names:
            raise ConfigurationError(f"unknown setting {section}.{key}")
        changes[key] = _parse_value(text, getattr(obj, key), f"{section}.{key}")
    return dataclasses.replace(obj, **changes) if changes else obj


def load_config(path: Optional[str] = None, overrides: Sequence[str] = (),
                seed: Optional[int] = None, output_dir: Optional[str] = None) -> RunConfig:
    """INI file with [run], [hyper], [score], [synthetic], [adult]; overrides are ``section.key=value``."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is not None:
        if not parser.read(path):
            raise ConfigurationError(f"cannot read config file {path}")
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, value)

    known = {"run", "hyper", "score", "synthetic", "adult"}
    for section in parser.sections():
        if section not in known:
            raise ConfigurationError(f"unknown config section [{section}]")
    run = dict(parser["run"]) if parser.has_section("run") else {}
    unknown = set(run) - {"dataset", "method", "seed", "output_dir"}
    if unknown:
        raise ConfigurationError(f"unknown setting(s) run.{sorted(unknown)}")
    adult = dict(parser["adult"]) if parser.has_section("adult") else {}
    if set(adult) - {"dir"}:
        raise ConfigurationError("the [adult] section only accepts dir")

    cfg = RunConfig()
    hyper = _update(cfg.hyper, "hyper", dict(parser["hyper"]) if parser.has_section("hyper") else {})
    score = _update(cfg.score, "score", dict(parser["score"]) if parser.has_section("score") else {})
    synth = _update(cfg.synthetic, "synthetic",
                    dict(parser["synthetic"]) if parser.has_section("synthetic") else {})
    run_seed = int(run.get("seed", cfg.seed)) if seed is None else seed
    return RunConfig(
        dataset=run.get("dataset", cfg.dataset).strip(),
        method=tuple(m.strip() for m in run.get("method", "dorfl").split(",")),
        seed=run_seed,
        output_dir=output_dir or run.get("output_dir", cfg.output_dir).strip(),
        hyper=hyper,
        score=score,
        synthetic=dataclasses.replace(synth, seed=run_seed),
        adult_dir=adult.get("dir", os.environ.get("DORFL_ADULT_DIR", "")).strip(),
    )


def build_dataset(cfg: RunConfig) -> FederatedDataset:
    if cfg.dataset == "synthetic":
        return generate_synthetic(cfg.synthetic)
    if not cfg.adult_dir:
        raise ConfigurationError("Adult data directory not set (adult.dir or DORFL_ADULT_DIR)")
    return load_adult(AdultConfig.from_dir(cfg.adult_dir, softness=cfg.score.softness))


def resolve_score(cfg: RunConfig, data: FederatedDataset, method: str) -> OutlierScore:
    """Baselines always train on the plain loss; DOR-FL gets the configured score."""
    sc = cfg.score
    if method != "dorfl" or sc.variant == "none":
        return NO_SCORE
    variant = sc.variant
    if variant == "auto":
        variant = "quadratic" if cfg.dataset == "synthetic" else "sigmoid"
    if variant == "quadratic":
        rho2 = 0.5 if sc.rho2 is None else sc.rho2
        if sc.prior == "nominal":
            if data.nominal_mean is None:
                raise ConfigurationError("score.prior = nominal needs a dataset with a known clean mean")
            base = data.nominal_mean
        else:
            base = prior_mean_estimate(data)
        prior = base + sc.prior_offset * data.feature_stats["std"]
        return OutlierScore("quadratic", rho2, prior_mean=prior)
    if data.threshold is None:
        raise ConfigurationError("the sigmoid score needs a dataset threshold")
    rho2 = 2.0 if sc.rho2 is None else sc.rho2
    return OutlierScore("sigmoid", rho2, threshold=data.threshold, softness=sc.softness,
                        feature_index=data.score_feature)


# ------------------------------------------------------------------ metrics

def predict(theta, x) -> np.ndarray:
    """Sign of the score with sign(0) = +1."""
    return np.where(np.asarray(x) @ np.asarray(theta) >= 0, 1, -1)


def accuracy(theta, dist: DiscreteDistribution) -> float:
    """Fraction of test points classified correctly (test sets carry uniform weights)."""
    return float(np.count_nonzero(predict(theta, dist.features) == dist.labels) / dist.size)


def mean_loss(theta, dist: DiscreteDistribution) -> float:
    return float(np.dot(dist.weights, logistic_loss(theta, dist.features, dist.labels)))


def oracle_theta(dist: DiscreteDistribution, iterations: int = 2000, step: float = 0.1) -> np.ndarray:
    """Full-batch gradient descent on the logistic loss from zero."""
    theta = np.zeros(dist.dim)
    for _ in range(iterations):
        theta = theta - step * (dist.weights @ logistic_loss_grad_theta(theta, dist.features, dist.labels))
    return theta


@dataclass(frozen=True)
class MetricsReport:
    method: str
    dataset: str
    overall_accuracy: float
    group_names: Tuple[str, ...]
    group_accuracy: Tuple[float, ...]
    excess_risk: float
    checksum: str = ""
    config: Dict[str, str] = field(default_factory=dict)
    trace_summary: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        accs = (self.overall_accuracy,) + tuple(self.group_accuracy)
        if any(not 0.0 <= a <= 1.0 for a in accs):
            raise InvalidInputError("accuracies must lie in [0, 1]")
        if len(self.group_names) != len(self.group_accuracy):
            raise InvalidInputError("one accuracy per group")
        if self.excess_risk < -1e-9:
            raise InvalidInputError(f"negative excess risk {self.excess_risk!r}: oracle not converged")

    @property
    def worst_group_accuracy(self) -> float:
        return min(self.group_accuracy)

    def rows(self) -> List[Tuple[str, str]]:
        rows = [("method", self.method), ("dataset", self.dataset),
                ("overall_accuracy", repr(self.overall_accuracy))]
        rows += [(f"group_accuracy.{n}", repr(a)) for n, a in zip(self.group_names, self.group_accuracy)]
        rows += [("worst_group_accuracy", repr(self.worst_group_accuracy)),
                 ("excess_risk", repr(self.excess_risk)), ("checksum", self.checksum)]
        rows += [(f"config.{k}", v) for k, v in self.config.items()]
        rows += [(f"trace.{k}", v) for k, v in self.trace_summary.items()]
        return rows

    @classmethod
    def from_rows(cls, rows: Sequence[Tuple[str, str]]) -> "MetricsReport":
        d = dict(rows)
        groups = [(k.split(".", 1)[1], float(v)) for k, v in rows if k.startswith("group_accuracy.")]
        return cls(
            method=d["method"],
            dataset=d["dataset"],
            overall_accuracy=float(d["overall_accuracy"]),
            group_names=tuple(g for g, _ in groups),
            group_accuracy=tuple(a for _, a in groups),
            excess_risk=float(d["excess_risk"]),
            checksum=d.get("checksum", ""),
            config={k[7:]: v for k, v in rows if k.startswith("config.")},
            trace_summary={k[6:]: v for k, v in rows if k.startswith("trace.")},
        )


def evaluate(theta, data: FederatedDataset, method: str = "", reference=None,
             checksum: str = "", config=None, trace_summary=None) -> MetricsReport:
    """Clean-test accuracy per group and excess risk against ``reference`` (oracle if omitted)."""
    if data.clean_test.size == 0:
        raise InvalidInputError("empty test set")
    if reference is None:
        reference = oracle_theta(data.clean_test)
    return MetricsReport(
        method=method,
        dataset="adult" if data.threshold is not None else "synthetic",
        overall_accuracy=accuracy(theta, data.clean_test),
        group_names=tuple(data.group_names),
        group_accuracy=tuple(accuracy(theta, data.group_test(i)) for i in range(len(data.group_names))),
        excess_risk=mean_loss(theta, data.clean_test) - mean_loss(reference, data.clean_test),
        checksum=checksum,
        config=dict(config or {}),
        trace_summary=dict(trace_summary or {}),
    )


def dataset_checksum(data: FederatedDataset) -> str:
    if data.checksum:
        return data.checksum
    h = hashlib.sha256()
    for dist in data.clients + [data.clean_test]:
        h.update(np.ascontiguousarray(dist.features).tobytes())
        h.update(np.ascontiguousarray(dist.labels).tobytes())
    return h.hexdigest()


def _summary(trace: TrainingTrace) -> Dict[str, str]:
    return {
        "rounds": str(trace.rounds),
        "theta_bar": ",".join(repr(float(v)) for v in trace.theta_bar),
        "final_lambda": ",".join(repr(float(v)) for v in trace.lambdas[-1]),
    }


def train_and_evaluate(cfg: RunConfig, data: Optional[FederatedDataset] = None,
                       reference=None) -> Tuple[MetricsReport, TrainingTrace]:
    """Train the single method in ``cfg`` and evaluate its averaged iterate."""
    if len(cfg.method) != 1:
        raise ConfigurationError("train_and_evaluate runs exactly one method")
    name = cfg.method[0]
    data = data if data is not None else build_dataset(cfg)
    score = resolve_score(cfg, data, name)
    trace = run_training(data.clients, cfg.hyper, score, cfg.seed, get_method(name))
    report = evaluate(trace.theta_bar, data, name, reference, dataset_checksum(data), cfg.flat(),
                      _summary(trace))
    return report, trace


# ------------------------------------------------------------------ output

def prepare_output(directory: str, force: bool = False):
    if os.path.isdir(directory) and os.listdir(directory) and not force:
        raise FileExistsError(f"{directory} already exists and is not empty; pass --force to overwrite")
    os.makedirs(os.path.join(directory, "plotdata"), exist_ok=True)


def write_report_csv(reports: Sequence[MetricsReport], path):
    multi = len(reports) > 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        for r in reports:
            for k, v in r.rows():
                w.writerow([f"{r.method}/{k}" if multi else k, v])


def read_report_csv(path) -> List[MetricsReport]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    if rows and "/" in rows[0][0]:
        order, grouped = [], {}
        for k, v in rows:
            method, key = k.split("/", 1)
            if method not in grouped:
                order.append(method)
                grouped[method] = []
            grouped[method].append((key, v))
        return [MetricsReport.from_rows(grouped[m]) for m in order]
    return [MetricsReport.from_rows([(k, v) for k, v in rows])]


def table_markdown(reports: Sequence[MetricsReport]) -> str:
    if reports[0].dataset == "adult":
        head = ["Method", "Accuracy", "ExcessRisk", "WorstGroup"]
        body = [[r.method, f"{100 * r.overall_accuracy:.1f}", f"{r.excess_risk:.3f}",
                 f"{100 * r.worst_group_accuracy:.1f}"] for r in reports]
    else:
        head = ["Method", "Overall"] + [f"Group{i + 1}" for i in range(len(reports[0].group_names))]
        body = [[r.method, f"{100 * r.overall_accuracy:.1f}"] + [f"{100 * a:.1f}" for a in r.group_accuracy]
                for r in reports]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    lines += ["| " + " | ".join(row) + " |" for row in body]
    return "\n".join(lines) + "\n"


def emit_report(reports: Sequence[MetricsReport], directory: str, traces: Sequence[TrainingTrace] = (),
                force: bool = False):
    """report.csv always; table.md only when several methods ran; traces under plotdata/."""
    if isinstance(reports, MetricsReport):
        reports = [reports]
    prepare_output(directory, force)
    write_report_csv(reports, os.path.join(directory, "report.csv"))
    table = os.path.join(directory, "table.md")
    if len(reports) > 1:
        with open(table, "w") as fh:
            fh.write(table_markdown(reports))
    elif os.path.exists(table):
        os.remove(table)
    for trace in traces:
        trace.write_csv(os.path.join(directory, "plotdata", f"trace_{trace.method}.csv"))


def run_experiment(cfg: RunConfig, force: bool = False, write: bool = True) -> List[MetricsReport]:
    """Train every configured method on one dataset build and emit the reports."""
    if write:
        prepare_output(cfg.output_dir, force)
    data = build_dataset(cfg)
    reference = oracle_theta(data.clean_test)
    reports, traces = [], []
    for name in cfg.method:
        report, trace = train_and_evaluate(cfg.with_method(name), data, reference)
        reports.append(report)
        traces.append(trace)
    if write:
        emit_report(reports, cfg.output_dir, traces, force=True)
    return reports


def _sweep_point(args):
    cfg, offset = args
    run = dataclasses.replace(cfg, score=dataclasses.replace(cfg.score, prior="nominal", prior_offset=offset))
    return offset, train_and_evaluate(run.with_method("dorfl"))[0].overall_accuracy


def sensitivity_sweep(cfg: RunConfig, offsets: Sequence[float], jobs: int = 1) -> List[Tuple[float, float]]:
    """DOR-FL accuracy with the prior mean moved ``offset`` standard deviations off the clean mean."""
    if cfg.dataset != "synthetic":
        raise ConfigurationError("the sensitivity sweep needs the synthetic dataset")
    if cfg.score.variant not in ("auto", "quadratic"):
        raise ConfigurationError("the sensitivity sweep needs the quadratic score")
    tasks = [(cfg, float(m)) for m in offsets]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]


def write_sweep_csv(points: Sequence[Tuple[float, float]], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["offset", "accuracy"])
        for m, a in points:
            w.writerow([repr(float(m)), repr(float(a))])
