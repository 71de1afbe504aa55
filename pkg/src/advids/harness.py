"""Experiment orchestration: data, IDS training, attacks, detector banks, fusion, reports.

Every stage writes its artifacts under the configured output directory and
reuses them when they already exist, so the CLI subcommands can be run one
at a time or all at once. The output directory is tied to one configuration
(its hash is stored in ``config.json``).

Layout::

    data/{train,test}.csv            preprocessed splits (+ schema sidecars)
    models/seed<s>/ids/              IDS bundle
    cache/adv_<key>.csv              adversarial matrices (+ manifests)
    advsets/seed<s>/{train,test}_<row>.csv
    results/seed<s>/{impact,cross,baseline}.json
    report/                          tables and run manifest
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import attacks as atk
from . import clustering as clu
from . import dataio as dio
from . import detection as det
from . import fusion
from . import ids as idsmod
from . import netcore as nc
from .errors import ConfigurationError
from .metrics import binary_metrics, detection_rate

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("advids")

ENV_DATA_DIR = "ADVIDS_DATA_DIR"
BALANCED = "balanced"


# ---------------------------------------------------------------- config ---

@dataclass
class DataConfig:
    dialect: str = "nslkdd"
    train: str = "KDDTrain+.txt"
    test: str | None = "KDDTest+.txt"  # None: split `train` into train/test samples
    data_dir: str | None = None  # default: $ADVIDS_DATA_DIR, then the working directory
    train_rows: int = 200_000
    test_rows: int = 40_000
    split_seed: int = 0
    eval_split: str = "test"  # checkpoint selection on "test" or a "holdout" of train
    holdout_fraction: float = 0.1


@dataclass
class IDSConfig:
    design: str = "serial"
    hidden: list[int] = field(default_factory=lambda: list(idsmod.HIDDEN))
    epochs: int = 50
    eval_interval: int = 10
    parallel_epochs: int = 30
    parallel_eval_interval: int = 10
    clustering: str = "distribution"
    k: int = 9
    learning_rate: float = 1e-3
    batch_size: int = 128


@dataclass
class AttackConfig:
    kinds: list[str] = field(default_factory=lambda: list(dio.ATTACK_ORDER))
    max_perturbation: float = 0.1
    epsilon: float = 0.1
    step_size: float = 0.02
    iterations: int = 10
    overshoot: float = 0.02
    max_iterations: int = 50
    confidence: float = 0.0
    c_init: float = 1.0
    cw_iterations: int = 100
    cw_step: float = 0.01
    binary_search_steps: int = 5
    max_rows: int | None = None  # cap on attacked test rows in the impact table

    def spec(self, kind: str) -> atk.AttackSpec:
        return atk.AttackSpec(
            kind, self.epsilon, self.step_size, self.iterations, self.overshoot,
            self.max_iterations, self.confidence, self.c_init, self.cw_iterations,
            self.cw_step, self.binary_search_steps,
        )


@dataclass
class DetectorConfig:
    mode: str = "duplicate_fine_tuning"
    hidden: list[int] = field(default_factory=lambda: list(det.HEAD))
    epochs: int = 30
    eval_interval: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 128
    metric: str = "detection_rate"
    train_rows: int = 10_000  # clean rows per adversarial training set
    test_rows: int = 5_000
    fusion: list[str] = field(default_factory=lambda: list(fusion.RULES))
    fusion_clip: float = 1e-6  # keeps Dempster combination away from total conflict


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    ids: IDSConfig = field(default_factory=IDSConfig)
    attacks: AttackConfig = field(default_factory=AttackConfig)
    detectors: DetectorConfig = field(default_factory=DetectorConfig)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    output: str = "advids-out"
    baseline: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        d, i, a, r = self.data, self.ids, self.attacks, self.detectors
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if d.dialect not in dio.DIALECTS:
            raise ConfigurationError(f"unknown dialect {d.dialect!r}")
        if d.eval_split not in ("test", "holdout"):
            raise ConfigurationError("eval_split must be 'test' or 'holdout'")
        if i.design not in ("serial", "parallel"):
            raise ConfigurationError(f"unknown IDS design {i.design!r}")
        if i.clustering not in clu.METHODS:
            raise ConfigurationError(f"unknown clustering method {i.clustering!r}")
        bad = [k for k in a.kinds if k not in atk.KINDS]
        if bad or len(set(a.kinds)) != len(a.kinds):
            raise ConfigurationError(f"attack kinds must be distinct values of {atk.KINDS}")
        bad = [f for f in r.fusion if f not in fusion.RULES]
        if bad:
            raise ConfigurationError(f"unknown fusion rules {bad}")
        det.TransferMode.parse(r.mode)
        if not 0 <= r.fusion_clip < 0.5:
            raise ConfigurationError("fusion_clip must lie in [0, 0.5)")
        # surface schedule and attack errors at load time
        self.ids_train_config(0)
        self.detector_train_config(0)
        for k in a.kinds:
            a.spec(k)
        atk.AttackConstraints.free(1, a.max_perturbation)
        if a.epsilon > a.max_perturbation:
            raise ConfigurationError("attack epsilon exceeds max_perturbation")

    def ids_train_config(self, seed: int) -> nc.TrainConfig:
        i = self.ids
        epochs, every = ((i.parallel_epochs, i.parallel_eval_interval) if i.design == "parallel"
                         else (i.epochs, i.eval_interval))
        return nc.TrainConfig(epochs=epochs, eval_interval=every, batch_size=i.batch_size,
                              learning_rate=i.learning_rate, seed=seed)

    def detector_train_config(self, seed: int) -> nc.TrainConfig:
        r = self.detectors
        return nc.TrainConfig(epochs=r.epochs, eval_interval=r.eval_interval,
                              batch_size=r.batch_size, learning_rate=r.learning_rate,
                              seed=seed, loss="binary_cross_entropy", metric=r.metric)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint_dict(self) -> dict:
        """Config content that determines results (machine-local paths removed)."""
        d = self.to_dict()
        d.pop("output")
        d["data"].pop("data_dir")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.fingerprint_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        sections = {"data": DataConfig, "ids": IDSConfig, "attacks": AttackConfig,
                    "detectors": DetectorConfig}
        top = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - top
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for key, value in raw.items():
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigurationError(f"[{key}] must be a table")
                known = {f.name for f in dataclasses.fields(sections[key])}
                bad = set(value) - known
                if bad:
                    raise ConfigurationError(f"unknown keys in [{key}]: {sorted(bad)}")
                kwargs[key] = sections[key](**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    return ExperimentConfig.from_dict(raw)


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Copy of ``cfg`` with dotted-key overrides such as ``{"ids.design": "parallel"}``."""
    raw = cfg.to_dict()
    for key, value in changes.items():
        if value is None:
            continue
        node = raw
        *parents, leaf = key.split(".")
        for p in parents:
            node = node[p]
        if leaf not in node:
            raise ConfigurationError(f"unknown config key {key!r}")
        node[leaf] = value
    return ExperimentConfig.from_dict(raw)


# ------------------------------------------------------------- workspace ---

class Workspace:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = Path(cfg.output)
        self.root.mkdir(parents=True, exist_ok=True)
        stamp = self.root / "config.json"
        current = {"config_hash": cfg.config_hash(), "config": cfg.fingerprint_dict()}
        if stamp.exists():
            old = json.loads(stamp.read_text())
            if old.get("config_hash") != current["config_hash"]:
                raise ConfigurationError(
                    f"{self.root} holds artifacts of a different configuration; "
                    "choose another output directory"
                )
        else:
            stamp.write_text(json.dumps(current, indent=1, sort_keys=True) + "\n")

    def path(self, *parts: str) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def seed_dir(self, kind: str, seed: int) -> Path:
        p = self.root / kind / f"seed{seed}"
        p.mkdir(parents=True, exist_ok=True)
        return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path: Path):
    return json.loads(path.read_text())


# ------------------------------------------------------------------ data ---

def data_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.data.data_dir or os.environ.get(ENV_DATA_DIR) or ".")


def prepare_data(cfg: ExperimentConfig, ws: Workspace) -> tuple[dio.LabeledDataset, dio.LabeledDataset]:
    tr_path, te_path = ws.path("data", "train.csv"), ws.path("data", "test.csv")
    if tr_path.exists() and te_path.exists():
        return dio.load_saved(tr_path), dio.load_saved(te_path)
    d = cfg.data
    base = data_dir(cfg)
    raw = dio.sanitize(dio.load_dataset(base / d.train, d.dialect))
    if d.test:
        raw_test = dio.sanitize(dio.load_dataset(base / d.test, d.dialect))
    else:
        raw, raw_test = dio.stratified_split(raw, d.train_rows, d.test_rows, d.split_seed)
    train = dio.preprocess(raw)
    test = dio.preprocess(raw_test, train.schema)
    dio.save_dataset(train, tr_path)
    dio.save_dataset(test, te_path)
    log.info("preprocessed %d train / %d test rows, %d columns", len(train), len(test), train.width)
    return train, test


def source_hash(train: dio.LabeledDataset, test: dio.LabeledDataset) -> str:
    return hashlib.sha256((train.digest() + test.digest()).encode()).hexdigest()


def _stratified_rows(y: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """About ``n`` row indices keeping the class ratio of ``y``."""
    if n >= y.shape[0]:
        return np.arange(y.shape[0])
    picks = []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        take = int(round(n * idx.size / y.shape[0]))
        picks.append(rng.choice(idx, size=min(take, idx.size), replace=False))
    return np.sort(np.concatenate(picks))


def holdout_split(y, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(fit rows, held-out rows) with the held-out part stratified by ``y``."""
    y = np.asarray(y)
    n_hold = max(1, int(round(fraction * y.shape[0])))
    hold = _stratified_rows(y, n_hold, np.random.default_rng(seed + 77))
    return np.setdiff1d(np.arange(y.shape[0]), hold), hold


# ------------------------------------------------------------------- ids ---

def train_ids(cfg: ExperimentConfig, train: dio.LabeledDataset, test: dio.LabeledDataset,
              seed: int) -> idsmod.SerialIDS | idsmod.ParallelIDS:
    tcfg = cfg.ids_train_config(seed)
    if cfg.data.eval_split == "holdout":
        keep, hold = holdout_split(train.y, cfg.data.holdout_fraction, seed)
        fit, ev = train.subset(keep), train.subset(hold)
    else:
        fit, ev = train, test
    if cfg.ids.design == "serial":
        return idsmod.train_serial(fit, ev, tcfg, cfg.ids.hidden)
    clusters = clu.cluster_features(clu.correlation_matrix(fit.X), cfg.ids.k, cfg.ids.clustering)
    return idsmod.train_parallel(fit, ev, clusters, tcfg, cfg.ids.hidden)


def get_ids(cfg: ExperimentConfig, ws: Workspace, seed: int, train, test):
    bundle = ws.seed_dir("models", seed) / "ids"
    if (bundle / "manifest.json").exists():
        return idsmod.load_ids(bundle)
    log.info("seed %d: training %s IDS", seed, cfg.ids.design)
    model = train_ids(cfg, train, test, seed)
    idsmod.save_ids(model, bundle, cfg.ids_train_config(seed))
    return model


def copy_ids(model):
    if isinstance(model, idsmod.ParallelIDS):
        return idsmod.ParallelIDS(model.clusters, [m.copy() for m in model.ensemble],
                                  model.output_net.copy(), model.trained, schema=model.schema)
    return idsmod.SerialIDS(model.net.copy(), model.trained, schema=model.schema)


# --------------------------------------------------------------- attacks ---

def constraints_for(cfg: ExperimentConfig, schema: dio.FeatureSchema) -> atk.AttackConstraints:
    return atk.AttackConstraints.from_schema(schema, cfg.attacks.max_perturbation)


def attack_cached(cfg: ExperimentConfig, ws: Workspace, model, ds: dio.LabeledDataset,
                  kind: str) -> np.ndarray:
    """Adversarial copy of ``ds`` keyed by (model fingerprint, attack spec, source hash)."""
    spec = cfg.attacks.spec(kind)
    fp = model.fingerprint()
    src = ds.digest()
    key = hashlib.sha256(f"{fp}:{spec.key()}:{src}:{cfg.attacks.max_perturbation}".encode()).hexdigest()[:24]
    path = ws.path("cache", f"adv_{key}.csv")
    if path.exists():
        X, _ = atk.load_adversarial(path)
        return X
    log.info("running %s on %d rows", kind, len(ds))
    X = atk.run_attack(model, ds.X, ds.y, spec, constraints_for(cfg, ds.schema))
    atk.save_adversarial(X, path, spec, src, fp)
    return X


def _impact_subset(cfg: ExperimentConfig, test: dio.LabeledDataset, seed: int) -> dio.LabeledDataset:
    cap = cfg.attacks.max_rows
    if cap is None or cap >= len(test):
        return test
    return test.subset(_stratified_rows(test.y, cap, np.random.default_rng(seed + 11)))


def impact_for_seed(cfg: ExperimentConfig, ws: Workspace, seed: int) -> dict:
    out = ws.seed_dir("results", seed) / "impact.json"
    if out.exists():
        return _read_json(out)
    train, test = prepare_data(cfg, ws)
    model = get_ids(cfg, ws, seed, train, test)
    rows = {"clean": {**idsmod.evaluate(model, test).as_dict(), "rows": len(test)}}
    sub = _impact_subset(cfg, test, seed)
    for kind in cfg.attacks.kinds:
        X_adv = attack_cached(cfg, ws, model, sub, kind)
        m = binary_metrics(sub.y, idsmod.predict(model, X_adv))
        rows[kind] = {**m.as_dict(), "rows": len(sub)}
    result = {"seed": seed, "ids_fingerprint": model.fingerprint(), "impact": rows}
    _write_json(out, result)
    return result


# -------------------------------------------------- adversarial datasets ---

def _detector_rows(cfg: ExperimentConfig) -> list[str]:
    rows = list(cfg.attacks.kinds)
    if all(k in rows for k in dio.ATTACK_ORDER):
        rows.append(BALANCED)
    return rows


def advsets_for_seed(cfg: ExperimentConfig, ws: Workspace, seed: int):
    """Attack-specific and balanced training/testing sets for one seed."""
    d = ws.seed_dir("advsets", seed)
    rows = _detector_rows(cfg)
    names = [f"{part}_{r}.csv" for part in ("train", "test") for r in rows]
    if all((d / n).exists() for n in names):
        load = {n: dio.load_saved(d / n) for n in names}
        return ({r: load[f"train_{r}.csv"] for r in rows}, {r: load[f"test_{r}.csv"] for r in rows})
    train, test = prepare_data(cfg, ws)
    model = get_ids(cfg, ws, seed, train, test)
    rng = np.random.default_rng(seed + 23)
    clean_tr = train.subset(_stratified_rows(train.y, cfg.detectors.train_rows, rng))
    clean_te = test.subset(_stratified_rows(test.y, cfg.detectors.test_rows, rng))
    sets = []
    for clean in (clean_tr, clean_te):
        pools = {k: attack_cached(cfg, ws, model, clean, k) for k in cfg.attacks.kinds}
        out = {k: dio.build_attack_specific(clean, pools[k], k, seed) for k in cfg.attacks.kinds}
        if BALANCED in rows:
            out[BALANCED] = dio.build_balanced(clean, pools, seed,
                                               traffic_labels={k: clean.y for k in pools})
        sets.append(out)
    for part, group in zip(("train", "test"), sets):
        for r, ds in group.items():
            dio.save_dataset(ds, d / f"{part}_{r}.csv")
    return sets[0], sets[1]


# ------------------------------------------------------ cross detection ---

@dataclass
class CrossDetectionMatrix:
    source: str  # detector name or fusion rule
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    values: np.ndarray

    def to_csv(self) -> str:
        lines = ["train," + ",".join(self.cols)]
        for r, vals in zip(self.rows, self.values):
            lines.append(r + "," + ",".join(_fmt(v) for v in vals))
        return "\n".join(lines) + "\n"

    def row_mean(self, row: str) -> float:
        return float(np.mean(self.values[self.rows.index(row)]))


def _fmt(v) -> str:
    return "nan" if v is None or not np.isfinite(v) else f"{float(v):.4f}"


def fused_rates(P: np.ndarray, y_adv: np.ndarray, rules, clip: float) -> dict[str, float]:
    adv = y_adv == 1
    out = {}
    for rule in rules:
        Q = np.clip(P, clip, 1.0 - clip) if rule == "dempster" else P
        flags, _ = fusion.fuse_matrix(Q, rule)
        out[rule] = float(np.mean(flags[adv])) if adv.any() else float("nan")
    return out


def train_and_score_bank(cfg: ExperimentConfig, model, train_set: dio.AdvDataset,
                         eval_set: dio.AdvDataset, test_sets: dict[str, dio.AdvDataset],
                         seed: int, mode=None) -> dict:
    """Build a bank on ``model`` (which FT training modifies), train it, score every test set."""
    mode = det.TransferMode.parse(mode or cfg.detectors.mode)
    bank = det.build_bank(model, mode, seed, cfg.detectors.hidden)
    det.train_bank(bank, train_set, eval_set, cfg.detector_train_config(seed))
    scores: dict[str, dict] = {}
    for name, ts in test_sets.items():
        P = det.detect(bank, ts.X)
        adv = ts.y_adv == 1
        per = {f"detector_{j + 1}": float(np.mean(P[adv, j] >= 0.5)) for j in range(P.shape[1])}
        per.update(fused_rates(P, ts.y_adv, cfg.detectors.fusion, cfg.detectors.fusion_clip))
        scores[name] = per
    return {"bank": bank, "scores": scores}


def cross_for_seed(cfg: ExperimentConfig, ws: Workspace, seed: int) -> dict:
    out = ws.seed_dir("results", seed) / "cross.json"
    if out.exists():
        return _read_json(out)
    train, test = prepare_data(cfg, ws)
    model = get_ids(cfg, ws, seed, train, test)
    train_sets, test_sets = advsets_for_seed(cfg, ws, seed)
    eval_cols = {k: test_sets[k] for k in cfg.attacks.kinds}
    result: dict[str, Any] = {"seed": seed, "mode": det.TransferMode.parse(cfg.detectors.mode).value,
                              "rows": {}, "ids_f1_after": {}}
    for row in _detector_rows(cfg):
        fit = train_sets[row]
        if cfg.data.eval_split == "holdout":
            keep, hold = holdout_split(fit.y_adv, cfg.data.holdout_fraction, seed)
            fit_ds, ev_ds = _adv_subset(fit, keep), _adv_subset(fit, hold)
        else:
            fit_ds, ev_ds = fit, test_sets[row]
        live = copy_ids(model)  # fine tuning writes into the IDS it was built on
        res = train_and_score_bank(cfg, live, fit_ds, ev_ds, eval_cols, seed)
        result["rows"][row] = res["scores"]
        result["ids_f1_after"][row] = idsmod.evaluate(live, test).f1
        bank_dir = ws.seed_dir("models", seed) / "banks" / row
        det.save_bank(res["bank"], bank_dir)
    _write_json(out, result)
    return result


def _adv_subset(ds: dio.AdvDataset, rows) -> dio.AdvDataset:
    t = None if ds.traffic_labels is None else ds.traffic_labels[rows]
    return dio.AdvDataset(ds.X[rows], ds.y_adv[rows], ds.provenance[rows], t, ds.schema)


def cross_matrices(per_seed: list[dict], cfg: ExperimentConfig) -> list[CrossDetectionMatrix]:
    """Seed-averaged matrices, one per detector and one per fusion rule."""
    rows = tuple(_detector_rows(cfg))
    cols = tuple(cfg.attacks.kinds)
    if not per_seed or not rows:
        return []
    sources = list(per_seed[0]["rows"][rows[0]][cols[0]].keys())
    rules = [s for s in sources if s in fusion.RULES]
    detectors = sorted((s for s in sources if s not in fusion.RULES),
                       key=lambda s: int(s.rsplit("_", 1)[1]))
    out = []
    for src in [*detectors, *rules]:
        vals = np.array([[np.mean([r["rows"][row][col][src] for r in per_seed]) for col in cols]
                         for row in rows])
        out.append(CrossDetectionMatrix(src, rows, cols, vals))
    return out


# -------------------------------------------------------------- baseline ---

def disagreement(baseline_model, robust_model, X) -> np.ndarray:
    """Flag a row as adversarial when the two models label it differently."""
    return idsmod.predict(baseline_model, X) != idsmod.predict(robust_model, X)


def baseline_for_seed(cfg: ExperimentConfig, ws: Workspace, seed: int) -> dict:
    out = ws.seed_dir("results", seed) / "baseline.json"
    if out.exists():
        return _read_json(out)
    train, test = prepare_data(cfg, ws)
    model = get_ids(cfg, ws, seed, train, test)
    train_sets, test_sets = advsets_for_seed(cfg, ws, seed)
    row = BALANCED if BALANCED in train_sets else cfg.attacks.kinds[0]
    fit_adv, test_adv = train_sets[row], test_sets[row]
    # adversarial rows keep the traffic label of the flow they were made from
    fit = dio.LabeledDataset(fit_adv.X, fit_adv.traffic_labels, train.schema)
    ev = dio.LabeledDataset(test_adv.X, test_adv.traffic_labels, test.schema)
    tcfg = cfg.ids_train_config(seed + 500)
    if isinstance(model, idsmod.ParallelIDS):
        robust = idsmod.train_parallel(fit, ev, model.clusters, tcfg, cfg.ids.hidden)
    else:
        robust = idsmod.train_serial(fit, ev, tcfg, cfg.ids.hidden)
    flags = disagreement(model, robust, test_adv.X)
    clean = test_adv.y_adv == 0
    result = {"seed": seed, "training_set": row,
              "detection_rate": detection_rate(test_adv.y_adv, flags),
              "false_alarm_rate": float(np.mean(flags[clean])) if clean.any() else float("nan"),
              "robust_f1_clean": idsmod.evaluate(robust, test).f1}
    _write_json(out, result)
    return result


# ------------------------------------------------------- top-level runs ---

def _mean_impact(per_seed: list[dict], cfg: ExperimentConfig) -> list[dict]:
    table = []
    for name in ["clean", *cfg.attacks.kinds]:
        entries = [r["impact"][name] for r in per_seed]
        table.append({"attack": name, "rows": entries[0]["rows"],
                      **{m: float(np.mean([e[m] for e in entries]))
                         for m in ("precision", "recall", "f1")}})
    return table


def run_attack_impact(cfg: ExperimentConfig) -> list[dict]:
    ws = Workspace(cfg)
    return _mean_impact([impact_for_seed(cfg, ws, s) for s in cfg.seeds], cfg)


def run_cross_detection(cfg: ExperimentConfig) -> list[CrossDetectionMatrix]:
    ws = Workspace(cfg)
    return cross_matrices([cross_for_seed(cfg, ws, s) for s in cfg.seeds], cfg)


def run_advtrain_baseline(cfg: ExperimentConfig) -> dict:
    ws = Workspace(cfg)
    per = [baseline_for_seed(cfg, ws, s) for s in cfg.seeds]
    return {"detection_rate": float(np.mean([p["detection_rate"] for p in per])),
            "false_alarm_rate": float(np.mean([p["false_alarm_rate"] for p in per])),
            "per_seed": per}


# ---------------------------------------------------------------- report ---

@dataclass
class ExperimentResults:
    config: ExperimentConfig
    source_hash: str
    impact: list[dict]
    cross: list[dict]
    baseline: list[dict]


def collect_results(cfg: ExperimentConfig) -> ExperimentResults:
    """Gather per-seed result files; raises if a stage has not been run."""
    ws = Workspace(cfg)
    train, test = prepare_data(cfg, ws)

    def gather(name):
        paths = [ws.root / "results" / f"seed{s}" / f"{name}.json" for s in cfg.seeds]
        return [_read_json(p) for p in paths if p.exists()]

    return ExperimentResults(cfg, source_hash(train, test), gather("impact"), gather("cross"),
                             gather("baseline"))


def _md_table(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _versions() -> dict:
    import numpy, pandas, scipy  # noqa: E401
    from . import __version__
    return {"advids": __version__, "python": platform.python_version(),
            "numpy": numpy.__version__, "scipy": scipy.__version__, "pandas": pandas.__version__}


def emit_report(results: ExperimentResults, outdir) -> list[Path]:
    """Write CSV and markdown tables plus a manifest; output depends only on ``results``."""
    cfg = results.config
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    files: dict[str, str] = {}
    md = [f"# Experiment report\n\nDesign: {cfg.ids.design}, dataset: {cfg.data.dialect}, "
          f"transfer mode: {det.TransferMode.parse(cfg.detectors.mode).value}, "
          f"seeds: {', '.join(str(s) for s in cfg.seeds)}\n"]

    if results.impact:
        table = _mean_impact(results.impact, cfg)
        head = ["attack", "rows", "precision", "recall", "f1"]
        rows = [[t["attack"], str(t["rows"])] + [_fmt(t[m]) for m in head[2:]] for t in table]
        files["attack_impact.csv"] = "\n".join([",".join(head)] + [",".join(r) for r in rows]) + "\n"
        md.append("## Attack impact (IDS metrics, mean over seeds)\n\n" + _md_table(head, rows))

    if results.cross:
        md.append("## Cross-detection (detection rate, mean over seeds)\n")
        for m in cross_matrices(results.cross, cfg):
            files[f"cross_detection_{m.source}.csv"] = m.to_csv()
            rows = [[r] + [_fmt(v) for v in vals] for r, vals in zip(m.rows, m.values)]
            md.append(f"### {m.source}\n\n" + _md_table(["train", *m.cols], rows))
        after = sorted(results.cross[0]["ids_f1_after"])
        rows = [[r, _fmt(np.mean([c["ids_f1_after"][r] for c in results.cross]))] for r in after]
        files["ids_f1_after_detector_training.csv"] = (
            "train,ids_f1\n" + "".join(f"{a},{b}\n" for a, b in rows))
        md.append("### IDS F1 after detector training\n\n" + _md_table(["train", "ids_f1"], rows))

    if results.baseline:
        head = ["seed", "detection_rate", "false_alarm_rate", "robust_f1_clean"]
        rows = [[str(b["seed"])] + [_fmt(b[h]) for h in head[1:]] for b in results.baseline]
        rows.append(["mean"] + [_fmt(np.mean([b[h] for b in results.baseline])) for h in head[1:]])
        files["baseline.csv"] = "\n".join([",".join(head)] + [",".join(r) for r in rows]) + "\n"
        md.append("## Adversarial-training disagreement baseline\n\n" + _md_table(head, rows))

    files["report.md"] = "\n".join(md)
    digests = {}
    for name in sorted(files):
        (out / name).write_text(files[name], encoding="utf-8", newline="\n")
        digests[name] = hashlib.sha256(files[name].encode()).hexdigest()
    manifest = {"config_hash": cfg.config_hash(), "config": cfg.fingerprint_dict(),
                "seeds": list(cfg.seeds), "source_hash": results.source_hash,
                "versions": _versions(), "files": digests}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                       encoding="utf-8", newline="\n")
    return [out / n for n in [*sorted(files), "manifest.json"]]


def run_all(cfg: ExperimentConfig) -> list[Path]:
    ws = Workspace(cfg)
    for s in cfg.seeds:
        impact_for_seed(cfg, ws, s)
        cross_for_seed(cfg, ws, s)
        if cfg.baseline:
            baseline_for_seed(cfg, ws, s)
    return emit_report(collect_results(cfg), ws.root / "report")
