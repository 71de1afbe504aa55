"""Transfer-learning adversarial detectors built on a trained IDS.

A detector reuses a prefix of IDS layers and adds a fresh head of two ReLU
layers and one sigmoid unit. How the prefix is reused is the transfer mode:

* feature extraction: the IDS arrays are shared and frozen;
* fine tuning: the IDS arrays are shared and trained, so training the
  detector also changes the IDS;
* duplicate fine tuning: the prefix is copied, then trained.

Serial banks hold one detector per IDS hidden layer (detector n reuses
layers 1..n). Parallel banks hold one detector per ensemble member, reusing
all of that member's hidden layers and reading only its cluster's columns.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import netcore as nc
from .errors import ConfigurationError, DataError, ShapeError
from .ids import ParallelIDS, SerialIDS

HEAD = (256, 256)


class TransferMode(str, Enum):
    FE = "feature_extraction"
    FT = "fine_tuning"
    DFT = "duplicate_fine_tuning"

    @classmethod
    def parse(cls, value) -> "TransferMode":
        if isinstance(value, cls):
            return value
        short = {"fe": cls.FE, "ft": cls.FT, "dft": cls.DFT}
        key = str(value).lower()
        if key in short:
            return short[key]
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(f"unknown transfer mode {value!r}") from None

    def reuse(self, layer: nc.DenseLayer) -> nc.DenseLayer:
        if self is TransferMode.FE:
            return layer.view(trainable=False)
        if self is TransferMode.FT:
            return layer.view(trainable=True)
        return layer.copy(trainable=True)


@dataclass(eq=False)
class AdversarialDetector:
    net: nc.Network
    design: str  # "serial" | "parallel"
    index: int
    columns: tuple[int, ...] | None = None  # parallel detectors read only these
    prefix_len: int = 0
    history: nc.TrainHistory | None = None

    def inputs(self, X: np.ndarray) -> np.ndarray:
        return X if self.columns is None else X[:, list(self.columns)]

    def proba(self, X) -> np.ndarray:
        return nc.predict_proba(self.net, self.inputs(X))[:, 0]


@dataclass(eq=False)
class DetectorBank:
    detectors: list[AdversarialDetector]
    mode: TransferMode
    source_ids_fingerprint: str
    design: str
    input_dim: int
    seeds: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.detectors)


def _head(width: int, seed: int, hidden=HEAD) -> list[nc.DenseLayer]:
    dims = [width, *hidden, 1]
    return nc.init_network(dims, ["relu"] * len(hidden) + ["sigmoid"], seed).layers


def head_seed(seed: int, index: int) -> int:
    return seed * 1000 + 500 + index


def _require_trained(ids) -> None:
    if not getattr(ids, "trained", False):
        raise ConfigurationError("detectors can only be built on a trained IDS")


def build_serial_bank(ids: SerialIDS, mode, seed: int = 0, hidden=HEAD) -> DetectorBank:
    _require_trained(ids)
    mode = TransferMode.parse(mode)
    detectors = []
    for n in range(1, ids.hidden_layers + 1):
        prefix = [mode.reuse(layer) for layer in ids.net.layers[:n]]
        s = head_seed(seed, n)
        net = nc.Network(prefix + _head(prefix[-1].fan_out, s, hidden), s)
        detectors.append(AdversarialDetector(net, "serial", n, None, n))
    return DetectorBank(detectors, mode, ids.fingerprint(), "serial", ids.input_dim)


def build_parallel_bank(pids: ParallelIDS, mode, seed: int = 0, hidden=HEAD) -> DetectorBank:
    _require_trained(pids)
    mode = TransferMode.parse(mode)
    detectors = []
    for k, (member, cols) in enumerate(zip(pids.ensemble, pids.clusters.clusters)):
        prefix = [mode.reuse(layer) for layer in member.layers[:-1]]
        s = head_seed(seed, k)
        net = nc.Network(prefix + _head(prefix[-1].fan_out, s, hidden), s)
        detectors.append(AdversarialDetector(net, "parallel", k, tuple(cols), len(prefix)))
    return DetectorBank(detectors, mode, pids.fingerprint(), "parallel", pids.input_dim)


def build_bank(ids, mode, seed: int = 0, hidden=HEAD) -> DetectorBank:
    if isinstance(ids, ParallelIDS):
        return build_parallel_bank(ids, mode, seed, hidden)
    return build_serial_bank(ids, mode, seed, hidden)


def _xy(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple):
        return np.asarray(data[0], dtype=np.float64), np.asarray(data[1])
    return data.X, data.y


def train_bank(bank: DetectorBank, train_adv, eval_adv, cfg: nc.TrainConfig) -> DetectorBank:
    """Train every detector in turn on its own inputs; best checkpoint kept per detector.

    Detectors are trained one after another. This ordering matters only for
    fine tuning, where detectors share IDS layers.
    """
    if cfg.loss != "binary_cross_entropy":
        raise ConfigurationError("detectors are trained with binary cross-entropy")
    X, y = _xy(train_adv)
    Xe, ye = _xy(eval_adv)
    for X_ in (X, Xe):
        if X_.shape[1] != bank.input_dim:
            raise ShapeError(f"expected {bank.input_dim} columns, got {X_.shape[1]}")
    bank.seeds = []
    for det in bank.detectors:
        s = cfg.seed * 1000 + det.index
        _, det.history = nc.train(det.net, (det.inputs(X), y), (det.inputs(Xe), ye),
                                  replace(cfg, seed=s))
        bank.seeds.append(s)
    return bank


def detect(bank: DetectorBank, X) -> np.ndarray:
    """Adversarial probability per sample (rows) and detector (columns)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != bank.input_dim:
        raise ShapeError(f"expected {bank.input_dim} columns, got shape {X.shape}")
    if not bank.detectors:
        return np.zeros((X.shape[0], 0))
    return np.column_stack([det.proba(X) for det in bank.detectors])


def detector_labels(P: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(P) >= threshold).astype(np.int64)


# --------------------------------------------------------------- bundles ---

def save_bank(bank: DetectorBank, directory) -> Path:
    """Write detector checkpoints and a manifest.

    Parameter sharing between detectors and the IDS is not preserved: a
    reloaded bank owns independent copies.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for det in bank.detectors:
        name = f"detector_{det.index:02d}.nn"
        nc.save_network(det.net, d / name)
        entries.append({"file": name, "design": det.design, "index": det.index,
                        "columns": list(det.columns) if det.columns is not None else None,
                        "prefix_len": det.prefix_len,
                        "history": asdict(det.history) if det.history else None})
    manifest = {"mode": bank.mode.value, "design": bank.design, "input_dim": bank.input_dim,
                "source_ids_fingerprint": bank.source_ids_fingerprint, "seeds": bank.seeds,
                "detectors": entries}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return d


def load_bank(directory) -> DetectorBank:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError:
        raise DataError(f"{d}: no detector manifest") from None
    dets = []
    for e in manifest["detectors"]:
        cols = tuple(e["columns"]) if e["columns"] is not None else None
        dets.append(AdversarialDetector(nc.load_network(d / e["file"]), e["design"], e["index"],
                                        cols, e["prefix_len"]))
    return DetectorBank(dets, TransferMode(manifest["mode"]), manifest["source_ids_fingerprint"],
                        manifest["design"], manifest["input_dim"], manifest["seeds"])
