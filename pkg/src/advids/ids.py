"""Serial and parallel deep intrusion detectors.

The serial IDS is one dense network over all feature columns. The parallel
IDS trains one member network per feature cluster on that cluster's columns,
then trains an output network on the concatenated member softmax outputs
(two probabilities per member).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import netcore as nc
from .clustering import FeatureClusters
from .dataio import FeatureSchema, LabeledDataset
from .errors import ConfigurationError, DataError, ShapeError
from .metrics import Metrics, binary_metrics

HIDDEN = (256, 256, 256)
N_CLASSES = 2


def build_classifier(n_inputs: int, hidden: Sequence[int], seed: int) -> nc.Network:
    dims = [n_inputs, *hidden, N_CLASSES]
    acts = ["relu"] * len(hidden) + ["softmax"]
    return nc.init_network(dims, acts, seed)


def _check_cfg(cfg: nc.TrainConfig) -> None:
    if cfg.loss != "categorical_cross_entropy":
        raise ConfigurationError("IDS training uses categorical cross-entropy")


@dataclass(eq=False)
class SerialIDS:
    net: nc.Network
    trained: bool = False
    history: nc.TrainHistory | None = None
    schema: FeatureSchema | None = None
    design = "serial"

    @property
    def input_dim(self) -> int:
        return self.net.input_dim

    @property
    def hidden_layers(self) -> int:
        return len(self.net.layers) - 1

    def fingerprint(self) -> str:
        return self.net.fingerprint()


@dataclass(eq=False)
class ParallelIDS:
    clusters: FeatureClusters
    ensemble: list[nc.Network]
    output_net: nc.Network
    trained: bool = False
    histories: list[nc.TrainHistory] = field(default_factory=list)
    schema: FeatureSchema | None = None
    design = "parallel"

    def __post_init__(self):
        if len(self.ensemble) != len(self.clusters):
            raise ConfigurationError(
                f"{len(self.ensemble)} ensemble members for {len(self.clusters)} clusters"
            )
        for k, (net, cols) in enumerate(zip(self.ensemble, self.clusters.clusters)):
            if net.input_dim != len(cols):
                raise ConfigurationError(
                    f"member {k} takes {net.input_dim} inputs but its cluster has {len(cols)}"
                )
        if self.output_net.input_dim != N_CLASSES * len(self.ensemble):
            raise ConfigurationError("output network width must be 2 x ensemble size")

    @property
    def input_dim(self) -> int:
        return self.clusters.n_features

    def fingerprint(self) -> str:
        h = hashlib.sha256(json.dumps(self.clusters.to_dict(), sort_keys=True).encode())
        for net in [*self.ensemble, self.output_net]:
            h.update(net.fingerprint().encode())
        return h.hexdigest()


IDS = SerialIDS | ParallelIDS


def _width_check(ds: LabeledDataset, width: int) -> None:
    if ds.X.shape[1] != width:
        raise ShapeError(f"dataset has {ds.X.shape[1]} columns, model expects {width}")


def train_serial(train: LabeledDataset, eval: LabeledDataset, cfg: nc.TrainConfig,
                 hidden: Sequence[int] = HIDDEN) -> SerialIDS:
    _check_cfg(cfg)
    _width_check(eval, train.width)
    net = build_classifier(train.width, hidden, cfg.seed)
    net, history = nc.train(net, train, eval, cfg)
    return SerialIDS(net, True, history, train.schema)


def member_seed(seed: int, k: int) -> int:
    return seed * 1000 + k + 1


def meta_features(ensemble: Sequence[nc.Network], clusters: FeatureClusters, X) -> np.ndarray:
    """Concatenated softmax outputs of every member on its own columns."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != clusters.n_features:
        raise ShapeError(f"expected {clusters.n_features} columns, got shape {X.shape}")
    parts = [nc.predict_proba(net, X[:, list(cols)])
             for net, cols in zip(ensemble, clusters.clusters)]
    return np.hstack(parts) if parts else np.zeros((X.shape[0], 0))


def train_parallel(train: LabeledDataset, eval: LabeledDataset, clusters: FeatureClusters,
                   cfg: nc.TrainConfig, hidden: Sequence[int] = HIDDEN) -> ParallelIDS:
    """Members first (each on its slice), then the output net on their predictions."""
    _check_cfg(cfg)
    if clusters.n_features != train.width:
        raise ConfigurationError(
            f"clusters cover {clusters.n_features} columns, dataset has {train.width}"
        )
    _width_check(eval, train.width)
    ensemble, histories = [], []
    for k, cols in enumerate(clusters.clusters):
        cols = list(cols)
        seed = member_seed(cfg.seed, k)
        net = build_classifier(len(cols), hidden, seed)
        net, hist = nc.train(net, (train.X[:, cols], train.y), (eval.X[:, cols], eval.y),
                             replace(cfg, seed=seed))
        ensemble.append(net)
        histories.append(hist)
    meta_train = meta_features(ensemble, clusters, train.X)
    meta_eval = meta_features(ensemble, clusters, eval.X)
    seed = member_seed(cfg.seed, len(ensemble))
    out = build_classifier(meta_train.shape[1], hidden, seed)
    out, hist = nc.train(out, (meta_train, train.y), (meta_eval, eval.y), replace(cfg, seed=seed))
    histories.append(hist)
    return ParallelIDS(clusters, ensemble, out, True, histories, train.schema)


def classify(ids: IDS, X) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities (rows sum to 1) and argmax labels."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != ids.input_dim:
        raise ShapeError(f"expected {ids.input_dim} columns, got shape {X.shape}")
    if isinstance(ids, ParallelIDS):
        probs = nc.predict_proba(ids.output_net, meta_features(ids.ensemble, ids.clusters, X))
    else:
        probs = nc.predict_proba(ids.net, X)
    return probs, np.argmax(probs, axis=1).astype(np.int64)


def predict(ids: IDS, X) -> np.ndarray:
    return classify(ids, X)[1]


def evaluate(ids: IDS, ds: LabeledDataset) -> Metrics:
    if len(ds) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    return binary_metrics(ds.y, predict(ids, ds.X))


# ------------------------------------------------------------- bundles ---

def save_ids(ids: IDS, directory, config: nc.TrainConfig | None = None) -> Path:
    """Write a model bundle: checkpoints, cluster map, schema and manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"design": ids.design, "trained": ids.trained, "fingerprint": ids.fingerprint()}
    if isinstance(ids, ParallelIDS):
        files = []
        for k, net in enumerate(ids.ensemble):
            name = f"member_{k:02d}.nn"
            nc.save_network(net, d / name)
            files.append(name)
        nc.save_network(ids.output_net, d / "output.nn")
        ids.clusters.save(d / "clusters.json")
        manifest.update(members=files, output="output.nn", clusters="clusters.json",
                        seeds=[net.seed for net in [*ids.ensemble, ids.output_net]])
    else:
        nc.save_network(ids.net, d / "serial.nn")
        manifest.update(network="serial.nn", seeds=[ids.net.seed])
    if ids.schema is not None:
        ids.schema.save(d / "schema.json")
        manifest["schema"] = "schema.json"
    if config is not None:
        manifest["config"] = asdict(config)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return d


def load_ids(directory) -> IDS:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError:
        raise DataError(f"{d}: no model manifest") from None
    schema = FeatureSchema.load(d / manifest["schema"]) if "schema" in manifest else None
    if manifest["design"] == "parallel":
        ids = ParallelIDS(
            FeatureClusters.load(d / manifest["clusters"]),
            [nc.load_network(d / f) for f in manifest["members"]],
            nc.load_network(d / manifest["output"]),
            manifest["trained"],
            schema=schema,
        )
    else:
        ids = SerialIDS(nc.load_network(d / manifest["network"]), manifest["trained"],
                        schema=schema)
    if ids.fingerprint() != manifest["fingerprint"]:
        raise DataError(f"{d}: checkpoint contents do not match the manifest fingerprint")
    return ids
