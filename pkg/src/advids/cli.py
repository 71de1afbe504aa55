"""Command-line entry point: ``advids <subcommand> [--config FILE] [overrides]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness as H
from . import ids as idsmod
from .errors import AdvIDSError


def _seeds(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def _words(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


# flag -> dotted config key
OVERRIDES = {
    "data_dir": "data.data_dir",
    "dialect": "data.dialect",
    "train": "data.train",
    "test": "data.test",
    "design": "ids.design",
    "clustering": "ids.clustering",
    "k": "ids.k",
    "attacks": "attacks.kinds",
    "mode": "detectors.mode",
    "fusion": "detectors.fusion",
    "seeds": "seeds",
    "output": "output",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment configuration")
    common.add_argument("--data-dir", help=f"dataset directory (default ${H.ENV_DATA_DIR})")
    common.add_argument("--dialect", choices=["nslkdd", "cicids2017"])
    common.add_argument("--train", help="training file (or CIC directory), relative to the data dir")
    common.add_argument("--test", help="test file; empty string splits the training source")
    common.add_argument("--design", choices=["serial", "parallel"])
    common.add_argument("--clustering", choices=["distribution", "cut"])
    common.add_argument("--k", type=int, help="number of feature clusters")
    common.add_argument("--attacks", type=_words, help="comma list of fgsm,pgd,cw,df")
    common.add_argument("--mode", help="transfer mode: fe, ft or dft")
    common.add_argument("--fusion", type=_words, help="comma list of majority,bayes_avg,dempster")
    common.add_argument("--seeds", type=_seeds, help="comma list of integer seeds")
    common.add_argument("--output", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="advids", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "preprocess": "parse and normalise the dataset",
        "train-ids": "train the IDS for every seed",
        "attack": "attack-impact table",
        "build-advsets": "build attack-specific and balanced detector datasets",
        "train-detectors": "train detector banks (also scores them)",
        "cross-detect": "cross-detection matrices per detector and fusion rule",
        "baseline": "adversarial-training disagreement baseline",
        "report": "write report files from finished stages",
        "run-all": "every stage, then the report",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def load(args) -> H.ExperimentConfig:
    cfg = H.load_config(args.config) if args.config else H.ExperimentConfig()
    changes = {key: getattr(args, flag) for flag, key in OVERRIDES.items()}
    return H.with_overrides(cfg, **changes)


def _print_matrices(matrices) -> None:
    for m in matrices:
        print(f"[{m.source}]")
        print(m.to_csv(), end="")


def run(args) -> int:
    cfg = load(args)
    cmd = args.command
    if cmd == "preprocess":
        train, test = H.prepare_data(cfg, H.Workspace(cfg))
        print(f"train {len(train)} rows, test {len(test)} rows, {train.width} columns")
    elif cmd == "train-ids":
        ws = H.Workspace(cfg)
        train, test = H.prepare_data(cfg, ws)
        for s in cfg.seeds:
            model = H.get_ids(cfg, ws, s, train, test)
            m = idsmod.evaluate(model, test)
            print(f"seed {s}: precision {m.precision:.4f} recall {m.recall:.4f} f1 {m.f1:.4f}")
    elif cmd == "attack":
        for row in H.run_attack_impact(cfg):
            print(f"{row['attack']}: precision {row['precision']:.4f} "
                  f"recall {row['recall']:.4f} f1 {row['f1']:.4f}")
    elif cmd == "build-advsets":
        ws = H.Workspace(cfg)
        for s in cfg.seeds:
            tr, te = H.advsets_for_seed(cfg, ws, s)
            print(f"seed {s}: " + ", ".join(f"{k} {len(tr[k])}/{len(te[k])}" for k in tr))
    elif cmd in ("train-detectors", "cross-detect"):
        _print_matrices(H.run_cross_detection(cfg))
    elif cmd == "baseline":
        res = H.run_advtrain_baseline(cfg)
        print(f"detection rate {res['detection_rate']:.4f}, "
              f"false alarm rate {res['false_alarm_rate']:.4f}")
    elif cmd == "report":
        ws = H.Workspace(cfg)
        for p in H.emit_report(H.collect_results(cfg), ws.root / "report"):
            print(p)
    elif cmd == "run-all":
        for p in H.run_all(cfg):
            print(p)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return run(args)
    except FileNotFoundError as exc:
        print(f"advids: {exc}", file=sys.stderr)
        return 2
    except (AdvIDSError, OSError) as exc:
        print(f"advids: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
