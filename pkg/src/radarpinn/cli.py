"""Command-line entry point: ``radarpinn {simulate,preprocess,invert,rx-study,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .domain import DomainError, LayeredProfile, eval_layered, load_profile
from .fdtd import WaveRecordSet
from .harness import (
    QUICK_TRAIN,
    ConfigError,
    ExperimentConfig,
    UndefinedMetricError,
    emit_artifacts,
    metric_mse,
    metric_r2,
    probe_points,
    profile_values,
    run_rx_study,
    run_synthetic,
    synthesize,
)
from .pinn import DivergenceError, TrainReport, train_model1, train_model2
from .signal import preprocess_manifest

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

log = logging.getLogger("radarpinn")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    train = cfg.train
    if getattr(args, "quick", False):
        train = replace(QUICK_TRAIN, seed=train.seed)
    if getattr(args, "seed", None) is not None:
        train = replace(train, seed=args.seed)
    over = {"train": train}
    if getattr(args, "repeats", None) is not None:
        over["n_repeats"] = args.repeats
    if getattr(args, "model", None) is not None:
        over["models"] = (args.model,)
    try:
        return replace(cfg, **over)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _out(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out) / cfg.name


def cmd_simulate(args) -> int:
    cfg = _config(args)
    files = emit_artifacts(_out(args, cfg), config=cfg, records=synthesize(cfg))
    print("\n".join(str(f) for f in files))
    return EXIT_OK


def cmd_preprocess(args) -> int:
    stages = tuple(args.stages.split(",")) if args.stages else ("ifft", "normalize", "squared_abs")
    try:
        composite = preprocess_manifest(args.manifest, stages, hann=args.hann)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot preprocess {args.manifest}: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = composite.to_records().save(out / "traces.csv")
    print("\n".join(str(f) for f in files))
    return EXIT_OK


def cmd_invert(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    if args.traces:
        # measured (or externally produced) data: no ground truth, no metrics
        records = WaveRecordSet.load(args.traces)
        reports = []
        for model in cfg.models:
            for r in range(cfg.n_repeats):
                train = replace(cfg.train, seed=cfg.train.seed + r)
                if model == 1:
                    reports.append(train_model1(records, cfg.profile.boundaries, train))
                else:
                    reports.append(train_model2(records, train))
        files = emit_artifacts(out, reports, config=cfg, records=records)
        print("\n".join(str(f) for f in files))
        return EXIT_OK
    res = run_synthetic(cfg)
    files = emit_artifacts(
        out, res.reports, res.metrics, config=cfg, records=res.records, probes=res.probes,
        profile_stats=res.profile_stats,
    )
    print("\n".join(str(f) for f in files))
    for m in res.metrics:
        print(f"{m.run_id}: mse={m.mse:.4g} r2={m.r2:.4g} status={m.status}")
    if res.failures:
        for f in res.failures:
            print(f"diverged: {f}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_rx_study(args) -> int:
    cfg = _config(args)
    counts = tuple(int(k) for k in args.rx_counts.split(",")) if args.rx_counts else None
    study = run_rx_study(cfg, counts)
    files = emit_artifacts(_out(args, cfg), config=cfg, study=study)
    print("\n".join(str(f) for f in files))
    for k, n, mean, std in study.summary:
        print(f"k={k}: {n} subsets, mse {mean:.4g} +/- {std:.4g}")
    return EXIT_DIVERGED if any(r.status != "ok" for r in study.rows) else EXIT_OK


def cmd_eval(args) -> int:
    try:
        data = json.loads(Path(args.report).read_text())
        truth = load_profile(Path(args.truth).read_text())
    except (OSError, json.JSONDecodeError, DomainError) as exc:
        raise ConfigError(f"cannot read inputs: {exc}") from None
    if not isinstance(truth, LayeredProfile):
        raise ConfigError("truth must be a layered profile")
    # accept a bare report or the per-seed bundle written by ``invert``
    bundle = data["reports"] if "reports" in data else {f"model{data['model']}": data}
    rows = {}
    for key in sorted(bundle):
        rep = TrainReport.from_dict(bundle[key])
        rec = rep.recovered
        if isinstance(rec, LayeredProfile):
            lo, hi = rec.x_min, rec.x_max
        else:
            lo, hi = float(rec.xs.min()), float(rec.xs.max())
        xs = probe_points(max(lo, truth.x_min), min(hi, truth.x_max), args.probe_spacing)
        pred, t = profile_values(rep, xs), eval_layered(truth, xs)
        try:
            r2 = metric_r2(pred, t)
        except UndefinedMetricError:
            r2 = None
        rows[key] = {"mse": metric_mse(pred, t), "r2": r2, "probes": xs.tolist(), "predicted": pred.tolist()}
    print(json.dumps(rows, indent=1, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radarpinn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, repeats=False, model=False):
        sp.add_argument("--config", help="experiment JSON (defaults: two-layer synthetic case)")
        sp.add_argument("--out", default="out", help="output root; files go to <out>/<experiment>/")
        sp.add_argument("--seed", type=int, help="base seed (overrides the config)")
        if repeats:
            sp.add_argument("--repeats", type=int, help="number of seeds per model")
        sp.add_argument("--quick", action="store_true", help="reduced training budget (700 epochs, 2000 points)")
        if model:
            sp.add_argument("--model", type=int, choices=(1, 2), help="train only this model")

    common(sub.add_parser("simulate", help="FDTD forward run writing traces.csv"))
    sp = sub.add_parser("preprocess", help="frequency sweeps -> composite time traces")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", default="out/preprocessed")
    sp.add_argument("--stages", help="comma-separated prefix of ifft,normalize,squared_abs")
    sp.add_argument("--hann", action="store_true")
    sp = sub.add_parser("invert", help="train PINN inversions (synthetic unless --traces)")
    common(sp, repeats=True, model=True)
    sp.add_argument("--traces", help="trace CSV to invert instead of simulating")
    sp = sub.add_parser("rx-study", help="receiver-count study with model 2")
    common(sp)
    sp.add_argument("--rx-counts", help="comma-separated subset sizes, e.g. 2,3,6")
    sp = sub.add_parser("eval", help="score a saved report against a truth profile")
    sp.add_argument("--report", required=True)
    sp.add_argument("--truth", required=True, help="profile JSON")
    sp.add_argument("--probe-spacing", type=float, default=0.2)
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "invert": cmd_invert,
    "rx-study": cmd_rx_study,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
