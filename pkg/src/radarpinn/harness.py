"""Experiment orchestration: synthetic runs, repeats, the receiver-count study, metrics and artifacts."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import svgplot
from .domain import (
    DomainError,
    LayeredProfile,
    SpatialDomain,
    TimeDomain,
    eval_layered,
    profile_from_dict,
)
from .fdtd import (
    REFERENCE_DT,
    SourceSpec,
    StabilityError,
    WaveRecordSet,
    check_cfl,
    default_grid,
    simulate,
)
from .pinn import (
    DivergenceError,
    Model1State,
    TrainConfig,
    TrainReport,
    predict_profile,
    train_model1,
    train_model2,
)
from .signal import normalize, squared_abs

log = logging.getLogger(__name__)

# Synthetic experiments step the simulator on a clock four times coarser than
# the source's nominal one; the pulse (defined per step index) widens to match.
DEFAULT_SIM_DT = 4 * REFERENCE_DT
SYNTHETIC_STAGES = ("normalize", "squared_abs")
# Desk-scale training budget for sweeps with many runs (about 30 s per run on one core).
QUICK_TRAIN = TrainConfig(epochs=700, n_collocation=2000)
METRIC_COLUMNS = ("run_id", "model", "seed", "mse", "r2", "wall_time_s", "status")


class ConfigError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    pass


# -- metrics -----------------------------------------------------------------------


def _pair(predicted, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.size == 0 or p.size != t.size:
        raise ValueError(f"need equal non-empty inputs, got {p.size} and {t.size}")
    return p, t


def metric_mse(predicted, truth) -> float:
    p, t = _pair(predicted, truth)
    return float(np.mean((p - t) ** 2))


def metric_r2(predicted, truth) -> float:
    p, t = _pair(predicted, truth)
    if p.size < 2:
        raise UndefinedMetricError("R^2 needs at least two points")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 is undefined for a constant truth")
    return 1.0 - float(np.sum((p - t) ** 2)) / ss_tot


def metric_relative_l2(predicted, truth) -> float:
    """||predicted - truth|| / ||truth||."""
    p, t = _pair(predicted, truth)
    norm = float(np.linalg.norm(t))
    if norm == 0.0:
        raise UndefinedMetricError("relative error is undefined for a zero truth")
    return float(np.linalg.norm(p - t)) / norm


def probe_points(x_lo: float, x_hi: float, spacing: float) -> np.ndarray:
    n = int(np.floor((x_hi - x_lo) / spacing + 1e-9)) + 1
    return x_lo + spacing * np.arange(n)


def profile_values(report: TrainReport, xs) -> np.ndarray:
    """Recovered relative permittivity of a trained model at arbitrary positions."""
    xs = np.asarray(xs, dtype=float)
    state = report.final_state
    if isinstance(state, Model1State):
        idx = np.searchsorted(np.asarray(state.boundaries, dtype=float), xs, side="right")
        return state.eps_r[idx]
    return predict_profile(state, xs).eps_r


# -- configuration -------------------------------------------------------------------


def _two_layer_default() -> LayeredProfile:
    return LayeredProfile((0.9,), (3.0, 9.0), 0.0, 1.8)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "two_layer"
    profile: LayeredProfile = field(default_factory=_two_layer_default)
    dt: float = DEFAULT_SIM_DT
    t_max: float = 14e-9
    source: SourceSpec = SourceSpec()
    tx_positions: tuple[float, ...] = (0.05,)
    rx_positions: tuple[float, ...] = tuple(float(x) for x in np.linspace(0.15, 1.65, 6))
    train: TrainConfig = TrainConfig()
    models: tuple[int, ...] = (1, 2)
    n_repeats: int = 20
    probe_spacing: float = 0.2
    preprocessing: tuple[str, ...] = ()
    rx_counts: tuple[int, ...] = (2, 3, 4, 5, 6)
    workers: int = 1

    def __post_init__(self):
        for name in ("tx_positions", "rx_positions"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        for name in ("models", "rx_counts"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        object.__setattr__(self, "preprocessing", tuple(self.preprocessing))
        self.validate()

    # grids
    @property
    def grids(self) -> tuple[SpatialDomain, TimeDomain]:
        return default_grid(self.profile.x_min, self.profile.x_max, self.t_max, self.dt)

    def validate(self) -> None:
        p = self.profile
        if not self.name or any(c in self.name for c in "/\\"):
            raise ConfigError(f"experiment name {self.name!r} is not a plain directory name")
        if not (self.dt > 0 and self.t_max > 0):
            raise ConfigError("dt and t_max must be positive")
        if len(self.tx_positions) != 1:
            raise ConfigError("synthetic runs model exactly one transmitter")
        if not self.rx_positions:
            raise ConfigError("need at least one receiver")
        if not all(p.x_min <= x <= p.x_max for x in self.rx_positions):
            raise ConfigError(f"receivers {self.rx_positions} outside [{p.x_min}, {p.x_max}]")
        if not all(p.x_min < x < p.x_max for x in self.tx_positions):
            raise ConfigError("transmitter must sit strictly inside the domain")
        domain, _ = self.grids
        try:
            courant = check_cfl(domain.dx, self.dt, min(p.eps_r))
        except StabilityError as exc:
            raise ConfigError(str(exc)) from None
        log.debug("Courant number %.3f", courant)
        if not set(self.models) <= {1, 2} or not self.models:
            raise ConfigError(f"models must be drawn from (1, 2), got {self.models}")
        if 1 in self.models:
            lo, hi = min(self.rx_positions), max(self.rx_positions)
            if any(not lo < b < hi for b in p.boundaries):
                raise ConfigError("model 1 needs every layer boundary strictly inside the receiver span")
        if self.n_repeats < 1:
            raise ConfigError("n_repeats must be at least 1")
        if not self.probe_spacing > 0:
            raise ConfigError("probe_spacing must be positive")
        if self.preprocessing and tuple(self.preprocessing) not in (SYNTHETIC_STAGES[:1], SYNTHETIC_STAGES):
            raise ConfigError(f"preprocessing must be a prefix of {SYNTHETIC_STAGES}")
        if any(not 1 <= k <= len(self.rx_positions) for k in self.rx_counts):
            raise ConfigError(f"rx_counts {self.rx_counts} must lie in 1..{len(self.rx_positions)}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "profile": self.profile.to_dict(),
            "dt": self.dt,
            "t_max": self.t_max,
            "source": self.source.to_dict(),
            "tx_positions": list(self.tx_positions),
            "rx_positions": list(self.rx_positions),
            "train": self.train.to_dict(),
            "models": list(self.models),
            "n_repeats": self.n_repeats,
            "probe_spacing": self.probe_spacing,
            "preprocessing": list(self.preprocessing),
            "rx_counts": list(self.rx_counts),
            "workers": self.workers,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(data)
        try:
            if "profile" in kw:
                prof = profile_from_dict(kw["profile"])
                if not isinstance(prof, LayeredProfile):
                    raise ConfigError("ground truth must be a layered profile")
                kw["profile"] = prof
            if "source" in kw:
                kw["source"] = SourceSpec(**kw["source"])
            if "train" in kw:
                kw["train"] = TrainConfig.from_dict(kw["train"])
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError, DomainError, KeyError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)


# -- runs ------------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    run_id: str
    model: int
    seed: int
    mse: float
    r2: float
    wall_time_s: float
    status: str = "ok"

    def __post_init__(self):
        if self.status == "ok" and not (self.mse >= 0 and (np.isnan(self.r2) or self.r2 <= 1)):
            raise ValueError(f"inconsistent metrics {self.mse}, {self.r2}")


@dataclass
class ProfileStats:
    xs: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    truth: np.ndarray
    n_runs: int


@dataclass
class SyntheticResult:
    config: ExperimentConfig
    records: WaveRecordSet
    reports: list[TrainReport]
    metrics: list[MetricsRow]
    probes: list[tuple[str, float, float, float]]  # run_id, x, truth, predicted
    profile_stats: dict[int, ProfileStats]
    failures: list[str]


def synthesize(config: ExperimentConfig) -> WaveRecordSet:
    """Forward-simulate the configured ground truth, applying any requested trace stages."""
    domain, tm = config.grids
    rec = simulate(config.profile, config.source, config.tx_positions[0], domain, tm, config.rx_positions)
    if not config.preprocessing:
        return rec
    traces = rec.traces
    tags = []
    for stage in config.preprocessing:
        fn = normalize if stage == "normalize" else squared_abs
        traces = np.array([fn(tr) for tr in traces])
        tags.append(stage)
    meta = dict(rec.meta, processing_tags=tags)
    return replace(rec, traces=traces, meta=meta)


def _train_job(job) -> tuple[TrainReport | None, str | None, float]:
    model, records, boundaries, train = job
    t0 = time.perf_counter()
    try:
        rep = train_model1(records, boundaries, train) if model == 1 else train_model2(records, train)
        return rep, None, time.perf_counter() - t0
    except DivergenceError as exc:
        return None, str(exc), time.perf_counter() - t0


def _run_jobs(jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [_train_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map keeps submission order, so outputs do not depend on scheduling
        return list(pool.map(_train_job, jobs))


def _safe_r2(pred, truth) -> float:
    try:
        return metric_r2(pred, truth)
    except UndefinedMetricError:
        return float("nan")


def run_synthetic(config: ExperimentConfig, records: WaveRecordSet | None = None) -> SyntheticResult:
    """Simulate, train every configured model ``n_repeats`` times, and score against the truth."""
    records = synthesize(config) if records is None else records
    seeds = [config.train.seed + r for r in range(config.n_repeats)]
    jobs = [
        (model, records, config.profile.boundaries, replace(config.train, seed=seed))
        for model in config.models
        for seed in seeds
    ]
    outcomes = _run_jobs(jobs, config.workers)

    lo, hi = min(records.rx_positions), max(records.rx_positions)
    probes = probe_points(lo, hi, config.probe_spacing)
    truth_probe = eval_layered(config.profile, probes)
    grid = np.linspace(lo, hi, config.train.profile_points)
    truth_grid = eval_layered(config.profile, grid)

    reports, metrics, probe_rows, failures = [], [], [], []
    curves: dict[int, list[np.ndarray]] = {m: [] for m in config.models}
    for (model, _, _, train), (rep, err, wall) in zip(jobs, outcomes):
        run_id = f"model{model}_seed{train.seed}"
        if rep is None:
            failures.append(f"{run_id}: {err}")
            metrics.append(MetricsRow(run_id, model, train.seed, float("nan"), float("nan"), wall, "diverged"))
            continue
        pred = profile_values(rep, probes)
        metrics.append(
            MetricsRow(run_id, model, train.seed, metric_mse(pred, truth_probe), _safe_r2(pred, truth_probe), wall)
        )
        probe_rows.extend((run_id, float(x), float(t), float(p)) for x, t, p in zip(probes, truth_probe, pred))
        curves[model].append(profile_values(rep, grid))
        reports.append(rep)

    stats = {
        m: ProfileStats(grid, np.mean(c, axis=0), np.std(c, axis=0), truth_grid, len(c))
        for m, c in curves.items()
        if c
    }
    return SyntheticResult(config, records, reports, metrics, probe_rows, stats, failures)


@dataclass(frozen=True)
class StudyRow:
    k: int
    subset_id: int
    rx_indices: tuple[int, ...]
    rx_positions: tuple[float, ...]
    mse: float
    status: str = "ok"


@dataclass
class StudyResult:
    rows: list[StudyRow]
    summary: list[tuple[int, int, float, float]]  # k, n_subsets, mean mse, std mse
    probes: np.ndarray
    truth: np.ndarray
    profiles: dict[tuple[int, int], np.ndarray]  # (k, subset_id) -> eps_r at probes
    reports: list[TrainReport]


def run_rx_study(
    config: ExperimentConfig, rx_counts: Sequence[int] | None = None, records: WaveRecordSet | None = None
) -> StudyResult:
    """Model 2 on every k-subset of the candidate receivers, scored over the full candidate span."""
    rx_counts = tuple(config.rx_counts if rx_counts is None else rx_counts)
    n_rx = len(config.rx_positions)
    if n_rx < 2:
        raise ConfigError("the receiver study needs at least two candidate positions")
    bad = [k for k in rx_counts if not 1 <= k <= n_rx]
    if bad:
        raise ConfigError(f"cannot choose {bad} receivers out of {n_rx}")
    records = synthesize(config) if records is None else records
    subsets = [(k, i, s) for k in rx_counts for i, s in enumerate(itertools.combinations(range(n_rx), k))]
    jobs = [(2, records.select(s), (), config.train) for _, _, s in subsets]
    outcomes = _run_jobs(jobs, config.workers)

    probes = probe_points(min(records.rx_positions), max(records.rx_positions), config.probe_spacing)
    truth = eval_layered(config.profile, probes)
    rows, profiles, reports = [], {}, []
    for (k, i, s), (rep, err, _) in zip(subsets, outcomes):
        xs = tuple(records.rx_positions[j] for j in s)
        if rep is None:
            rows.append(StudyRow(k, i, s, xs, float("nan"), "diverged"))
            continue
        pred = profile_values(rep, probes)
        profiles[(k, i)] = pred
        reports.append(rep)
        rows.append(StudyRow(k, i, s, xs, metric_mse(pred, truth)))
    summary = []
    for k in rx_counts:
        vals = np.array([r.mse for r in rows if r.k == k and r.status == "ok"])
        mean = float(vals.mean()) if vals.size else float("nan")
        std = float(vals.std()) if vals.size else float("nan")
        summary.append((k, int(sum(r.k == k for r in rows)), mean, std))
    return StudyResult(rows, summary, probes, truth, profiles, reports)


# -- artifacts ---------------------------------------------------------------------------


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _write(path: Path, text: str, written: list[Path]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    written.append(path)


def metrics_csv(metrics: Sequence[MetricsRow]) -> str:
    return _csv_text(
        METRIC_COLUMNS,
        [(m.run_id, m.model, m.seed, m.mse, m.r2, m.wall_time_s, m.status) for m in metrics],
    )


def read_metrics_csv(text: str) -> list[MetricsRow]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [
        MetricsRow(r["run_id"], int(r["model"]), int(r["seed"]), float(r["mse"]), float(r["r2"]),
                   float(r["wall_time_s"]), r["status"])
        for r in rows
    ]


def emit_artifacts(
    out_dir: str | Path,
    reports: Sequence[TrainReport] = (),
    metrics: Sequence[MetricsRow] = (),
    *,
    config: ExperimentConfig | None = None,
    records: WaveRecordSet | None = None,
    probes: Sequence[tuple[str, float, float, float]] = (),
    profile_stats: dict[int, ProfileStats] | None = None,
    study: StudyResult | None = None,
) -> list[Path]:
    """Write CSV tables, JSON reports and SVG plots under ``out_dir``; returns the files written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written: list[Path] = []
    if config is not None:
        _write(out / "config.json", config.to_json(), written)
    if records is not None:
        written.extend(records.save(out / "traces.csv"))
    _write(out / "metrics.csv", metrics_csv(metrics), written)

    by_seed: dict[int, dict[str, Any]] = {}
    for rep in reports:
        by_seed.setdefault(rep.seed, {})[f"model{rep.model}"] = rep.to_dict()
        _write(out / f"loss_{rep.seed}_model{rep.model}.csv", rep.history_csv(), written)
        h = rep.loss_history
        epochs = np.arange(1, len(h) + 1)
        svg = svgplot.render(
            [svgplot.Series(epochs, h[:, 0], "total"), svgplot.Series(epochs, h[:, 1], "data"),
             svgplot.Series(epochs, h[:, 2], "pde")],
            title=f"Loss, model {rep.model}, seed {rep.seed}", xlabel="epoch", ylabel="loss", logy=True,
        )
        _write(out / "plots" / f"loss_{rep.seed}_model{rep.model}.svg", svg, written)
    for seed in sorted(by_seed):
        payload = {"seed": seed, "reports": by_seed[seed]}
        _write(out / f"report_{seed}.json", json.dumps(payload, indent=1, sort_keys=True) + "\n", written)

    if probes:
        _write(out / "probes.csv", _csv_text(("run_id", "x_m", "truth", "predicted"), probes), written)
        for model in sorted({int(r[0].split("_")[0][5:]) for r in probes}):
            sel = [r for r in probes if r[0].startswith(f"model{model}_")]
            t = [r[2] for r in sel]
            p = [r[3] for r in sel]
            lim = [min(t + p), max(t + p)]
            svg = svgplot.render(
                [svgplot.Series(t, p, "runs", style="points"), svgplot.Series(lim, lim, "y = x")],
                title=f"Predicted vs true permittivity, model {model}", xlabel="true eps_r",
                ylabel="predicted eps_r",
            )
            _write(out / "plots" / f"pred_vs_true_model{model}.svg", svg, written)

    if profile_stats:
        rows = []
        for model in sorted(profile_stats):
            s = profile_stats[model]
            rows.extend((model, x, m, sd, t) for x, m, sd, t in zip(s.xs, s.mean, s.std, s.truth))
            svg = svgplot.render(
                [svgplot.Series(s.xs, s.mean, f"mean of {s.n_runs}", band=(s.mean - s.std, s.mean + s.std)),
                 svgplot.Series(s.xs, s.truth, "truth")],
                title=f"Recovered profile, model {model}", xlabel="x (m)", ylabel="eps_r",
            )
            _write(out / "plots" / f"profile_model{model}.svg", svg, written)
        _write(out / "profile_mean_std.csv", _csv_text(("model", "x_m", "mean", "std", "truth"), rows), written)

    if study is not None:
        _write(out / "study.csv", _csv_text(
            ("k", "subset_id", "rx_indices", "rx_positions", "mse", "status"),
            [(r.k, r.subset_id, ";".join(map(str, r.rx_indices)), ";".join(repr(x) for x in r.rx_positions),
              r.mse, r.status) for r in study.rows],
        ), written)
        _write(out / "study_summary.csv", _csv_text(("k", "n_subsets", "mean_mse", "std_mse"), study.summary), written)
        prof_rows = [
            (k, i, x, v) for (k, i), vals in sorted(study.profiles.items()) for x, v in zip(study.probes, vals)
        ]
        _write(out / "study_profiles.csv", _csv_text(("k", "subset_id", "x_m", "eps_r"), prof_rows), written)
        ks = [s[0] for s in study.summary]
        mean = np.array([s[2] for s in study.summary])
        std = np.array([s[3] for s in study.summary])
        pts = [r for r in study.rows if r.status == "ok"]
        svg = svgplot.render(
            [svgplot.Series(ks, mean, "mean MSE", band=(np.maximum(mean - std, 0), mean + std)),
             svgplot.Series([r.k for r in pts], [r.mse for r in pts], "subsets", style="points")],
            title="Permittivity MSE vs receiver count", xlabel="receivers", ylabel="MSE",
        )
        _write(out / "plots" / "study_mse.svg", svg, written)
    return written
