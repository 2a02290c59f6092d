"""End-to-end acceptance checks, one verdict line per criterion.

Criteria 5, 6, 7 and 9 train full-size networks and take about half an hour on one core.
"""

import time
from dataclasses import replace

import numpy as np
from conftest import VERDICTS
from oracles import central_difference_gradient, gradient_mismatches

from radarpinn.domain import C0, EPS0, LayeredProfile, eval_layered, wave_speed
from radarpinn.fdtd import SourceSpec, default_grid, simulate
from radarpinn.harness import (
    QUICK_TRAIN,
    ExperimentConfig,
    emit_artifacts,
    metric_relative_l2,
    run_rx_study,
    run_synthetic,
)
from radarpinn.mlp import MlpParams, init_params, loss_gradient
from radarpinn.pinn import (
    LossWeights,
    Model1State,
    Model2State,
    Observations,
    TrainConfig,
    pde_residual,
    sample_collocation,
    total_loss,
)
from radarpinn.signal import CompositeTraceSet, FrequencySweep, concat_traces, to_frequency_domain, to_time_domain


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[n] = line
    print(line)
    assert ok, line


def peak_time(trace, dt):
    mag = np.abs(trace)
    i = int(np.argmax(mag))
    y0, y1, y2 = mag[i - 1 : i + 2]
    return (i + 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2)) * dt


# -- 1: gradient ------------------------------------------------------------------------


def test_c01_gradient_matches_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    obs = Observations(rng.uniform(0, 1, 5), rng.uniform(0, 3, 5), rng.normal(size=5), (0.0, 1.0), (0.0, 3.0), 1.0)
    colloc = sample_collocation(5, (0.0, 1.0), (0.0, 3.0), 11)
    cfg = TrainConfig(loss_weights=LossWeights(1.0, 1.0))
    worst = []
    for model in (1, 2):
        params = {"field": init_params(11, (2, 4, 1))}
        if model == 1:
            params["log_eps"] = np.log(np.array([2.0, 6.0]))
            state = lambda p: Model1State(p["field"], p["log_eps"], (0.5,))  # noqa: E731
        else:
            params["perm"] = init_params(12, (1, 4, 1), "exponential")
            state = lambda p: Model2State(p["field"], p["perm"])  # noqa: E731

        def loss(p):
            return total_loss(state(p), obs, colloc, cfg)[0]

        _, grad = loss_gradient(loss, params)
        worst += gradient_mismatches(grad, central_difference_gradient(loss, params, h=1e-5), rtol=1e-4, atol=1e-8)
    elapsed = time.perf_counter() - t0
    verdict(1, not worst and elapsed < 5, f"mismatched leaves={worst} time={elapsed:.2f}s (<5s)")


# -- 2, 3: FDTD oracles ----------------------------------------------------------------------


def _delay(eps, distance=0.9):
    dom, tm = default_grid(0.0, 2.0, 14e-9)
    rec = simulate(LayeredProfile((), (eps,), 0.0, 2.0), SourceSpec(), 0.3, dom, tm, [0.3, 0.3 + distance])
    return peak_time(rec.traces[1], rec.dt) - peak_time(rec.traces[0], rec.dt)


def test_c02_travel_time_scales_with_refractive_index():
    t0 = time.perf_counter()
    ratio = _delay(4.0) / _delay(1.0)
    elapsed = time.perf_counter() - t0
    ok = abs(ratio / 2.0 - 1) < 0.02 and elapsed < 10
    verdict(2, ok, f"delay ratio={ratio:.4f} (2 +/- 2%) time={elapsed:.2f}s (<10s)")


def test_c03_fresnel_reflection_ratio():
    t0 = time.perf_counter()
    dom, tm = default_grid(0.0, 2.0, 10e-9)
    rec = simulate(LayeredProfile((1.2,), (1.0, 4.0), 0.0, 2.0), SourceSpec(), 0.2, dom, tm, [0.7])
    tr = rec.traces[0]
    i_inc = int(np.argmax(np.abs(tr)))
    gap = int(((1.2 - 0.7) / C0) / rec.dt)  # reflected pulse arrives 2*gap steps later
    ratio = np.abs(tr[i_inc + gap :]).max() / np.abs(tr[i_inc])
    elapsed = time.perf_counter() - t0
    ok = abs(ratio * 3 - 1) < 0.03 and elapsed < 10
    verdict(3, ok, f"|reflected/incident|={ratio:.4f} (1/3 +/- 3%) time={elapsed:.2f}s (<10s)")


# -- 4: residual oracle ------------------------------------------------------------------------


def test_c04_plane_wave_residual():
    t0 = time.perf_counter()
    eps_r, kappa = 4.0, 3.0
    omega = kappa * wave_speed(eps_r) * 1e-9  # scaled time: t in ns, C = 1e-18
    # tanh(kappa x - omega t) solves the scaled wave equation for any profile shape
    net = MlpParams((2, 1, 1), (np.array([[kappa], [-omega]]), np.array([[1.0]])), (np.zeros(1), np.zeros(1)))
    rng = np.random.default_rng(4)
    x, t = rng.uniform(0, 1.8, 100), rng.uniform(0, 14, 100)
    worst = float(np.max(np.abs(pde_residual(net, eps_r * EPS0, x, t, 1e-18))))
    elapsed = time.perf_counter() - t0
    verdict(4, worst < 1e-9 and elapsed < 1, f"max |residual|={worst:.2e} (<1e-9) time={elapsed:.3f}s (<1s)")


# -- 5, 6: inverse-crime recoveries ---------------------------------------------------------------

BASE = ExperimentConfig(n_repeats=1)
TRANSITION = 0.05


def _timed_run(config):
    t0 = time.perf_counter()
    res = run_synthetic(config)
    return res, time.perf_counter() - t0


def test_c05_model1_recovers_layers():
    res, elapsed = _timed_run(replace(BASE, models=(1,)))
    rep = res.reports[0]
    rec = np.array(rep.recovered.eps_r)
    truth = np.array(BASE.profile.eps_r)
    rel = np.abs(rec / truth - 1)
    h = rep.loss_history[:, 0]
    ok = bool(np.all(rel < 0.10)) and h[-1] < h[0] and elapsed <= 15 * 60
    verdict(
        5, ok,
        f"eps_r={np.round(rec, 3).tolist()} rel.err={np.round(rel, 3).tolist()} (<0.10) "
        f"loss {h[0]:.3g}->{h[-1]:.3g} epochs={rep.epochs_run} time={elapsed:.0f}s (<=900s)",
    )


def _away_from_boundaries(xs, profile, margin=TRANSITION):
    keep = np.ones(xs.shape, bool)
    for b in profile.boundaries:
        keep &= np.abs(xs - b) > margin
    return keep


def test_c06_model2_recovers_profile():
    res, elapsed = _timed_run(replace(BASE, models=(2,)))
    rec = res.reports[0].recovered
    keep = _away_from_boundaries(rec.xs, BASE.profile)
    err = metric_relative_l2(rec.eps_r[keep], eval_layered(BASE.profile, rec.xs[keep]))
    positive = bool(np.all(rec.eps_r > 0))
    ok = err < 0.15 and positive and elapsed <= 20 * 60
    verdict(6, ok, f"relative L2 error={err:.4f} (<0.15) min eps_r={rec.eps_r.min():.3f} time={elapsed:.0f}s (<=1200s)")


# -- 7: receiver study ------------------------------------------------------------------------------


def test_c07_receiver_count_trend():
    cfg = replace(BASE, train=QUICK_TRAIN, rx_counts=(2, 3, 6))
    t0 = time.perf_counter()
    study = run_rx_study(cfg)
    elapsed = time.perf_counter() - t0
    mean = {k: m for k, _, m, _ in study.summary}
    best3 = min(r.mse for r in study.rows if r.k == 3)
    base6 = mean[6]
    ok = mean[6] <= mean[2] and best3 <= 3 * base6 and elapsed <= 20 * 60 and all(r.status == "ok" for r in study.rows)
    best_rx = min((r for r in study.rows if r.k == 3), key=lambda r: r.mse).rx_positions
    verdict(
        7, ok,
        f"mean mse k=2 {mean[2]:.3f} k=3 {mean[3]:.3f} k=6 {base6:.3f}; best k=3 {best3:.3f} at "
        f"{[round(x, 2) for x in best_rx]} (<= {3 * base6:.3f}) runs={len(study.rows)} time={elapsed:.0f}s (<=1200s)",
    )


# -- 8: signal pipeline -------------------------------------------------------------------------------


def test_c08_signal_pipeline():
    band = np.linspace(2e9, 4e9, 201)
    rng = np.random.default_rng(8)
    s21 = rng.normal(size=(2, band.size)) + 1j * rng.normal(size=(2, band.size))
    traces, dt = to_time_domain(FrequencySweep(band, s21, (0.1, 0.2)))
    round_trip = float(np.abs(to_frequency_domain(traces, dt, band) - s21).max() / np.abs(s21).max())

    tau = 1e-9
    delayed, dt = to_time_domain(FrequencySweep(band, np.exp(-2j * np.pi * band * tau)[None], (0.1,)))
    shift_err = abs(np.argmax(np.abs(delayed[0])) * dt - tau)

    t = np.arange(200)

    def seg(xs, peaks):
        return CompositeTraceSet(1e-10, np.array([np.maximum(0, 1 - np.abs(t - p) / 6) for p in peaks]), xs, ("ifft",))

    merged = concat_traces(seg((0.1, 0.4), (40, 90)), seg((0.4, 0.6), (93, 130)), 0.4)
    shift_tag = merged.processing_tags[-1]
    ok = round_trip < 1e-9 and shift_err <= dt / 2 and shift_tag.endswith("shift=3)")
    verdict(8, ok, f"round trip={round_trip:.1e} (<1e-9) |tau err|={shift_err:.2e}s (<= {dt / 2:.2e}s) concat tag={shift_tag}")


# -- 9: synthetic sensitivity ------------------------------------------------------------------------


def test_c09_model2_separates_close_layers():
    profile = LayeredProfile((0.9,), (4.0, 6.0), 0.0, 1.8)
    res, elapsed = _timed_run(replace(BASE, profile=profile, models=(2,)))
    rec = res.reports[0].recovered
    keep = _away_from_boundaries(rec.xs, profile)
    left = float(rec.eps_r[keep & (rec.xs < 0.9)].mean())
    right = float(rec.eps_r[keep & (rec.xs > 0.9)].mean())
    verdict(9, right - left >= 1.0, f"layer means {left:.3f} | {right:.3f} separation={right - left:.3f} (>=1.0) time={elapsed:.0f}s")


# -- 10: determinism ----------------------------------------------------------------------------------


def test_c10_byte_identical_reruns(tmp_path):
    short = replace(BASE, train=replace(QUICK_TRAIN, epochs=40), preprocessing=("normalize", "squared_abs"))
    dirs = []
    for rerun in range(2):
        res = run_synthetic(short)
        out = tmp_path / f"run{rerun}"
        emit_artifacts(out, res.reports, (), config=short, records=res.records, probes=res.probes,
                       profile_stats=res.profile_stats)
        dirs.append(out)
    files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
    differ = [str(f) for f in files if (dirs[0] / f).read_bytes() != (dirs[1] / f).read_bytes()]
    verdict(10, bool(files) and not differ, f"{len(files)} files compared, differing={differ}")

