"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` and read the "acceptance criteria"
section of the terminal summary.
"""

from __future__ import annotations

import itertools
import math
from pathlib import Path

import numpy as np
import pytest

from gradcheck import max_relative_error
from cemrm import cem
from cemrm.benchmarks import get_benchmark
from cemrm.cli import main
from cemrm.config import load_config
from cemrm.design_space import DesignVector, apply_action, denormalize, mount_position, uniform_baseline
from cemrm.objective import EvalOutcome, design_reward, grasp_success
from cemrm.orchestrator import (
    disturbance_report, evaluations_to_threshold, progress_series, progress_threshold, run_campaign,
)
from cemrm.retargeting import bend_angle, pulley_displacement
from cemrm.scheduler import RateSchedule, advance, linear_rate, round_half_up
from cemrm.surrogate.bundle import load_default_bundle
from cemrm.surrogate.physics import ChainSet, FingerChain, prismatic_frame_count, solve_equilibrium, tendon_force
from cemrm.surrogate.sim import simulate

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SEEDS = range(5)
MODES = ("pure-cem", "hybrid", "rho1", "random")


@pytest.fixture(scope="module")
def sphere_runs():
    base = load_config(CONFIGS / "sphere.json")
    return {(m, s): run_campaign(base.with_overrides(mode=m, seed=s)) for m in MODES for s in SEEDS}


@pytest.fixture(scope="module")
def plateau_runs():
    base = load_config(CONFIGS / "plateau_invalid.json")
    return {(m, s): run_campaign(base.with_overrides(mode=m, seed=s)) for m in ("pure-cem", "hybrid") for s in SEEDS}


def _ratio(pure, hybrid) -> float:
    ps, hs = progress_series(pure), progress_series(hybrid)
    thr = progress_threshold(ps, 0.95)
    ep = evaluations_to_threshold([e.env_interactions for e in pure.log], ps, thr)
    eh = evaluations_to_threshold([e.env_interactions for e in hybrid.log], hs, thr)
    return eh / ep


def test_criterion_1_sample_efficiency(sphere_runs, plateau_runs, verdict):
    medians = {}
    for name, runs in (("sphere", sphere_runs), ("plateau-invalid", plateau_runs)):
        medians[name] = float(np.median([_ratio(runs["pure-cem", s], runs["hybrid", s]) for s in SEEDS]))
    ok = all(r <= 0.5 for r in medians.values())
    detail = ", ".join(f"{k} median evals ratio {v:.3f}" for k, v in medians.items())
    assert verdict(1, ok, detail + " (need <= 0.5 on both)")


def test_criterion_2_mode_ordering(sphere_runs, verdict):
    bench = get_benchmark("sphere")
    r0 = bench.reward(np.zeros(bench.dim))

    def normalized(run):
        return (progress_series(run)[-1] - r0) / (bench.optimum_value - r0)

    med = {m: float(np.median([normalized(sphere_runs[m, s]) for s in SEEDS])) for m in MODES}
    pure, hybrid, rho1, rand = med["pure-cem"], med["hybrid"], med["rho1"], med["random"]
    close = abs(pure - hybrid) <= 0.05
    random_worse = hybrid > rand and rand <= pure - 0.2
    rho1_worst = (rho1 < min(pure, hybrid)) or abs(rho1 - pure) > 0.05
    detail = ", ".join(f"{m} {v:.3f}" for m, v in med.items())
    assert verdict(2, close and random_worse and rho1_worst, f"median normalized final elite mean: {detail}")


def test_criterion_3_surrogate_success_rates(verdict):
    cfg = load_config(CONFIGS / "surrogate.json")
    result = run_campaign(cfg)
    optimized = DesignVector.from_dict(result.final_design["design"])
    bundle = load_default_bundle()
    base = disturbance_report(uniform_baseline(), bundle, trials=5, seed=0)
    opt = disturbance_report(optimized, bundle, trials=5, seed=0)
    b = {c["density_class"]: c["successes"] for c in base["classes"]}
    o = {c["density_class"]: c["successes"] for c in opt["classes"]}
    # one object's worth of trials on the light class
    ok = o["heavy"] >= b["heavy"] and o["light"] >= b["light"] - 5
    detail = (f"heavy {o['heavy']}/20 vs baseline {b['heavy']}/20, "
              f"light {o['light']}/20 vs baseline {b['light']}/20")
    assert verdict(3, ok, detail)


def test_criterion_4_formula_exactness(verdict):
    tol = 1e-12
    checks = []

    def close(a, b):
        return bool(np.all(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) <= tol))

    checks.append(close(mount_position(0.0, 40.0), (40.0, 0.0)))
    checks.append(close(mount_position(math.pi / 2, 40.0), (0.0, 40.0)))
    checks.append(close(mount_position(-math.pi / 4, 1.0), (math.sqrt(2) / 2, -math.sqrt(2) / 2)))
    checks.append(close(linear_rate(50, 100, 0.1, 0.7), 0.4))
    checks.append(close(linear_rate(100, 100, 0.1, 0.7), 0.7))
    checks.append(linear_rate(37, 100, 0.3, 0.3) == 0.3)
    checks.append(close(advance(RateSchedule(0.1, 0.7, 100, 0.9), 1).rho, 0.106))
    checks.append(close(advance(RateSchedule(0.0, 1.0, 10, 0.9, rho=0.2), 4).rho, 0.22))
    checks.append(round_half_up(0.22 * 45) == 10)
    checks.append(tendon_force(0.004, 0.005, 10.0) == 10.0)
    checks.append(tendon_force(0.006, 0.005, 10.0) == 0.0)
    checks.append(tendon_force(0.005, 0.005, 10.0) == 10.0)
    checks.append(close(pulley_displacement(2.0, 0.005), 0.01))
    checks.append(pulley_displacement(0.0, 0.01) == 0.0)
    checks.append(close(pulley_displacement(math.pi, 0.01), 0.031415926535897934))
    checks.append(close(bend_angle((2, 0, 0), (1, 0, 0), (0, 0, 0)), 0.0))
    checks.append(close(bend_angle((1, 1, 0), (1, 0, 0), (0, 0, 0)), math.pi / 2))
    checks.append(close(bend_angle((0, 0, 0), (1, 0, 0), (0, 0, 0)), math.pi))
    dt = 1.0 / 3000.0
    checks.append(prismatic_frame_count(0.02, 1.0, dt) == 600)
    checks.append(prismatic_frame_count(0.0, 1.0, dt) == 0)
    checks.append(prismatic_frame_count(0.08, 1.0, dt) == 1200)
    passed = sum(checks)
    assert verdict(4, passed == len(checks), f"{passed}/{len(checks)} tabulated examples exact")


def test_criterion_5_reward_model_integrity(sphere_runs, verdict):
    worst = max(max_relative_error(seed) for seed in range(20))
    audits = []
    bench = get_benchmark("sphere")
    for (mode, seed), res in sphere_runs.items():
        if mode != "hybrid":
            continue
        expected = sum(45 - round_half_up(e.rho * 45) for e in res.log)
        actions, rewards = res.buffer.arrays()
        # every stored reward is the true objective value of its action
        truthful = np.array_equal(rewards, bench.reward(actions))
        audits.append(res.buffer.n_added == res.ground_truth_evaluations == expected and truthful)
    ok = worst < 1e-4 and all(audits)
    detail = f"max gradient rel. err {worst:.2e} over 20 draws; buffer audit {sum(audits)}/{len(audits)} campaigns"
    assert verdict(5, ok, detail)


def test_criterion_6_cem_properties(verdict):
    rng = np.random.default_rng(6)
    s0 = cem.initial_state(5, 1.0)
    trans = perm = radius = True
    for _ in range(50):
        x = rng.normal(size=(int(rng.integers(2, 10)), 5))
        c = rng.normal(size=5) * 10
        a, b = cem.update_distribution(s0, x), cem.update_distribution(s0, x + c)
        trans &= np.allclose(b.mu, a.mu + c, atol=1e-9) and abs(a.sigma - b.sigma) <= 1e-9 * max(1.0, a.sigma)
        p = cem.update_distribution(s0, x[rng.permutation(len(x))])
        perm &= np.allclose(p.mu, a.mu, atol=1e-12) and abs(p.sigma - a.sigma) <= 1e-12 * max(1.0, a.sigma)
        r = float(rng.uniform(0.1, 5.0))
        dirs = rng.normal(size=(4, 5))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        centre = rng.normal(size=5)
        eq = cem.update_distribution(s0, centre + r * np.vstack([dirs, -dirs]))
        radius &= abs(eq.sigma - r) <= 1e-9 * r
    oracle = 0
    for _ in range(100):
        n = int(rng.integers(2, 80))
        k = int(rng.integers(1, n + 1))
        rewards = np.round(rng.normal(size=n), 1)
        expected = sorted(range(n), key=lambda i: (-rewards[i], i))[:k]
        oracle += list(cem.select_elites(np.zeros((n, 1)), rewards, k).indices) == expected
    ok = trans and perm and radius and oracle == 100
    detail = (f"translation {trans}, permutation {perm}, sigma == r {radius}, "
              f"elite oracle {oracle}/100")
    assert verdict(6, bool(ok), detail)


def test_criterion_7_determinism(tmp_path, verdict):
    cfg = str(CONFIGS / "sphere.json")
    main(["optimize", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["optimize", "--config", cfg, "--out", str(tmp_path / "b")])
    same = (tmp_path / "a" / "log.csv").read_bytes() == (tmp_path / "b" / "log.csv").read_bytes()
    main(["optimize", "--config", cfg, "--iterations", "20", "--out", str(tmp_path / "half")])
    main(["optimize", "--resume", str(tmp_path / "half" / "checkpoint.json"), "--iterations", "40",
          "--out", str(tmp_path / "rest")])
    resumed = (tmp_path / "rest" / "log.csv").read_bytes() == (tmp_path / "a" / "log.csv").read_bytes()
    detail = f"repeat run byte-identical {same}; resume at 20 of 40 reproduces log {resumed}"
    assert verdict(7, same and resumed, detail)


def test_criterion_8_physics_sanity(verdict):
    bundle = load_default_bundle()
    rng = np.random.default_rng(8)
    base = uniform_baseline()
    worst, steps, rollouts = 0.0, 0, 0
    while rollouts < 100:
        design = apply_action(base, denormalize(rng.normal(0.0, 0.15, base.dim)))
        obj = bundle.objects[int(rng.integers(len(bundle.objects)))]
        recs = bundle.records_for(obj.object_id)
        report = simulate(design, recs[int(rng.integers(len(recs)))], obj, seed=[8, rollouts], test=True)
        if not report.outcome.design_valid:
            continue
        rollouts += 1
        # a failed solve ends the rollout, so only its last residual can be unconverged
        failed_solve = "did not converge" in report.outcome.diagnostic
        converged = report.residuals[:-1] if failed_solve else report.residuals
        steps += len(converged)
        worst = max([worst, *converged])
    zero_ok = True
    for obj in bundle.objects:
        for rec in bundle.records_for(obj.object_id):
            idle = type(rec)(rec.object_id, rec.grasp_pose, 0.0, {f: 0.0 for f in rec.tendon_targets},
                             rec.lift_height, rec.source)
            zero_ok &= not grasp_success(simulate(base, idle, obj, test=True).outcome)
    monotone = True
    for finger in base.fingers():
        cs = ChainSet([FingerChain.from_design(finger, (0.0, 0.0), 0.0, 1)])
        prev = -math.inf
        for T in np.linspace(0.0, 30.0, 10):
            eq = solve_equilibrium(cs, np.zeros((1, base.S)), np.array([T]), [], damping=1.0)
            flex = float(eq.theta.sum())
            monotone &= eq.converged and flex >= prev
            prev = flex
    ok = worst < 1e-6 and zero_ok and monotone
    detail = (f"max residual {worst:.2e} N m over {steps} solves in 100 rollouts; "
              f"zero actuation always fails {zero_ok}; flexion monotone in T {monotone}")
    assert verdict(8, bool(ok), detail)


def test_criterion_9_objective_semantics(verdict):
    def outcome(norm, dy):
        return EvalOutcome(dq=(math.sqrt(norm**2 - dy**2), dy))

    invalid = design_reward([EvalOutcome(), EvalOutcome.invalid()]) == 0.0
    collision = design_reward([outcome(0.01, 0.0), EvalOutcome(ground_collision=True)]) == 0.0
    example = abs(design_reward([outcome(0.01, -0.01), outcome(0.02, 0.005)]) - (-0.04)) <= 1e-12
    table = 0
    for lifted, coll, contact, force in itertools.product([False, True], repeat=4):
        o = EvalOutcome(lifted=lifted, ground_collision=coll, contact_at_end=contact, force_feedback_nonzero=force)
        table += grasp_success(o) == (lifted and not coll and contact and force)
    ok = invalid and collision and example and table == 16
    detail = f"invalid->0 {invalid}, collision->0 {collision}, -0.04 example {example}, truth table {table}/16"
    assert verdict(9, ok, detail)
