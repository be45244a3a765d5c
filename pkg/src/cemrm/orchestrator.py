"""Campaign loop: CEM with a learned critic scoring part of each population.

Every random draw comes from ``default_rng([seed, PURPOSE, ...counters])``,
so results do not depend on evaluation order, thread count or whether the
run was resumed from a checkpoint.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cem
from .benchmarks import BenchmarkObjective, get_benchmark
from .config import CampaignConfig, ConfigError
from .design_space import DesignVector, apply_action, denormalize, uniform_baseline, validate
from .objective import EvalOutcome, RewardWeights, design_reward, grasp_success
from .reward_model import ModelDivergedError, ReplayBuffer, RewardModel, sample_batch
from .scheduler import split_population
from .surrogate.bundle import Bundle, load_bundle, load_default_bundle
from .surrogate.sim import PhaseConfig, simulate

# RNG purposes
SAMPLE, SPLIT, RECORD, IMPULSE, BATCH, INIT = 1, 2, 3, 4, 5, 6

CHECKPOINT_FORMAT = "cemrm-checkpoint"
CHECKPOINT_VERSION = 1
LOG_HEADER = ("iter", "env_interactions", "elite_mean", "elite_max", "rm_loss", "rho", "sigma", "wall_s")


class CampaignError(RuntimeError):
    """Campaign aborted (bad checkpoint, diverged model, ...)."""


def evaluation_threads() -> int:
    """Worker count from ``CEMRM_THREADS``; unset or 0 means one per CPU."""
    raw = os.environ.get("CEMRM_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("CEMRM_THREADS", f"expected an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("CEMRM_THREADS", "must be non-negative")
    return n or (os.cpu_count() or 1)


# --------------------------------------------------------------------------
# evaluators


@dataclass(frozen=True)
class Evaluation:
    reward: float
    feasible: bool
    diagnostic: str = ""


class BenchmarkEvaluator:
    """Synthetic objective; one "object" per candidate."""

    n_objects = 1

    def __init__(self, objective: BenchmarkObjective):
        self.objective = objective
        self.dim = objective.dim

    def feasible(self, actions) -> np.ndarray:
        x = np.clip(np.atleast_2d(actions), -1.0, 1.0)
        if self.objective.invalid is None:
            return np.ones(len(x), dtype=bool)
        return ~self.objective.invalid(x)

    def evaluate_batch(self, actions, keys) -> list[Evaluation]:
        if len(actions) == 0:
            return []
        rewards = np.atleast_1d(self.objective.reward(actions))
        ok = self.feasible(actions)
        return [Evaluation(float(r), bool(f)) for r, f in zip(rewards, ok)]

    def audit(self, actions) -> np.ndarray:
        """True reward outside the evaluation budget (cheap objectives only)."""
        return np.atleast_1d(self.objective.reward(actions))

    def design(self, action) -> dict:
        return {"kind": "benchmark", "benchmark": self.objective.name,
                "action": [float(v) for v in action]}


@dataclass(frozen=True)
class CandidateEvaluation:
    reward: float
    outcomes: tuple[EvalOutcome, ...] = ()
    record_indices: tuple[int, ...] = ()


def evaluate_candidate(
    design: DesignVector,
    bundle: Bundle,
    rng_seed,
    phase: PhaseConfig = PhaseConfig(),
    weights: RewardWeights = RewardWeights(),
    teleop: str = "multi",
) -> CandidateEvaluation:
    """Mean design reward over the bundle's objects.

    ``multi`` draws one record per object from ``rng_seed``; ``single``
    always uses each object's first record. Invalid designs score 0 without
    running any rollout.
    """
    if not validate(design):
        return CandidateEvaluation(0.0)
    rng = np.random.default_rng(rng_seed)
    outcomes, picks = [], []
    for obj in bundle.objects:
        recs = bundle.records_for(obj.object_id)
        i = int(rng.integers(len(recs))) if teleop == "multi" else 0
        picks.append(i)
        outcomes.append(simulate(design, recs[i], obj, phase).outcome)
    reward = design_reward(outcomes, weights) / len(outcomes)
    return CandidateEvaluation(float(reward), tuple(outcomes), tuple(picks))


class SurrogateEvaluator:
    """Grasp simulator over a bundle; actions offset a base design."""

    def __init__(self, bundle: Bundle, base: DesignVector, phase: PhaseConfig, weights: RewardWeights,
                 teleop: str = "multi", seed: int = 0, threads: int | None = None):
        self.bundle = bundle
        self.base = base
        self.phase = phase
        self.weights = weights
        self.teleop = teleop
        self.seed = seed
        self.threads = evaluation_threads() if threads is None else threads
        self.n_objects = len(bundle.objects)
        self.dim = base.dim

    def to_design(self, action) -> DesignVector:
        return apply_action(self.base, denormalize(action, self.base.S))

    def feasible(self, actions) -> np.ndarray:
        return np.array([bool(validate(self.to_design(a))) for a in np.atleast_2d(actions)])

    def _one(self, args) -> Evaluation:
        action, key = args
        design = self.to_design(action)
        if not validate(design):
            return Evaluation(0.0, False, "invalid design")
        try:
            res = evaluate_candidate(design, self.bundle, [self.seed, RECORD, *key], self.phase,
                                     self.weights, self.teleop)
        except Exception as exc:  # a broken candidate scores the failure reward
            return Evaluation(0.0, False, f"evaluation failed: {exc}")
        return Evaluation(res.reward, True)

    def evaluate_batch(self, actions, keys) -> list[Evaluation]:
        jobs = list(zip(actions, keys))
        if self.threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(self._one, jobs))
        return [self._one(j) for j in jobs]

    def audit(self, actions):
        return None

    def design(self, action) -> dict:
        return {"kind": "surrogate", "action": [float(v) for v in action],
                "design": self.to_design(action).to_dict()}


def base_design_for(config: CampaignConfig) -> DesignVector:
    if config.base_design is None:
        return uniform_baseline()
    return DesignVector.from_dict(config.base_design)


def make_evaluator(config: CampaignConfig, threads: int | None = None):
    ev = config.evaluator
    if ev.kind == "benchmark":
        return BenchmarkEvaluator(get_benchmark(ev.name, ev.dim))
    bundle = load_default_bundle() if ev.bundle is None else load_bundle(ev.bundle)
    return SurrogateEvaluator(bundle, base_design_for(config), ev.phase_config(), config.weights,
                              ev.teleop, config.seed, threads)


# --------------------------------------------------------------------------
# logging


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


@dataclass(frozen=True)
class IterationLog:
    iteration: int
    env_interactions: int
    elite_mean: float | None
    elite_max: float | None
    rm_loss: float | None
    rho: float
    sigma: float
    wall_s: float

    def row(self) -> list[str]:
        return [str(self.iteration), str(self.env_interactions), _fmt(self.elite_mean),
                _fmt(self.elite_max), _fmt(self.rm_loss), _fmt(self.rho), _fmt(self.sigma),
                _fmt(self.wall_s)]

    def to_dict(self) -> dict:
        return {"iter": self.iteration, "env_interactions": self.env_interactions,
                "elite_mean": self.elite_mean, "elite_max": self.elite_max, "rm_loss": self.rm_loss,
                "rho": self.rho, "sigma": self.sigma, "wall_s": self.wall_s}

    @classmethod
    def from_dict(cls, d: dict) -> "IterationLog":
        return cls(int(d["iter"]), int(d["env_interactions"]), d["elite_mean"], d["elite_max"],
                   d["rm_loss"], float(d["rho"]), float(d["sigma"]), float(d["wall_s"]))


def log_csv(log: list[IterationLog]) -> str:
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_HEADER)
    for entry in log:
        w.writerow(entry.row())
    return buf.getvalue()


def write_log_csv(log: list[IterationLog], path: str | Path) -> None:
    Path(path).write_text(log_csv(log))


def read_log_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# campaign


@dataclass
class CampaignResult:
    final_action: np.ndarray
    final_design: dict
    best_action: np.ndarray | None
    best_reward: float | None
    best_design: dict | None
    log: list[IterationLog]
    audit: list[float] = field(default_factory=list)
    buffer: ReplayBuffer | None = None
    ground_truth_evaluations: int = 0

    @property
    def env_interactions(self) -> int:
        return self.log[-1].env_interactions if self.log else 0


def _sigma_scalar(sigma) -> float:
    if isinstance(sigma, np.ndarray):
        return float(np.sqrt(np.sum(sigma**2)))
    return float(sigma)


class Campaign:
    """Resumable state of one optimization run."""

    def __init__(self, config: CampaignConfig, evaluator=None):
        self.config = config
        self.evaluator = evaluator if evaluator is not None else make_evaluator(config)
        dim = self.evaluator.dim
        self.search = cem.initial_state(dim, config.init_std, config.per_dimension_sigma)
        self.schedule = config.schedule.schedule()
        self.buffer = ReplayBuffer(config.reward_model.capacity)
        self.model = RewardModel(dim, config.reward_model, rng=[config.seed, INIT])
        self.j = 0
        self.env_interactions = 0
        self.ground_truth_evaluations = 0
        self.log: list[IterationLog] = []
        self.audit: list[float] = []
        self.best_action: np.ndarray | None = None
        self.best_reward: float | None = None

    @property
    def uses_model(self) -> bool:
        return self.config.mode in ("hybrid", "rho1")

    def effective_rho(self) -> float:
        mode = self.config.mode
        if mode in ("pure-cem", "random") or not self.model.trained:
            return 0.0  # warm-up: nothing to trust before the first fit
        if mode == "rho1":
            return 1.0
        return float(self.schedule.rho)

    def _elites(self, actions, scores, gt_mask) -> cem.ElitePool:
        n_e = self.config.N_e
        if self.config.elites == "pooled":
            return cem.select_elites(actions, scores, n_e)
        gt = np.flatnonzero(gt_mask)
        model = np.flatnonzero(~gt_mask)
        # ground-truth members rank first; model-scored ones only fill a short set
        order_gt = gt[np.argsort(-scores[gt], kind="stable")]
        order_m = model[np.argsort(-scores[model], kind="stable")]
        idx = np.concatenate([order_gt, order_m])[:n_e]
        return cem.ElitePool(idx, actions[idx], scores[idx])

    def step(self) -> IterationLog:
        cfg = self.config
        seed, K = cfg.seed, cfg.K
        t0 = time.perf_counter()
        j = self.j + 1
        self.schedule = self.schedule.advance(j)
        rho = self.effective_rho()
        actions = cem.sample_population(self.search, K, [seed, SAMPLE, j])
        model_idx = split_population(rho, K, [seed, SPLIT, j])
        gt_mask = np.ones(K, dtype=bool)
        gt_mask[model_idx] = False
        scores = np.empty(K)
        if len(model_idx):
            pred = self.model.predict(actions[model_idx])
            if cfg.screen_invalid:
                pred = np.where(self.evaluator.feasible(actions[model_idx]), pred, 0.0)
            scores[model_idx] = pred
        gt_idx = np.flatnonzero(gt_mask)
        results = self.evaluator.evaluate_batch(actions[gt_idx], [(j, int(k)) for k in gt_idx])
        for k, res in zip(gt_idx, results):
            scores[k] = res.reward
            self.buffer.add(actions[k], res.reward, res.feasible)
            if self.best_reward is None or res.reward > self.best_reward:
                self.best_reward, self.best_action = res.reward, actions[k].copy()
        self.ground_truth_evaluations += len(gt_idx)
        self.env_interactions += len(gt_idx) * self.evaluator.n_objects

        elites = self._elites(actions, scores, gt_mask)
        gt_elites = elites.rewards[gt_mask[elites.indices]]
        audit = self.evaluator.audit(elites.actions)
        if audit is not None:
            self.audit.append(float(np.mean(audit)))
        if cfg.mode != "random":
            self.search = cem.update_distribution(self.search, elites, cfg.sigma_floor)
        else:
            self.search = replace(self.search, iteration=self.search.iteration + 1)

        loss = None
        if self.uses_model:
            feas = cfg.train_feasible_only
            for s in range(cfg.reward_model.train_steps):
                batch = sample_batch(self.buffer, cfg.reward_model.batch_size, [seed, BATCH, j, s], feas)
                if batch is None:
                    break
                self.model.update_stats(self.buffer, feas)
                try:
                    loss = self.model.fit_batch(*batch)
                except ModelDivergedError as exc:
                    raise CampaignError(f"reward model diverged at iteration {j}: {exc}") from None

        entry = IterationLog(
            iteration=j,
            env_interactions=self.env_interactions,
            elite_mean=float(np.mean(gt_elites)) if len(gt_elites) else None,
            elite_max=float(np.max(gt_elites)) if len(gt_elites) else None,
            rm_loss=None if loss is None else float(loss),
            rho=rho,
            sigma=_sigma_scalar(self.search.sigma),
            wall_s=time.perf_counter() - t0 if cfg.record_wall_time else 0.0,
        )
        self.j = j
        self.log.append(entry)
        return entry

    def run(self, until: int | None = None, checkpoint_path: str | Path | None = None) -> CampaignResult:
        until = self.config.J if until is None else min(until, self.config.J)
        every = self.config.checkpoint_every
        while self.j < until:
            self.step()
            if checkpoint_path is not None and every and self.j % every == 0:
                self.save_checkpoint(checkpoint_path)
        if checkpoint_path is not None:
            self.save_checkpoint(checkpoint_path)
        return self.result()

    def result(self) -> CampaignResult:
        mu = self.search.mu.copy()
        best = None if self.best_action is None else self.best_action.copy()
        return CampaignResult(
            final_action=mu,
            final_design=self.evaluator.design(mu),
            best_action=best,
            best_reward=self.best_reward,
            best_design=None if best is None else self.evaluator.design(best),
            log=list(self.log),
            audit=list(self.audit),
            buffer=self.buffer,
            ground_truth_evaluations=self.ground_truth_evaluations,
        )

    # ---- checkpointing

    def to_checkpoint(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "iteration": self.j,
            "search": self.search.to_dict(),
            "rho": self.schedule.rho,
            "buffer": self.buffer.to_dict(),
            "model": self.model.to_dict(),
            "env_interactions": self.env_interactions,
            "ground_truth_evaluations": self.ground_truth_evaluations,
            "log": [e.to_dict() for e in self.log],
            "audit": list(self.audit),
            "best": {
                "action": None if self.best_action is None else self.best_action.tolist(),
                "reward": self.best_reward,
            },
        }

    def save_checkpoint(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(dump_checkpoint(self.to_checkpoint()))
        tmp.replace(path)

    @classmethod
    def from_checkpoint(cls, data: dict, evaluator=None) -> "Campaign":
        if not isinstance(data, dict) or data.get("format") != CHECKPOINT_FORMAT:
            raise CampaignError("not a campaign checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise CampaignError(f"unsupported checkpoint version {data.get('version')!r}")
        try:
            config = CampaignConfig.from_dict(data["config"])
            camp = cls(config, evaluator)
            camp.j = int(data["iteration"])
            camp.search = cem.GaussianSearchState.from_dict(data["search"])
            camp.schedule = replace(camp.schedule, rho=data["rho"])
            camp.buffer = ReplayBuffer.from_dict(data["buffer"])
            camp.model.load_state(data["model"])
            camp.env_interactions = int(data["env_interactions"])
            camp.ground_truth_evaluations = int(data["ground_truth_evaluations"])
            camp.log = [IterationLog.from_dict(e) for e in data["log"]]
            camp.audit = [float(a) for a in data["audit"]]
            best = data["best"]
            camp.best_action = None if best["action"] is None else np.asarray(best["action"], dtype=np.float64)
            camp.best_reward = best["reward"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CampaignError(f"corrupt checkpoint: {exc!r}") from None
        if len(camp.log) != camp.j:
            raise CampaignError("corrupt checkpoint: log length does not match iteration")
        return camp

    @classmethod
    def resume(cls, path: str | Path, evaluator=None) -> "Campaign":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise CampaignError(f"checkpoint not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise CampaignError(f"corrupt checkpoint {path}: {exc.msg} at line {exc.lineno}") from None
        return cls.from_checkpoint(data, evaluator)


def dump_checkpoint(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def run_campaign(config: CampaignConfig, evaluator=None, checkpoint_path=None) -> CampaignResult:
    """Run a campaign from scratch to ``config.J`` iterations."""
    return Campaign(config, evaluator).run(checkpoint_path=checkpoint_path)


# --------------------------------------------------------------------------
# analysis helpers


def evaluations_to_threshold(env: np.ndarray, progress: np.ndarray, threshold: float) -> float:
    """Interactions at the first iteration whose progress reaches ``threshold``."""
    hit = np.flatnonzero(np.asarray(progress) >= threshold)
    return float(np.asarray(env)[hit[0]]) if len(hit) else math.inf


def progress_threshold(reference: np.ndarray, fraction: float = 0.95) -> float:
    """Level at ``fraction`` of the way from a reference run's first to last value."""
    reference = np.asarray(reference, dtype=np.float64)
    return float(reference[0] + fraction * (reference[-1] - reference[0]))


def progress_series(result: CampaignResult) -> np.ndarray:
    """Audited elite mean where available, else the logged ground-truth elite mean."""
    if result.audit:
        return np.asarray(result.audit)
    vals, last = [], -math.inf
    for e in result.log:
        if e.elite_mean is not None:
            last = e.elite_mean
        vals.append(last)
    return np.asarray(vals)


# --------------------------------------------------------------------------
# disturbance test


def disturbance_report(design: DesignVector, bundle: Bundle, trials: int = 5, seed: int = 0,
                       phase: PhaseConfig = PhaseConfig(), zero_actuation: bool = False) -> dict:
    """Success rates under the random downward impulse, per object and per class.

    Trial ``t`` replays record ``t mod n_records`` of each object with an
    impulse drawn from ``[seed, IMPULSE, object index, t]``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if zero_actuation:
        phase = replace(phase, T_fixed=0.0)
    rows = []
    for i, obj in enumerate(bundle.objects):
        recs = bundle.records_for(obj.object_id)
        wins = 0
        for t in range(trials):
            rec = recs[t % len(recs)]
            if zero_actuation:
                rec = replace(rec, prismatic_displacement=0.0,
                              tendon_targets={f: 0.0 for f in rec.tendon_targets})
            out = simulate(design, rec, obj, phase, seed=[seed, IMPULSE, i, t], test=True).outcome
            wins += grasp_success(out)
        rows.append({"object_id": obj.object_id, "density_class": obj.density_class,
                     "successes": wins, "trials": trials, "success_rate": wins / trials})
    classes = []
    for cls in ("light", "heavy"):
        sel = [r for r in rows if r["density_class"] == cls]
        if sel:
            wins = sum(r["successes"] for r in sel)
            total = sum(r["trials"] for r in sel)
            classes.append({"density_class": cls, "successes": wins, "trials": total,
                            "success_rate": wins / total})
    return {"objects": rows, "classes": classes, "trials": trials, "seed": seed}
