"""Seeded runs, metric aggregation, sweeps and result files."""
from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .agents import make_agent
from .config import ExperimentConfig, with_overrides
from .envs import EnvSpec, ground_truth_mdp, make_env, optimal_action_mask, optimal_policy_and_value
from .planner import ConvergenceError, evaluate_exact

RUNS_FILE = "runs.jsonl"
TIMINGS_FILE = "timings.jsonl"
SUMMARY_FILE = "summary.csv"
CONFIG_FILE = "config.json"
CURVE_FILES = {
    "success_rate": "curve_success_rate.csv",
    "steps_to_solve": "curve_steps_to_solve.csv",
    "episodes_to_solve": "curve_episodes_to_solve.csv",
    "mean_return": "curve_mean_return.csv",
}
REGRET_CURVE_FILE = "curve_regret.csv"


class RunError(RuntimeError):
    """A run failed; carries the config name, size and seed."""


@dataclass
class RunRecord:
    seed: int
    size: int
    steps: int = 0
    total_return: float = 0.0
    episodes: int = 0
    solved: bool | None = None
    solve_step: int | None = None
    solve_episode: int | None = None
    steps_to_solve: int | None = None
    halt_reason: str = "budget"
    regret: list = field(default_factory=list)
    cumulative_regret: float | None = None
    states: list | None = None
    actions: list | None = None
    rewards: list | None = None
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class Summary:
    size: int
    n_runs: int
    n_errors: int
    mean_return: float
    se_return: float
    success_rate: float | None
    mean_steps_to_solve: float | None
    se_steps_to_solve: float | None
    mean_episodes_to_solve: float | None
    se_episodes_to_solve: float | None
    complete: bool


def standard_error(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(values.size))


# -- ground-truth oracles (cached per process) ---------------------------------


@lru_cache(maxsize=64)
def _oracle(spec: EnvSpec, gamma: float):
    V_star, _ = optimal_policy_and_value(spec, gamma)
    return ground_truth_mdp(spec, gamma), V_star, optimal_action_mask(spec, gamma)


# -- single run ----------------------------------------------------------------


def run_single(config: ExperimentConfig, seed: int, size: int | None = None) -> RunRecord:
    """Run one seed to its step budget, its solve point or T_max.

    Environment and agent randomness come from independent children of
    ``SeedSequence(seed)``. Planner failures are re-raised as
    :class:`RunError` naming the run.
    """
    size = config.env.size if size is None else size
    try:
        return _run(config, seed, size)
    except ConvergenceError as exc:
        raise RunError(f"{config.name} size={size} seed={seed}: {exc}") from exc


def _run(config: ExperimentConfig, seed: int, size: int) -> RunRecord:
    spec = config.env_spec(size)
    gamma = config.resolved_gamma()
    env_seed, agent_seed = np.random.SeedSequence(seed).spawn(2)
    env = make_env(spec, env_seed)
    tied = env.tied_dest() if config.prior.tied else None
    agent = make_agent(
        env.n_states,
        env.n_actions,
        gamma,
        config.agent_params(env.r_max),
        config.prior.to_prior(),
        config.uncertainty_config(env.n_states),
        tied_dest=tied,
        episodic=env.episodic,
        seed=agent_seed,
    )

    steps = config.resolved_steps(size)
    t_max = config.resolved_t_max(size)
    tracks = config.tracks_success()
    halt = config.resolved_halt_on_solve()
    window = config.success_window
    need_oracle = tracks or config.regret.enabled
    if need_oracle:
        gt, V_star, mask = _oracle(spec, gamma)

    rec = RunRecord(seed=seed, size=size)
    if config.log_steps:
        rec.states, rec.actions, rec.rewards = [], [], []
    if tracks:
        rec.solved = False

    regret_cache: dict = {}

    def regret_at(s):
        key = agent.policy.tobytes()
        if key not in regret_cache:
            regret_cache.clear()
            regret_cache[key] = evaluate_exact(gt, agent.policy)
        return max(float(V_star[s] - regret_cache[key][s]), 0.0)

    s = env.reset()
    episode_ok = True
    streak = 0
    total = 0.0
    t = 0
    while t < steps:
        if config.regret.enabled and t % config.regret.stride == 0:
            rec.regret.append([t, regret_at(s)])
        a = agent.act(s)
        if tracks and not mask[s, a]:
            episode_ok = False
        step = env.step(a)
        agent.observe(s, a, step.next_state, step.reward, episode_end=step.terminated)
        total += step.reward
        if config.log_steps:
            rec.states.append(s)
            rec.actions.append(a)
            rec.rewards.append(step.reward)
        t += 1
        s = step.next_state
        if step.terminated:
            s = env.reset()
        if step.boundary:
            rec.episodes += 1
            if tracks:
                streak = streak + 1 if episode_ok else 0
                episode_ok = True
                if streak >= window and not rec.solved:
                    rec.solved = True
                    rec.solve_step = t
                    rec.solve_episode = rec.episodes
                    if halt:
                        rec.halt_reason = "solved"
                        break
        if t_max is not None and t >= t_max and not rec.solved and tracks:
            rec.halt_reason = "t_max"
            break

    rec.steps = t
    rec.total_return = total
    if tracks:
        rec.steps_to_solve = rec.solve_step if rec.solved else t_max
    if config.regret.enabled:
        if not rec.regret or rec.regret[-1][0] != t:
            rec.regret.append([t, regret_at(s)])
        stride = config.regret.stride
        rec.cumulative_regret = float(sum(d for _, d in rec.regret[:-1]) * stride)
    return rec


def _run_task(args) -> tuple[RunRecord, float]:
    config, seed, size = args
    start = time.perf_counter()
    try:
        rec = run_single(config, seed, size)
    except (RunError, ValueError, IndexError, FloatingPointError) as exc:
        rec = RunRecord(seed=seed, size=size, error=f"{type(exc).__name__}: {exc}")
    return rec, time.perf_counter() - start


# -- aggregation ---------------------------------------------------------------


def summarize(records: list[RunRecord], t_max: int | None = None) -> Summary:
    ok = [r for r in records if r.error is None]
    size = records[0].size if records else 0
    returns = [r.total_return for r in ok]
    tracked = [r for r in ok if r.solved is not None]
    if tracked:
        success = sum(r.solved for r in tracked) / len(tracked)
        steps = [r.steps_to_solve for r in tracked]
        # failed runs count with every episode they used before halting
        eps = [r.solve_episode if r.solved else r.episodes for r in tracked]
        mean_steps, se_steps = float(np.mean(steps)), standard_error(steps)
        mean_eps, se_eps = float(np.mean(eps)), standard_error(eps)
    else:
        success = mean_steps = se_steps = mean_eps = se_eps = None
    return Summary(
        size=size,
        n_runs=len(records),
        n_errors=len(records) - len(ok),
        mean_return=float(np.mean(returns)) if returns else float("nan"),
        se_return=standard_error(returns),
        success_rate=success,
        mean_steps_to_solve=mean_steps,
        se_steps_to_solve=se_steps,
        mean_episodes_to_solve=mean_eps,
        se_episodes_to_solve=se_eps,
        complete=len(ok) == len(records),
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


SUMMARY_FIELDS = list(Summary.__dataclass_fields__)


def write_summaries(out: Path, summaries: list[Summary], label: dict | None = None) -> None:
    label = label or {}
    header = list(label) + SUMMARY_FIELDS
    rows = [[*label.values(), *(getattr(s, f) for f in SUMMARY_FIELDS)] for s in summaries]
    write_csv(out / SUMMARY_FILE, header, rows)


def write_curves(out: Path, summaries: list[Summary]) -> None:
    """Plot-ready (size, metric, mean, se) tables, one per metric."""
    pairs = {
        "success_rate": lambda s: (s.success_rate, None),
        "steps_to_solve": lambda s: (s.mean_steps_to_solve, s.se_steps_to_solve),
        "episodes_to_solve": lambda s: (s.mean_episodes_to_solve, s.se_episodes_to_solve),
        "mean_return": lambda s: (s.mean_return, s.se_return),
    }
    for metric, get in pairs.items():
        rows = []
        for s in summaries:
            mean, se = get(s)
            if mean is None:
                continue
            if metric == "success_rate":
                n = s.n_runs - s.n_errors
                se = math.sqrt(mean * (1 - mean) / n) if n else 0.0
            rows.append([s.size, metric, mean, se])
        if rows:
            write_csv(out / CURVE_FILES[metric], ["size", "metric", "mean", "se"], rows)


def write_regret_curve(out: Path, records: list[RunRecord]) -> None:
    runs = [r for r in records if r.error is None and r.regret]
    if not runs:
        return
    rows = []
    for size in sorted({r.size for r in runs}):
        group = [r for r in runs if r.size == size]
        checkpoints = sorted({t for r in group for t, _ in r.regret})
        cums = []
        for r in group:
            times = np.array([t for t, _ in r.regret])
            deltas = np.array([d for _, d in r.regret])
            # left Riemann sum of the sampled per-step regret, held flat after halting
            cum = np.concatenate([[0.0], np.cumsum(deltas[:-1] * np.diff(times))])
            cums.append(np.interp(checkpoints, times, cum))
        cums = np.array(cums)
        for j, t in enumerate(checkpoints):
            rows.append([size, t, "cumulative_regret", float(cums[:, j].mean()), standard_error(cums[:, j])])
    write_csv(out / REGRET_CURVE_FILE, ["size", "t", "metric", "mean", "se"], rows)


def write_results(out, config: ExperimentConfig, records: list[RunRecord], timings=None) -> list[Summary]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    records = sorted(records, key=lambda r: (r.size, r.seed))
    (out / CONFIG_FILE).write_text(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    with open(out / RUNS_FILE, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    if timings is not None:
        with open(out / TIMINGS_FILE, "w", encoding="utf-8") as fh:
            for (size, seed), secs in sorted(timings.items()):
                fh.write(json.dumps({"size": size, "seed": seed, "wall_time": secs}) + "\n")
    summaries = summaries_by_size(records)
    write_summaries(out, summaries)
    write_curves(out, summaries)
    write_regret_curve(out, records)
    return summaries


def summaries_by_size(records: list[RunRecord]) -> list[Summary]:
    sizes = sorted({r.size for r in records})
    return [summarize([r for r in records if r.size == s]) for s in sizes]


def read_records(in_dir) -> list[RunRecord]:
    with open(Path(in_dir) / RUNS_FILE, encoding="utf-8") as fh:
        return [RunRecord(**json.loads(line)) for line in fh if line.strip()]


def report(in_dir) -> list[Summary]:
    """Rebuild the summary and curve CSVs of a results directory from its runs file."""
    in_dir = Path(in_dir)
    records = read_records(in_dir)
    summaries = summaries_by_size(records)
    write_summaries(in_dir, summaries)
    write_curves(in_dir, summaries)
    write_regret_curve(in_dir, records)
    return summaries


# -- experiments -----------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RunRecord]
    summaries: list[Summary]
    timings: dict

    def summary(self, size: int | None = None) -> Summary:
        if size is None:
            return self.summaries[0]
        return next(s for s in self.summaries if s.size == size)


def run_experiment(config: ExperimentConfig, workers: int = 1, out=None, seeds=None) -> ExperimentResult:
    seeds = config.seed_list() if seeds is None else list(seeds)
    tasks = [(config, seed, size) for size in config.size_list() for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_run_task(t) for t in tasks]
    records = [r for r, _ in results]
    timings = {(r.size, r.seed): secs for r, secs in results}
    records.sort(key=lambda r: (r.size, r.seed))
    if out is not None:
        summaries = write_results(out, config, records, timings)
    else:
        summaries = summaries_by_size(records)
    return ExperimentResult(config, records, summaries, timings)


def selection_score(config: ExperimentConfig, summaries: list[Summary]) -> tuple:
    """Higher is better: mean return, or (success rate, -steps to solve) for solve-style tasks."""
    if config.tracks_success():
        rate = float(np.mean([s.success_rate for s in summaries]))
        steps = float(np.mean([s.mean_steps_to_solve for s in summaries]))
        return (rate, -steps)
    return (float(np.mean([s.mean_return for s in summaries])),)


def expand_grid(grid: dict) -> list[dict]:
    keys = sorted(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ValueError(f"grid entry {k!r} must be a nonempty list")
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


@dataclass
class SweepResult:
    best: ExperimentConfig
    best_overrides: dict
    table: list[tuple[dict, list[Summary]]]


def sweep(base: ExperimentConfig, grid: dict, seeds=None, workers: int = 1, out=None) -> SweepResult:
    """Evaluate every grid point and pick the best by :func:`selection_score`.

    Ties keep the earliest grid point in sorted-key product order.
    """
    points = expand_grid(grid)
    table = []
    best = None
    for overrides in points:
        cfg = with_overrides(base, overrides)
        result = run_experiment(cfg, workers=workers, seeds=seeds)
        score = selection_score(cfg, result.summaries)
        table.append((overrides, result.summaries))
        if best is None or score > best[0]:
            best = (score, cfg, overrides)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        keys = sorted(grid)
        rows = [[*(o[k] for k in keys), *(getattr(s, f) for f in SUMMARY_FIELDS)] for o, sums in table for s in sums]
        write_csv(out / "sweep.csv", keys + SUMMARY_FIELDS, rows)
        (out / "best_config.json").write_text(
            json.dumps(best[1].model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
        )
    return SweepResult(best[1], best[2], table)
