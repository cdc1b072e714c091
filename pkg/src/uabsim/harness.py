"""Run orchestration: training, evaluation, mode comparison, metrics files.

Every run is keyed by (config, seed): all randomness flows from named
seed streams, so rerunning a command with the same manifest reproduces
metrics.csv byte-for-byte. Wall-clock timings are kept out of the CSVs
for that reason and only appear in summary.txt.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import learn, service
from .actions import Action
from .channel import coverage_radius
from .config import SimConfig
from .env import Experience, UabsEnv
from .learn import ReplayBuffer, TrainState, encode, epsilon_at, select_action, sync_policy
from .mobility import generate_manhattan_traces, load_traces

# named RNG stream ids (hashed into per-purpose SeedSequences)
S_TRACE_TRAIN = 1
S_TRACE_EVAL = 2
S_ENV = 3
S_POLICY = 4
S_NET_INIT = 5
S_SAMPLE = 6
S_EVAL_ENV = 7
S_CENSUS = 8

METRICS_HEADER = ("episode,kind,epsilon,reward,collision_events,separation_events,"
                  "sep_nonfallback,fallbacks,mean_min_dist,pg_default,loss_mean")


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "%.10g" % x
    return str(x)


@dataclass
class EpisodeMetrics:
    episode: int
    kind: str                      # "train" or "eval"
    epsilon: float
    reward: float
    collision_events: int
    separation_events: int
    sep_nonfallback: int           # separation events on steps without any fallback
    fallbacks: int
    mean_min_dist: float
    pg_default: float
    loss_mean: float | None = None
    wall_s: float = 0.0            # diagnostics only, never serialized to CSV
    pg_curve: list | None = None   # eval passes only
    service_log: list | None = None  # eval passes only: per-GUE served-step counts per window
    reward_log: np.ndarray | None = None  # (M, T) per-step rewards

    def csv_row(self) -> str:
        cells = [self.episode, self.kind, self.epsilon, self.reward,
                 self.collision_events, self.separation_events, self.sep_nonfallback,
                 self.fallbacks, self.mean_min_dist, self.pg_default, self.loss_mean]
        return ",".join(_fmt(c) for c in cells)


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    mode: str
    started_at: str
    build_id: str
    out_dir: str
    outputs: dict = field(default_factory=dict)

    def write(self, path: Path, config: SimConfig) -> None:
        payload = {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "mode": self.mode,
            "started_at": self.started_at,
            "build_id": self.build_id,
            "out_dir": self.out_dir,
            "outputs": self.outputs,
            "config": config.to_text().splitlines(),
        }
        path.write_text(json.dumps(payload, indent=2) + "\n")


# ---------------------------------------------------------------------------
# episode rollout
# ---------------------------------------------------------------------------

def rollout_episode(
    env: UabsEnv,
    policy,
    eps: float,
    policy_rng: np.random.Generator,
    config: SimConfig,
    *,
    buffer: ReplayBuffer | None = None,
    state: TrainState | None = None,
    sample_rng: np.random.Generator | None = None,
    counters: dict | None = None,
    episode_index: int = 0,
    kind: str = "train",
) -> EpisodeMetrics:
    """Run one full episode; optionally feed the buffer and train.

    Experiences carry the legal mask that was actually in force at the next
    state, so their creation lags one step behind the rollout; the final
    transition stores the boundary-only mask (targets never bootstrap there).
    """
    t0 = time.perf_counter()
    obs = env.reset()
    m = config.num_agents
    rewards_log = np.zeros((m, config.episode_len))
    collisions = separations = sep_nonfallback = fallbacks = 0
    min_dists = []
    losses = []
    pending = None

    for t in range(config.episode_len):
        feats = [encode(o, config) for o in obs]
        actions, masks, fb = env.select_actions(
            lambda u, mask: select_action(policy, feats[u], mask, eps, policy_rng))
        fallbacks += fb
        if buffer is not None and pending is not None:
            p_obs, p_act, p_rew = pending
            for u in range(m):
                buffer.push(Experience(p_obs[u], p_act[u], float(p_rew[u]), obs[u], masks[u]))
        outcome = env.step(actions)
        rewards_log[:, t] = outcome.rewards
        collisions += len(outcome.collisions)
        separations += len(outcome.separations)
        if fb == 0:
            sep_nonfallback += len(outcome.separations)
        if m >= 2:
            dmat = np.linalg.norm(env.positions[:, None, :] - env.positions[None, :, :], axis=-1)
            min_dists.append(float(np.min(dmat[np.triu_indices(m, k=1)])))
        pending = (obs, actions, outcome.rewards)
        obs = outcome.observations

        if state is not None and buffer is not None:
            counters["env_steps"] += 1
            if counters["env_steps"] % config.update_period == 0 and len(buffer) >= config.batch_size:
                losses.append(learn.sgd_update(state, buffer.sample(config.batch_size, sample_rng), config))

    if buffer is not None and pending is not None:
        p_obs, p_act, p_rew = pending
        for u in range(m):
            end_mask = np.fromiter((a in env.legal_geometry_actions(u) for a in Action), dtype=bool)
            buffer.push(Experience(p_obs[u], p_act[u], float(p_rew[u]), obs[u], end_mask))

    pg_default = service.satisfaction_metric(env.states)
    pg_curve = service_log = None
    if kind == "eval":
        pg_curve = service.satisfaction_curve(env.states, range(1, config.window_len + 1))
        service_log = [list(s.window_ns_log) for s in env.states]
    return EpisodeMetrics(
        episode=episode_index,
        kind=kind,
        epsilon=eps,
        reward=float(rewards_log.sum()),
        collision_events=collisions,
        separation_events=separations,
        sep_nonfallback=sep_nonfallback,
        fallbacks=fallbacks,
        mean_min_dist=float(np.mean(min_dists)) if min_dists else math.nan,
        pg_default=pg_default,
        loss_mean=float(np.mean(losses)) if losses else None,
        wall_s=time.perf_counter() - t0,
        pg_curve=pg_curve,
        service_log=service_log,
        reward_log=rewards_log,
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    out_dir: Path
    metrics: list
    eval_metrics: list
    best_eval_reward: float | None
    best_checkpoint: Path | None
    final_checkpoint: Path | None


def train(config: SimConfig, out_dir, traces_path=None, eval_traces_path=None) -> TrainResult:
    """Train for the configured number of episodes, evaluating periodically.

    Training traces are regenerated per episode from a dedicated stream
    (or loaded once from ``traces_path``); evaluation always runs on a
    disjoint held-out set with exploration disabled, and the checkpoint of
    the best evaluation pass is retained.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = config.rng_seed
    manifest = RunManifest(
        config_hash=config.config_hash(),
        seed=seed,
        mode=config.safety_mode,
        started_at=time.strftime("%Y-%m-%dT%H:%M:%S"),
        build_id=_build_id(),
        out_dir=str(out_dir),
        outputs={"metrics": "metrics.csv", "eval_pg": "eval_pg.csv", "summary": "summary.txt"},
    )
    (out_dir / "config.txt").write_text(config.to_text())
    manifest.write(out_dir / "manifest.json", config)

    fixed_traces = load_traces(traces_path, config) if traces_path else None
    if eval_traces_path:
        eval_traces = load_traces(eval_traces_path, config)
    else:
        eval_traces = generate_manhattan_traces(config, rng=rng_stream(seed, S_TRACE_EVAL))

    metrics: list[EpisodeMetrics] = []
    eval_rows: list[EpisodeMetrics] = []
    best_reward = None
    best_path = None
    final_path = None

    if config.num_train_episodes > 0:
        state = TrainState.init(config, rng_stream(seed, S_NET_INIT))
        buffer = ReplayBuffer(config.buffer_capacity)
        sample_rng = rng_stream(seed, S_SAMPLE)
        counters = {"env_steps": 0}
        for ep in range(config.num_train_episodes):
            eps = epsilon_at(ep, config)
            traces = fixed_traces or generate_manhattan_traces(
                config, rng=rng_stream(seed, S_TRACE_TRAIN, ep))
            env = UabsEnv(config, traces, rng_stream(seed, S_ENV, ep))
            row = rollout_episode(env, state.online, eps, rng_stream(seed, S_POLICY, ep),
                                  config, buffer=buffer, state=state, sample_rng=sample_rng,
                                  counters=counters, episode_index=ep, kind="train")
            metrics.append(row)

            if (ep + 1) % config.eval_period == 0:
                snapshot = sync_policy(state)
                erow = evaluate_policy(snapshot, eval_traces, config, episode_index=ep)
                metrics.append(erow)
                eval_rows.append(erow)
                if best_reward is None or erow.reward > best_reward:
                    best_reward = erow.reward
                    best_path = out_dir / "best.npz"
                    learn.save_checkpoint(best_path, snapshot, config,
                                          extra={"episode": ep, "eval_reward": erow.reward})
        final_path = out_dir / "final.npz"
        learn.save_checkpoint(final_path, state.online, config,
                              extra={"episode": config.num_train_episodes - 1})

    _write_metrics_csv(out_dir / "metrics.csv", metrics)
    _write_eval_pg_csv(out_dir / "eval_pg.csv", eval_rows)
    _write_summary(out_dir / "summary.txt", config, metrics, eval_rows, best_reward)
    return TrainResult(out_dir=out_dir, metrics=metrics, eval_metrics=eval_rows,
                       best_eval_reward=best_reward, best_checkpoint=best_path,
                       final_checkpoint=final_path)


def evaluate_policy(net, eval_traces, config: SimConfig, episode_index: int = 0) -> EpisodeMetrics:
    """Greedy masked rollout on held-out traces, identical setting per pass."""
    env = UabsEnv(config, eval_traces, rng_stream(config.rng_seed, S_EVAL_ENV))
    return rollout_episode(env, net, 0.0, rng_stream(config.rng_seed, S_EVAL_ENV, 1),
                           config, episode_index=episode_index, kind="eval")


def evaluate_checkpoint(checkpoint_path, config: SimConfig, traces_path=None) -> EpisodeMetrics:
    net, _ = learn.load_checkpoint(checkpoint_path, config)
    if traces_path:
        traces = load_traces(traces_path, config)
    else:
        traces = generate_manhattan_traces(config, rng=rng_stream(config.rng_seed, S_TRACE_EVAL))
    return evaluate_policy(net, traces, config)


# ---------------------------------------------------------------------------
# mode comparison
# ---------------------------------------------------------------------------

MODES = ("penalty", "flat_mask", "rank_mask")


def compare(config: SimConfig, modes, seeds, out_dir) -> dict:
    """Train every (mode, seed) pair and aggregate the comparison table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for mode in modes:
        for seed in seeds:
            run_cfg = config.replace(safety_mode=mode, rng_seed=int(seed))
            result = train(run_cfg, out_dir / f"{mode}_seed{seed}")
            train_rows = [r for r in result.metrics if r.kind == "train"]
            eval_rows = result.eval_metrics
            best = max(eval_rows, key=lambda r: r.reward) if eval_rows else None
            rows.append({
                "mode": mode,
                "seed": int(seed),
                "train_collision_pct": _episode_pct(train_rows, "collision_events"),
                "eval_collision_pct": _episode_pct(eval_rows, "collision_events"),
                "train_separation_pct": _episode_pct(train_rows, "separation_events"),
                "best_eval_reward": best.reward if best else math.nan,
                "final_eval_reward": eval_rows[-1].reward if eval_rows else math.nan,
                "pg_default_best": best.pg_default if best else math.nan,
                "pg_curve_best": best.pg_curve if best else None,
            })

    summary = {}
    for mode in modes:
        sub = [r for r in rows if r["mode"] == mode]
        summary[mode] = {
            "median_best_eval_reward": float(np.median([r["best_eval_reward"] for r in sub])),
            "median_pg_default": float(np.median([r["pg_default_best"] for r in sub])),
            "max_train_collision_pct": max(r["train_collision_pct"] for r in sub),
            "max_eval_collision_pct": max(r["eval_collision_pct"] for r in sub),
        }

    base_cols = ("mode,seed,train_collision_pct,eval_collision_pct,train_separation_pct,"
                 "best_eval_reward,final_eval_reward,pg_default_best")
    curve_cols = [f"pg_thr_{thr}" for thr in range(1, config.window_len + 1)]
    lines = [",".join([base_cols, *curve_cols])]
    for r in rows:
        cells = [_fmt(r[k]) for k in base_cols.split(",")]
        curve = r["pg_curve_best"] or [math.nan] * len(curve_cols)
        cells.extend(_fmt(float(v)) for v in curve)
        lines.append(",".join(cells))
    (out_dir / "compare.csv").write_text("\n".join(lines) + "\n")

    text = ["mode comparison (medians over seeds)"]
    for mode, s in summary.items():
        text.append(f"  {mode:10s} best-eval R median {s['median_best_eval_reward']:.1f}  "
                    f"Pg(default) median {s['median_pg_default']:.4f}  "
                    f"collisions train/eval {s['max_train_collision_pct']:.0%}/"
                    f"{s['max_eval_collision_pct']:.0%} (max over seeds)")
    (out_dir / "compare_summary.txt").write_text("\n".join(text) + "\n")
    return {"rows": rows, "summary": summary}


def _episode_pct(rows, attr) -> float:
    if not rows:
        return math.nan
    return sum(1 for r in rows if getattr(r, attr) > 0) / len(rows)


# ---------------------------------------------------------------------------
# safety census with a random policy
# ---------------------------------------------------------------------------

def random_policy_census(config: SimConfig, episodes: int, agent_counts=(2, 3, 4)) -> list[dict]:
    """Roll random legal actions for many seeded episodes and count events.

    Cycles the fleet size through ``agent_counts``. Used to verify that the
    masking modes never violate separation outside fallback steps and that
    penalty mode does.
    """
    out = []
    for i in range(episodes):
        cfg = config.replace(num_agents=agent_counts[i % len(agent_counts)])
        traces = generate_manhattan_traces(cfg, rng=rng_stream(cfg.rng_seed, S_CENSUS, i, 0))
        env = UabsEnv(cfg, traces, rng_stream(cfg.rng_seed, S_CENSUS, i, 1))
        rng = rng_stream(cfg.rng_seed, S_CENSUS, i, 2)
        env.reset()
        stats = {"episode": i, "num_agents": cfg.num_agents, "collisions": 0,
                 "separations": 0, "sep_nonfallback": 0, "fallback_steps": 0, "steps": 0}
        for _ in range(cfg.episode_len):
            actions, _, fb = env.select_actions(
                lambda u, mask: Action(int(rng.choice(np.flatnonzero(mask)))))
            outcome = env.step(actions)
            stats["steps"] += 1
            stats["collisions"] += len(outcome.collisions)
            stats["separations"] += len(outcome.separations)
            stats["fallback_steps"] += int(fb > 0)
            if fb == 0:
                stats["sep_nonfallback"] += len(outcome.separations)
        out.append(stats)
    return out


# ---------------------------------------------------------------------------
# coverage
# ---------------------------------------------------------------------------

def coverage_fraction(num_agents: int, altitude_m: float, fov_deg: float,
                      area_w: float, area_h: float) -> float:
    """Max instantaneous covered fraction: the beam footprints of one agent
    are disjoint tangent circles whose union area is pi * r_cov^2."""
    r = coverage_radius(altitude_m, fov_deg)
    return num_agents * math.pi * r * r / (area_w * area_h)


def coverage_report(config: SimConfig, reference: float | None = None) -> float:
    frac = coverage_fraction(config.num_agents, config.altitude_m, config.fov_deg,
                             config.area_width_m, config.area_height_m)
    r = coverage_radius(config.altitude_m, config.fov_deg)
    print(f"coverage radius per agent: {r:.2f} m")
    print(f"computed max instantaneous coverage fraction: {frac:.4f} "
          f"({config.num_agents} agents over {config.area_width_m:.0f}x"
          f"{config.area_height_m:.0f} m)")
    if reference is not None:
        print(f"reference fraction for comparison: {reference:.4f}")
    return frac


# ---------------------------------------------------------------------------
# file emission
# ---------------------------------------------------------------------------

def _write_metrics_csv(path: Path, rows) -> None:
    lines = [METRICS_HEADER]
    lines.extend(r.csv_row() for r in rows)
    path.write_text("\n".join(lines) + "\n")


def _write_eval_pg_csv(path: Path, eval_rows) -> None:
    lines = ["pass,episode,threshold,pg"]
    for i, row in enumerate(eval_rows):
        for thr, pg in zip(range(1, len(row.pg_curve) + 1), row.pg_curve):
            lines.append(f"{i},{row.episode},{thr},{_fmt(pg)}")
    path.write_text("\n".join(lines) + "\n")


def write_service_log_csv(path: Path, row) -> None:
    """Per-GUE served-step counts for every closed window of one eval pass."""
    lines = ["gue_id,window,served_steps"]
    for gue_id, ns_log in enumerate(row.service_log or []):
        for window, ns in enumerate(ns_log):
            lines.append(f"{gue_id},{window},{ns}")
    path.write_text("\n".join(lines) + "\n")


def _write_summary(path: Path, config: SimConfig, metrics, eval_rows, best_reward) -> None:
    train_rows = [r for r in metrics if r.kind == "train"]
    total_wall = sum(r.wall_s for r in metrics)
    lines = [
        f"config hash: {config.config_hash()}",
        f"mode: {config.safety_mode}  seed: {config.rng_seed}",
        f"training episodes: {len(train_rows)}  evaluation passes: {len(eval_rows)}",
    ]
    if train_rows:
        lines += [
            f"episodes with collisions (train): {_episode_pct(train_rows, 'collision_events'):.1%}",
            f"episodes with separation events (train): "
            f"{_episode_pct(train_rows, 'separation_events'):.1%}",
            f"total fallback activations (train): {sum(r.fallbacks for r in train_rows)}",
        ]
    if eval_rows:
        lines += [
            f"best evaluation reward: {best_reward:.2f}",
            f"episodes with collisions (eval): {_episode_pct(eval_rows, 'collision_events'):.1%}",
        ]
    lines.append(f"wall time: {total_wall:.1f} s")
    path.write_text("\n".join(lines) + "\n")


def _build_id() -> str:
    try:
        from importlib.metadata import version
        return f"uabsim {version('uabsim')}"
    except Exception:
        return "uabsim dev"
