"""The multi-agent decision process tying mobility, channel, service and safety together.

All agents move simultaneously by one step length per timestep; rewards,
separation events and collisions are evaluated on the post-move distances.
Action legality is owned by the active safety mode: plain boundary masking
in penalty mode, flat or rank masking otherwise. The environment both
resolves masks for action selection and re-resolves them to enforce the
legality contract inside ``step``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import channel, safety, service
from .actions import ACTION_VECTORS, Action
from .config import SimConfig
from .errors import ContractViolation, PlacementError
from .mobility import GueTrace, stack_traces

MAX_PLACEMENT_TRIES = 1000
COLLISION_DIST_M = 1.0


@dataclass(frozen=True)
class Observation:
    self_xy: np.ndarray      # (2,)
    t: int
    fleet_xy: np.ndarray     # (M, 2), includes the observer at its own index
    beam_info: np.ndarray    # (B,) priority mass per beam


@dataclass(frozen=True)
class StepOutcome:
    observations: list
    rewards: np.ndarray                  # (M,)
    separations: list                    # (u, w, distance) with u < w, d < d_th
    collisions: list                     # (u, w, distance) with u < w, d < 1 m


@dataclass(frozen=True)
class Experience:
    obs: Observation
    action: Action
    reward: float
    next_obs: Observation
    next_mask: np.ndarray    # legal actions at next_obs (geometry mask at episode end)


def is_terminal(exp: Experience, episode_len: int) -> bool:
    return exp.next_obs.t >= episode_len


def sample_placement(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """One agent uniform in the interior, the rest uniform on the perimeter,
    redrawn until all pairwise distances reach the separation distance."""
    w, h = config.area_width_m, config.area_height_m
    m = config.num_agents
    for _ in range(MAX_PLACEMENT_TRIES):
        pts = np.empty((m, 2), dtype=float)
        pts[0] = (rng.uniform(0.0, w), rng.uniform(0.0, h))
        for i in range(1, m):
            pts[i] = _perimeter_point(rng.uniform(0.0, 2.0 * (w + h)), w, h)
        if m == 1 or _min_pairwise(pts) >= config.d_th_m:
            return pts
    raise PlacementError(
        f"could not place {m} agents at separation {config.d_th_m:.1f} m "
        f"in a {w}x{h} m area after {MAX_PLACEMENT_TRIES} tries")


def _perimeter_point(s: float, w: float, h: float) -> tuple:
    if s < w:
        return (s, 0.0)
    s -= w
    if s < h:
        return (w, s)
    s -= h
    if s < w:
        return (w - s, h)
    s -= w
    return (0.0, h - s)


def _min_pairwise(pts: np.ndarray) -> float:
    diffs = pts[:, None, :] - pts[None, :, :]
    d = np.linalg.norm(diffs, axis=-1)
    return float(np.min(d[np.triu_indices(len(pts), k=1)]))


def reward_of(u: int, next_distances: np.ndarray, b_next: np.ndarray,
              mode: str, lambda_s: float, lambda_c: float, d_th: float) -> float:
    """Per-agent reward on the post-move state, most severe branch first.

    ``next_distances`` holds this agent's distance to every peer. In the
    masking modes the penalty branches are unreachable by construction and
    the reward is always the covered priority mass.
    """
    if mode == "penalty" and next_distances.size:
        if np.min(next_distances) < COLLISION_DIST_M:
            return -lambda_c
        if np.min(next_distances) < d_th:
            return -lambda_s
    return float(np.sum(b_next))


class UabsEnv:
    """One episode-scoped environment instance (single-threaded)."""

    def __init__(self, config: SimConfig, traces: Sequence[GueTrace], rng: np.random.Generator):
        self.config = config
        self.layout = channel.make_beam_layout(config.altitude_m, config.fov_deg, config.num_beams)
        self.budget = channel.budget_from_config(config, self.layout)
        self.gue_xy = stack_traces(list(traces), config.episode_len)
        self.num_gues = self.gue_xy.shape[0]
        self.rng = rng
        self.t = -1
        self.positions: np.ndarray | None = None
        self.states: list[service.GueServiceState] = []
        self.beam_infos: np.ndarray | None = None   # (M, B)
        self._observations: list[Observation] = []

    # -- lifecycle ----------------------------------------------------------

    def reset(self) -> list[Observation]:
        self.positions = sample_placement(self.config, self.rng)
        self.t = 0
        self.states = [service.GueServiceState() for _ in range(self.num_gues)]
        self._advance_service()
        self._observations = self._build_observations()
        return self._observations

    def step(self, actions: Sequence[Action]) -> StepOutcome:
        cfg = self.config
        if self.t >= cfg.episode_len:
            raise ContractViolation("episode already finished")
        if len(actions) != cfg.num_agents:
            raise ContractViolation("one action per agent required")
        actions = [Action(a) for a in actions]
        masks, _ = self._resolve_masks(lambda u, mask: actions[u])
        for u, a in enumerate(actions):
            if not masks[u][a]:
                raise ContractViolation(
                    f"agent {u} played illegal action {a.name} under {cfg.safety_mode}")

        step_len = cfg.step_len_m
        self.positions = self.positions + np.stack([ACTION_VECTORS[a] for a in actions]) * step_len
        self.t += 1
        self._advance_service()

        dmat = np.linalg.norm(
            self.positions[:, None, :] - self.positions[None, :, :], axis=-1)
        separations, collisions = [], []
        for u in range(cfg.num_agents):
            for w in range(u + 1, cfg.num_agents):
                if dmat[u, w] < cfg.d_th_m:
                    separations.append((u, w, float(dmat[u, w])))
                if dmat[u, w] < COLLISION_DIST_M:
                    collisions.append((u, w, float(dmat[u, w])))

        rewards = np.empty(cfg.num_agents)
        for u in range(cfg.num_agents):
            others = np.delete(dmat[u], u)
            rewards[u] = reward_of(u, others, self.beam_infos[u], cfg.safety_mode,
                                   cfg.lambda_s, cfg.lambda_c, cfg.d_th_m)

        self._observations = self._build_observations()
        return StepOutcome(
            observations=self._observations,
            rewards=rewards,
            separations=separations,
            collisions=collisions,
        )

    # -- action legality ----------------------------------------------------

    def legal_geometry_actions(self, u: int) -> set:
        mask = safety.geometry_mask(self.positions[u], self.config.step_len_m,
                                    self.config.area_width_m, self.config.area_height_m)
        return {a for a in Action if mask[a]}

    def select_actions(self, pick: Callable[[int, np.ndarray], Action]):
        """Resolve masks for the current state and let ``pick`` choose actions.

        Handles the per-mode protocol (including sequential commitment for
        rank masking and empty-mask fallback). Returns (actions, masks,
        fallback_count) with lists indexed by agent.
        """
        masks, info = self._resolve_masks(pick)
        return info["actions"], masks, info["fallbacks"]

    def _resolve_masks(self, pick):
        cfg = self.config
        m = cfg.num_agents
        step_len = cfg.step_len_m
        area = (cfg.area_width_m, cfg.area_height_m)
        masks: list = [None] * m
        actions: list = [None] * m
        fallbacks = 0

        if cfg.safety_mode == "rank_mask":
            ranks = safety.rank_scores(self.beam_infos)
            committed: dict[int, Action] = {}
            committed_next: dict[int, np.ndarray] = {}
            for u in ranks.order:
                u = int(u)
                mask = safety.rank_mask_for(u, self.positions, ranks, committed,
                                            cfg.d_th_m, cfg.speed_mps, cfg.timestep_s, *area)
                mask, fired = safety.fallback(mask, u, self.positions, committed_next,
                                              step_len, *area)
                fallbacks += fired
                a = Action(pick(u, mask))
                masks[u], actions[u] = mask, a
                committed[u] = a
                committed_next[u] = safety.next_position(self.positions[u], a, step_len)
            return masks, {"actions": actions, "fallbacks": fallbacks}

        if cfg.safety_mode == "flat_mask":
            raw = safety.flat_masks(self.positions, cfg.d_th_m,
                                    cfg.speed_mps, cfg.timestep_s, *area)
        else:  # penalty: only out-of-bounds moves are masked
            raw = [safety.geometry_mask(self.positions[u], step_len, *area) for u in range(m)]
        for u in range(m):
            mask, fired = safety.fallback(raw[u], u, self.positions, {}, step_len, *area)
            fallbacks += fired
            masks[u] = mask
            actions[u] = Action(pick(u, mask))
        return masks, {"actions": actions, "fallbacks": fallbacks}

    # -- internals ----------------------------------------------------------

    def _advance_service(self):
        cfg = self.config
        gues = self.gue_xy[:, self.t, :]
        offsets = gues[:, None, :] - self.positions[None, :, :]
        d2d = np.linalg.norm(offsets, axis=-1)
        plos = channel.los_probability(d2d)
        if cfg.los_mode == "stochastic":
            los = self.rng.random(d2d.shape) < plos
        else:
            los = plos >= 0.5
        snr, beam_idx, in_beam = channel.snr_matrix(
            gues, self.positions, cfg.altitude_m, self.layout, self.budget, los)
        served = np.any(snr >= cfg.snr_th_db, axis=1)
        for g in range(self.num_gues):
            service.update_priority(self.states[g], self.t, bool(served[g]),
                                    cfg.window_len, cfg.sat_threshold)
        priorities = np.array([s.priority for s in self.states], dtype=float)
        infos = np.zeros((cfg.num_agents, self.layout.num_beams))
        for u in range(cfg.num_agents):
            covered = in_beam[:, u]
            if np.any(covered):
                infos[u] = np.bincount(beam_idx[covered, u],
                                       weights=priorities[covered],
                                       minlength=self.layout.num_beams)
        self.beam_infos = infos
        self._snr = snr
        self._los = los

    def _build_observations(self) -> list[Observation]:
        fleet = self.positions.copy()
        fleet.setflags(write=False)
        obs = []
        for u in range(self.config.num_agents):
            self_xy = self.positions[u].copy()
            self_xy.setflags(write=False)
            info = self.beam_infos[u].copy()
            info.setflags(write=False)
            obs.append(Observation(self_xy=self_xy, t=self.t, fleet_xy=fleet, beam_info=info))
        return obs

    @property
    def observations(self) -> list[Observation]:
        return self._observations
