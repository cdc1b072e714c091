"""Binary action masks that keep the fleet above the separation distance.

Two mechanisms are provided on top of plain boundary masking:

* flat masking - for every pair, any action landing within
  ``d_th + v*dt`` of a peer's *current* position is illegal; the extra
  ``v*dt`` margin covers the peer's unknown simultaneous move.
* rank masking - agents are ranked by the priority mass they currently
  cover. Pairs closer than ``d_th + 2*v*dt`` are potential colliders; the
  higher-ranked agent of such a pair moves without restriction while the
  lower-ranked one masks exactly the actions that would land within
  ``d_th`` of the higher-ranked agent's already-committed next position.
  Agents therefore commit actions sequentially in descending rank order.

A mask is a length-4 boolean array indexed by Action. When constraints
empty a mask, ``fallback`` re-legalizes the single in-bounds action that
maximizes the minimum next-step distance to the other agents.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .actions import ACTION_VECTORS, Action
from .errors import ContractViolation

N_ACTIONS = len(Action)


@dataclass(frozen=True)
class RankAssignment:
    scores: np.ndarray   # priority mass per agent
    order: np.ndarray    # agent indices, descending score, ties by index

    def rank_position(self) -> np.ndarray:
        pos = np.empty(len(self.order), dtype=int)
        pos[self.order] = np.arange(len(self.order))
        return pos


def next_position(pos, action: Action, step_len: float) -> np.ndarray:
    return np.asarray(pos, dtype=float) + ACTION_VECTORS[action] * step_len


def geometry_mask(pos, step_len: float, area_w: float, area_h: float) -> np.ndarray:
    """Legal directions that keep the agent inside [0, W] x [0, H]."""
    mask = np.zeros(N_ACTIONS, dtype=bool)
    for a in Action:
        nxt = next_position(pos, a, step_len)
        mask[a] = 0.0 <= nxt[0] <= area_w and 0.0 <= nxt[1] <= area_h
    return mask


def flat_masks(positions, d_th: float, v: float, dt: float,
               area_w: float, area_h: float) -> list[np.ndarray]:
    """Symmetric per-agent masks evaluated against peers' current positions."""
    positions = np.asarray(positions, dtype=float)
    step_len = v * dt
    margin = d_th + step_len
    masks = []
    for u in range(len(positions)):
        mask = geometry_mask(positions[u], step_len, area_w, area_h)
        others = np.delete(positions, u, axis=0)
        for a in Action:
            if not mask[a]:
                continue
            nxt = next_position(positions[u], a, step_len)
            if others.size and np.min(np.linalg.norm(others - nxt, axis=1)) < margin:
                mask[a] = False
        masks.append(mask)
    return masks


def rank_scores(beam_infos) -> RankAssignment:
    """Rank agents by covered priority mass, ties broken by agent index."""
    scores = np.array([float(np.sum(b)) for b in beam_infos])
    order = np.lexsort((np.arange(len(scores)), -scores))
    return RankAssignment(scores=scores, order=np.asarray(order, dtype=int))


def potential_colliders(positions, u: int, d_th: float, step_len: float) -> list[int]:
    positions = np.asarray(positions, dtype=float)
    radius = d_th + 2.0 * step_len
    dists = np.linalg.norm(positions - positions[u], axis=1)
    return [w for w in range(len(positions)) if w != u and dists[w] < radius]


def rank_mask_for(u: int, positions, ranks: RankAssignment,
                  committed: Mapping[int, Action], d_th: float, v: float, dt: float,
                  area_w: float, area_h: float) -> np.ndarray:
    """Mask for one agent given the committed moves of higher-ranked agents.

    Only potential colliders constrain the agent, and only those that
    outrank it; lower-ranked colliders will yield in their own turn.
    """
    positions = np.asarray(positions, dtype=float)
    step_len = v * dt
    rank_pos = ranks.rank_position()
    mask = geometry_mask(positions[u], step_len, area_w, area_h)
    for w in potential_colliders(positions, u, d_th, step_len):
        if rank_pos[w] > rank_pos[u]:
            continue  # w is lower-ranked: it moves after u and yields
        if w not in committed:
            raise ContractViolation(
                f"agent {w} outranks agent {u} but has no committed action")
        next_w = next_position(positions[w], committed[w], step_len)
        for a in Action:
            if mask[a] and np.linalg.norm(next_position(positions[u], a, step_len) - next_w) < d_th:
                mask[a] = False
    return mask


def rank_masks(positions, ranks: RankAssignment, chosen: Mapping[int, Action],
               d_th: float, v: float, dt: float,
               area_w: float, area_h: float) -> list[np.ndarray]:
    """Masks for every agent under the sequential-commitment protocol.

    ``chosen`` must already contain an action for each agent's higher-ranked
    potential colliders (the protocol guarantees this when agents are
    processed in descending rank order).
    """
    return [
        rank_mask_for(u, positions, ranks, chosen, d_th, v, dt, area_w, area_h)
        for u in range(len(np.asarray(positions)))
    ]


def fallback(mask: np.ndarray, u: int, positions,
             committed_next: Mapping[int, np.ndarray], step_len: float,
             area_w: float, area_h: float) -> tuple[np.ndarray, bool]:
    """Re-legalize the safest single action when a mask is empty.

    Chooses the in-bounds action maximizing the minimum next-step distance
    to the other agents (committed agents at their next position, everyone
    else at their current one); ties resolve in Action enum order. Returns
    the mask and whether the fallback fired.
    """
    if mask.any():
        return mask, False
    positions = np.asarray(positions, dtype=float)
    geo = geometry_mask(positions[u], step_len, area_w, area_h)
    assert geo.any(), "area smaller than one step: unreachable by config validation"
    refs = [np.asarray(committed_next[w], dtype=float) if w in committed_next else positions[w]
            for w in range(len(positions)) if w != u]
    best_action, best_dist = None, -np.inf
    for a in Action:
        if not geo[a]:
            continue
        nxt = next_position(positions[u], a, step_len)
        d = min((float(np.linalg.norm(r - nxt)) for r in refs), default=np.inf)
        if d > best_dist:
            best_action, best_dist = a, d
    out = np.zeros(N_ACTIONS, dtype=bool)
    out[best_action] = True
    return out, True
