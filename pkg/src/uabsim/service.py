"""Per-GUE service accounting: priorities, windows, satisfaction.

A ground user is served at a step when at least one aerial base station
receives it above the SNR threshold. Service history is tracked over
back-to-back windows of ``window_len`` steps aligned at multiples of the
window length: the priority counter resets to 1 when a window opens and
grows by one on every later served step, and a window counts as satisfied
when it contains at least ``sat_threshold`` served steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel
from .errors import MetricUndefined


@dataclass
class GueServiceState:
    priority: int = 0
    window_start: int = -1          # -1 until the first window opens
    served_in_window: int = 0
    windows_total: int = 0
    windows_satisfied: int = 0
    window_ns_log: list = field(default_factory=list)  # served-step count of each closed window


def update_priority(state: GueServiceState, t: int, served: bool,
                    window_len: int, sat_threshold: int) -> GueServiceState:
    """Advance one GUE's service state to step t.

    At a window boundary the closing window is scored first, then the
    priority resets to 1; the boundary step's served flag counts toward the
    new window but does not increment the freshly reset priority.
    """
    opens = (t % window_len == 0) and (t != state.window_start)
    if opens:
        if state.window_start >= 0:
            state.windows_total += 1
            if state.served_in_window >= sat_threshold:
                state.windows_satisfied += 1
            state.window_ns_log.append(state.served_in_window)
        state.window_start = t
        state.priority = 1
        state.served_in_window = 1 if served else 0
    elif served:
        state.priority += 1
        state.served_in_window += 1
    return state


def is_served(gue, uabs_positions, los_flags, altitude_m, layout, budget, snr_th_db) -> bool:
    """True when any UABS link for this GUE meets the SNR threshold."""
    for uabs, los in zip(uabs_positions, los_flags):
        if channel.snr_db(gue, uabs, altitude_m, layout, budget, bool(los)) >= snr_th_db:
            return True
    return False


def per_beam_info(uabs, layout, gues) -> np.ndarray:
    """Priority mass under each beam of one UABS.

    ``gues`` is a sequence of (position, GueServiceState); a GUE outside
    every footprint contributes to no beam.
    """
    values = np.zeros(layout.num_beams, dtype=float)
    for pos, state in gues:
        idx = channel.beam_index_of(pos, uabs, layout)
        if idx is not None:
            values[idx] += state.priority
    return values


def satisfaction_metric(states) -> float:
    """Mean over GUEs of (satisfied windows / total windows)."""
    ratios = []
    for s in states:
        if s.windows_total == 0:
            raise MetricUndefined("satisfaction undefined: a GUE has no closed window")
        ratios.append(s.windows_satisfied / s.windows_total)
    return float(np.mean(ratios))


def satisfaction_curve(states, thresholds) -> list[float]:
    """Satisfaction fraction for each candidate threshold, from window logs.

    Uses the closed-window served-step counts, so one rollout yields the
    whole sweep; non-increasing in the threshold by construction.
    """
    curve = []
    for thr in thresholds:
        ratios = []
        for s in states:
            if not s.window_ns_log:
                raise MetricUndefined("satisfaction sweep undefined: no closed windows")
            ns = np.asarray(s.window_ns_log)
            ratios.append(float(np.mean(ns >= thr)))
        curve.append(float(np.mean(ratios)))
    return curve
