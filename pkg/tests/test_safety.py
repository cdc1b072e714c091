import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uabsim import safety
from uabsim.actions import ACTION_VECTORS, Action
from uabsim.errors import ContractViolation

D_TH = 72.79404685324047
V, DT = 20.0, 1.0
STEP = V * DT
AREA = (1000.0, 1000.0)  # large area so geometry does not interfere unless wanted


def moved(pos, action):
    return np.asarray(pos, float) + ACTION_VECTORS[action] * STEP


class TestGeometryMask:
    def test_corner(self):
        mask = safety.geometry_mask((0.0, 0.0), STEP, 350.0, 170.0)
        assert {a for a in Action if mask[a]} == {Action.UP, Action.RIGHT}

    def test_center(self):
        mask = safety.geometry_mask((175.0, 85.0), STEP, 350.0, 170.0)
        assert mask.all()

    def test_left_edge(self):
        mask = safety.geometry_mask((0.0, 85.0), STEP, 350.0, 170.0)
        assert {a for a in Action if mask[a]} == {Action.UP, Action.RIGHT, Action.DOWN}


class TestFlatMasks:
    def test_well_separated_pair_fully_legal_and_safe(self):
        # d = d_th + 2 v dt + eps: every joint action keeps the pair separated
        d = D_TH + 2 * STEP + 1e-6
        positions = np.array([[300.0, 300.0], [300.0 + d, 300.0]])
        masks = safety.flat_masks(positions, D_TH, V, DT, *AREA)
        assert masks[0].all() and masks[1].all()
        for a0, a1 in itertools.product(Action, Action):
            n0, n1 = moved(positions[0], a0), moved(positions[1], a1)
            assert np.linalg.norm(n0 - n1) >= D_TH

    def test_pair_at_exact_threshold_masks_approaches(self):
        positions = np.array([[300.0, 300.0], [300.0 + D_TH, 300.0]])
        masks = safety.flat_masks(positions, D_TH, V, DT, *AREA)
        for u, other in ((0, positions[1]), (1, positions[0])):
            for a in Action:
                expected = np.linalg.norm(moved(positions[u], a) - other) >= D_TH + STEP
                assert masks[u][a] == expected
        # concretely: agent 0 moving right (towards 1) is illegal, left is legal
        assert not masks[0][Action.RIGHT]
        assert masks[0][Action.LEFT]

    def test_single_agent_only_bounds(self):
        masks = safety.flat_masks(np.array([[10.0, 500.0]]), D_TH, V, DT, *AREA)
        assert {a for a in Action if masks[0][a]} == {Action.UP, Action.RIGHT, Action.DOWN}

    @given(st.floats(30.0, 200.0), st.floats(30.0, 200.0), st.floats(1.0, 40.0))
    @settings(max_examples=100)
    def test_monotone_in_threshold(self, x, y, extra):
        positions = np.array([[500.0, 500.0], [500.0 + x, 500.0 + y]])
        small = safety.flat_masks(positions, D_TH, V, DT, *AREA)
        large = safety.flat_masks(positions, D_TH + extra, V, DT, *AREA)
        for ms, ml in zip(small, large):
            assert not np.any(ml & ~ms)  # enlarging d_th never adds a legal action


class TestRankScores:
    def test_sorting(self):
        b = [np.array([6.0, 6.0]), np.array([5.0, 0.0]), np.array([4.0, 5.0])]
        ranks = safety.rank_scores(b)
        np.testing.assert_array_equal(ranks.scores, [12.0, 5.0, 9.0])
        np.testing.assert_array_equal(ranks.order, [0, 2, 1])

    def test_tie_break_by_index(self):
        ranks = safety.rank_scores([np.zeros(3)] * 3)
        np.testing.assert_array_equal(ranks.order, [0, 1, 2])

    @given(st.lists(st.floats(0.0, 100.0), min_size=2, max_size=6))
    @settings(max_examples=200)
    def test_argsort_equivariance(self, scores):
        base = safety.rank_scores([np.array([s]) for s in scores])
        perm = np.random.default_rng(0).permutation(len(scores))
        permuted = safety.rank_scores([np.array([scores[p]]) for p in perm])
        # the agent ranked k-th in the permuted problem is the permuted image
        # of the agent ranked k-th in the base problem, up to tie handling
        base_sorted = [scores[i] for i in base.order]
        perm_sorted = [scores[perm[i]] for i in permuted.order]
        assert base_sorted == perm_sorted


class TestRankMasks:
    def test_distant_pair_not_colliders(self):
        d = D_TH + 3 * STEP
        positions = np.array([[300.0, 300.0], [300.0 + d, 300.0]])
        ranks = safety.rank_scores([np.array([5.0]), np.array([1.0])])
        masks = safety.rank_masks(positions, ranks, {}, D_TH, V, DT, *AREA)
        assert masks[0].all() and masks[1].all()

    def test_higher_rank_moving_away_frees_lower(self):
        d = D_TH + STEP
        positions = np.array([[300.0, 300.0], [300.0 + d, 300.0]])
        ranks = safety.rank_scores([np.array([9.0]), np.array([1.0])])
        # agent 1 sits east of agent 0, so LEFT moves agent 0 directly away
        committed = {0: Action.LEFT}
        mask1 = safety.rank_mask_for(1, positions, ranks, committed, D_TH, V, DT, *AREA)
        next0 = moved(positions[0], Action.LEFT)
        for a in Action:
            assert np.linalg.norm(moved(positions[1], a) - next0) >= D_TH
        assert mask1.all()

    def test_higher_rank_approaching_masks_exact_set(self):
        positions = np.array([[300.0, 300.0], [300.0 + D_TH, 300.0]])
        ranks = safety.rank_scores([np.array([9.0]), np.array([1.0])])
        committed = {0: Action.RIGHT}  # straight at agent 1
        mask1 = safety.rank_mask_for(1, positions, ranks, committed, D_TH, V, DT, *AREA)
        next0 = moved(positions[0], Action.RIGHT)
        for a in Action:
            expected = np.linalg.norm(moved(positions[1], a) - next0) >= D_TH
            assert mask1[a] == expected
        assert not mask1[Action.LEFT]      # moving into the approach is illegal
        assert mask1[Action.RIGHT]         # fleeing is legal

    def test_higher_ranked_agent_ignores_lower(self):
        positions = np.array([[300.0, 300.0], [300.0 + D_TH, 300.0]])
        ranks = safety.rank_scores([np.array([9.0]), np.array([1.0])])
        mask0 = safety.rank_mask_for(0, positions, ranks, {}, D_TH, V, DT, *AREA)
        assert mask0.all()  # top of the pair is never masked by it

    def test_missing_commitment_is_contract_violation(self):
        positions = np.array([[300.0, 300.0], [300.0 + D_TH, 300.0]])
        ranks = safety.rank_scores([np.array([9.0]), np.array([1.0])])
        with pytest.raises(ContractViolation):
            safety.rank_mask_for(1, positions, ranks, {}, D_TH, V, DT, *AREA)

    @given(st.floats(-60.0, 60.0), st.floats(-60.0, 60.0), st.floats(1.0, 40.0),
           st.sampled_from(list(Action)))
    @settings(max_examples=100)
    def test_monotone_in_threshold(self, dx, dy, extra, committed_action):
        positions = np.array([[500.0, 500.0], [560.0 + dx, 500.0 + dy]])
        ranks = safety.rank_scores([np.array([9.0]), np.array([1.0])])
        committed = {0: committed_action}
        small = safety.rank_mask_for(1, positions, ranks, committed, D_TH, V, DT, *AREA)
        large = safety.rank_mask_for(1, positions, ranks, committed, D_TH + extra,
                                     V, DT, *AREA)
        assert not np.any(large & ~small)

    def test_empty_collider_set_equals_geometry_masking(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            positions = rng.uniform(100.0, 900.0, size=(3, 2))
            # inflate separation beyond the collider radius
            positions *= 1.0
            if np.min([np.linalg.norm(positions[i] - positions[j])
                       for i in range(3) for j in range(i + 1, 3)]) < D_TH + 2 * STEP:
                continue
            ranks = safety.rank_scores([np.array([float(i)]) for i in range(3)])
            masks = safety.rank_masks(positions, ranks, {}, D_TH, V, DT, *AREA)
            for u in range(3):
                np.testing.assert_array_equal(
                    masks[u], safety.geometry_mask(positions[u], STEP, *AREA))


class TestFallback:
    def test_neighbor_due_east_relegalizes_left(self):
        positions = np.array([[500.0, 500.0], [520.0, 500.0]])
        empty = np.zeros(4, dtype=bool)
        mask, fired = safety.fallback(empty, 0, positions, {}, STEP, *AREA)
        assert fired
        assert list(np.nonzero(mask)[0]) == [Action.LEFT]

    def test_non_empty_mask_unchanged(self):
        positions = np.array([[500.0, 500.0], [520.0, 500.0]])
        partial = np.array([True, False, False, True])
        mask, fired = safety.fallback(partial, 0, positions, {}, STEP, *AREA)
        assert not fired
        np.testing.assert_array_equal(mask, partial)

    def test_matches_exhaustive_max_min_search(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            positions = rng.uniform(100.0, 900.0, size=(4, 2))
            committed = {1: positions[1] + rng.uniform(-STEP, STEP, 2)}
            mask, fired = safety.fallback(np.zeros(4, bool), 0, positions, committed,
                                          STEP, *AREA)
            assert fired
            # independent exhaustive search
            def min_dist(a):
                nxt = positions[0] + ACTION_VECTORS[a] * STEP
                refs = [committed.get(w, positions[w]) for w in range(1, 4)]
                return min(np.linalg.norm(r - nxt) for r in refs)
            best = max(Action, key=lambda a: (min_dist(a), -int(a)))
            assert mask[best] and mask.sum() == 1

    def test_uses_committed_next_positions(self):
        positions = np.array([[500.0, 500.0], [560.0, 500.0]])
        committed = {1: np.array([440.0, 500.0])}  # neighbor will be due WEST next step
        mask, _ = safety.fallback(np.zeros(4, bool), 0, positions, committed, STEP, *AREA)
        assert list(np.nonzero(mask)[0]) == [Action.RIGHT]


def random_legal(rng, mask):
    return Action(int(rng.choice(np.flatnonzero(mask))))


def spawn_separated(rng, m, area, min_d):
    while True:
        pts = rng.uniform([30.0, 30.0], [area[0] - 30.0, area[1] - 30.0], size=(m, 2))
        d = [np.linalg.norm(pts[i] - pts[j]) for i in range(m) for j in range(i + 1, m)]
        if not d or min(d) >= min_d:
            return pts


class TestSafetyRollouts:
    """Inductive safety of the mask protocols under random legal play."""

    AREA = (350.0, 170.0)

    def run_flat(self, rng, m, steps):
        pos = spawn_separated(rng, m, self.AREA, D_TH)
        violations = fallback_steps = collisions = 0
        for _ in range(steps):
            masks = safety.flat_masks(pos, D_TH, V, DT, *self.AREA)
            fired_any = False
            actions = []
            for u in range(m):
                mask, fired = safety.fallback(masks[u], u, pos, {}, STEP, *self.AREA)
                fired_any |= fired
                actions.append(random_legal(rng, mask))
            pos = pos + np.stack([ACTION_VECTORS[a] * STEP for a in actions])
            dmin = min(np.linalg.norm(pos[i] - pos[j])
                       for i in range(m) for j in range(i + 1, m))
            collisions += dmin < 1.0
            if fired_any:
                fallback_steps += 1
            elif dmin < D_TH:
                violations += 1
        return violations, collisions, fallback_steps

    def run_rank(self, rng, m, steps):
        pos = spawn_separated(rng, m, self.AREA, D_TH)
        violations = fallback_steps = collisions = 0
        for _ in range(steps):
            scores = [np.array([rng.uniform(0, 10)]) for _ in range(m)]
            ranks = safety.rank_scores(scores)
            committed, committed_next = {}, {}
            fired_any = False
            for u in map(int, ranks.order):
                mask = safety.rank_mask_for(u, pos, ranks, committed, D_TH, V, DT, *self.AREA)
                mask, fired = safety.fallback(mask, u, pos, committed_next, STEP, *self.AREA)
                fired_any |= fired
                a = random_legal(rng, mask)
                committed[u] = a
                committed_next[u] = pos[u] + ACTION_VECTORS[a] * STEP
            pos = np.stack([committed_next[u] for u in range(m)])
            dmin = min(np.linalg.norm(pos[i] - pos[j])
                       for i in range(m) for j in range(i + 1, m))
            collisions += dmin < 1.0
            if fired_any:
                fallback_steps += 1
            elif dmin < D_TH:
                violations += 1
        return violations, collisions, fallback_steps

    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_flat_rollouts_never_violate(self, m):
        rng = np.random.default_rng(100 + m)
        violations, collisions, _ = self.run_flat(rng, m, steps=3400)
        assert violations == 0
        assert collisions == 0

    @pytest.mark.parametrize("m", [2, 3, 4])
    def test_rank_rollouts_never_violate(self, m):
        rng = np.random.default_rng(200 + m)
        violations, collisions, _ = self.run_rank(rng, m, steps=3400)
        assert violations == 0
        assert collisions == 0
