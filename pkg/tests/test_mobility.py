import numpy as np
import pytest

from uabsim.config import SimConfig
from uabsim.errors import ConfigError, TraceBoundsError, TraceCoverageError, TraceParseError
from uabsim.mobility import (
    GueTrace,
    generate_manhattan_traces,
    gue_positions_at,
    load_traces,
    save_traces,
)


def small_config(**kw):
    base = dict(num_gues=8, episode_len=40, area_width_m=200.0, area_height_m=150.0,
                block_size_m=50.0, num_train_episodes=0)
    base.update(kw)
    return SimConfig(**base)


def on_street(value, block, tol=1e-6):
    r = value % block
    return min(r, block - r) < tol


class TestGenerator:
    def test_deterministic_given_seed(self):
        cfg = small_config(num_gues=80, episode_len=80)
        a = generate_manhattan_traces(cfg, rng=np.random.default_rng(7))
        b = generate_manhattan_traces(cfg, rng=np.random.default_rng(7))
        assert len(a) == len(b) == 80
        for ta, tb in zip(a, b):
            np.testing.assert_array_equal(ta.positions, tb.positions)

    def test_zero_speed_rejected(self):
        with pytest.raises(ConfigError):
            generate_manhattan_traces(small_config(), vehicle_speed=0.0,
                                      rng=np.random.default_rng(0))

    def test_block_too_large_rejected(self):
        with pytest.raises(ConfigError):
            generate_manhattan_traces(small_config(), block_size=120.0,
                                      rng=np.random.default_rng(0))

    def test_every_point_on_a_street_line(self):
        # Brute-force scan of every generated point against the street grid.
        cfg = small_config(num_gues=20)
        traces = generate_manhattan_traces(cfg, rng=np.random.default_rng(3))
        for tr in traces:
            for x, y in tr.positions:
                assert on_street(x, cfg.block_size_m) or on_street(y, cfg.block_size_m), (x, y)

    def test_points_inside_area(self):
        cfg = small_config(num_gues=20)
        for tr in generate_manhattan_traces(cfg, rng=np.random.default_rng(11)):
            assert np.all(tr.positions[:, 0] >= -1e-9)
            assert np.all(tr.positions[:, 0] <= cfg.area_width_m + 1e-9)
            assert np.all(tr.positions[:, 1] >= -1e-9)
            assert np.all(tr.positions[:, 1] <= cfg.area_height_m + 1e-9)

    def test_step_displacement_full_except_turns_and_walls(self):
        cfg = small_config(num_gues=20)
        step = cfg.vehicle_speed_mps * cfg.timestep_s
        traces = generate_manhattan_traces(cfg, rng=np.random.default_rng(5))
        short_steps = 0
        for tr in traces:
            d = np.linalg.norm(np.diff(tr.positions, axis=0), axis=1)
            assert np.all(d <= step + 1e-9)
            for k in np.nonzero(d < step - 1e-9)[0]:
                x, y = tr.positions[k + 1]
                at_intersection = on_street(x, cfg.block_size_m) and on_street(y, cfg.block_size_m)
                at_wall = (min(x, cfg.area_width_m - x) < 1e-6
                           or min(y, cfg.area_height_m - y) < 1e-6)
                assert at_intersection or at_wall, (x, y, d[k])
                short_steps += 1
        assert short_steps > 0  # turns do happen at this scale

    def test_trace_length_covers_episode(self):
        cfg = small_config(episode_len=25)
        traces = generate_manhattan_traces(cfg, rng=np.random.default_rng(1))
        assert all(len(t) == 26 for t in traces)


class TestTraceFile:
    def test_roundtrip(self, tmp_path):
        cfg = small_config()
        traces = generate_manhattan_traces(cfg, rng=np.random.default_rng(2))
        path = tmp_path / "traces.csv"
        save_traces(traces, path)
        loaded = load_traces(path, cfg)
        assert len(loaded) == len(traces)
        for a, b in zip(traces, loaded):
            assert a.gue_id == b.gue_id
            np.testing.assert_allclose(a.positions, b.positions, atol=1e-5)

    def test_save_is_byte_stable(self, tmp_path):
        cfg = small_config()
        one, two = tmp_path / "a.csv", tmp_path / "b.csv"
        save_traces(generate_manhattan_traces(cfg, rng=np.random.default_rng(7)), one)
        save_traces(generate_manhattan_traces(cfg, rng=np.random.default_rng(7)), two)
        assert one.read_bytes() == two.read_bytes()

    def test_minimal_well_formed_file(self, tmp_path):
        cfg = small_config(num_gues=2, episode_len=80)
        path = tmp_path / "two.csv"
        rows = ["t,gue_id,x,y"]
        for gue in (0, 1):
            for t in range(81):
                rows.append(f"{t},{gue},{50 + gue}.0,50.0")
        path.write_text("\n".join(rows) + "\n")
        traces = load_traces(path, cfg)
        assert len(traces) == 2
        assert all(len(t) == 81 for t in traces)

    def test_out_of_area_point_rejected_with_line(self, tmp_path):
        cfg = small_config(area_width_m=350.0, area_height_m=170.0,
                           episode_len=5, window_len=5)
        path = tmp_path / "oob.csv"
        lines = ["t,gue_id,x,y"] + [f"{t},3,10.0,50.0" for t in range(5)]
        lines.append("5,3,400,50")
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(TraceBoundsError) as err:
            load_traces(path, cfg)
        assert err.value.line_no == 7

    def test_empty_file_is_coverage_error(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("t,gue_id,x,y\n")
        with pytest.raises(TraceCoverageError, match="0 traces"):
            load_traces(path, small_config())

    def test_short_trace_is_coverage_error(self, tmp_path):
        cfg = small_config(episode_len=40)
        path = tmp_path / "short.csv"
        lines = ["t,gue_id,x,y"] + [f"{t},0,50.0,50.0" for t in range(10)]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(TraceCoverageError, match="gue 0"):
            load_traces(path, cfg)

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,gue_id,x,y\n0,0,1.0,1.0\nnot,a,valid,row\n")
        with pytest.raises(TraceParseError) as err:
            load_traces(path, small_config())
        assert err.value.line_no == 3

    def test_too_fast_jump_rejected(self, tmp_path):
        cfg = small_config(episode_len=2, window_len=2, sat_threshold=1,
                           max_vehicle_speed_mps=15.0)
        path = tmp_path / "fast.csv"
        path.write_text("t,gue_id,x,y\n0,0,0.0,0.0\n1,0,100.0,0.0\n2,0,100.0,0.0\n")
        with pytest.raises(TraceBoundsError):
            load_traces(path, cfg)


class TestPositionsAt:
    def make(self):
        pos = np.column_stack([np.linspace(0, 40, 5), np.full(5, 7.0)])
        return [GueTrace(0, pos), GueTrace(1, pos[::-1].copy())]

    def test_first_and_last(self):
        traces = self.make()
        first = gue_positions_at(traces, 0)
        assert (first[0].x, first[0].y) == (0.0, 7.0)
        last = gue_positions_at(traces, 4)
        assert (last[0].x, last[1].x) == (40.0, 0.0)

    def test_constant_trace_identity(self):
        tr = GueTrace(0, np.tile([12.0, 34.0], (6, 1)))
        for t in range(6):
            p = gue_positions_at([tr], t)[0]
            assert (p.x, p.y) == (12.0, 34.0)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            gue_positions_at(self.make(), 5)
        with pytest.raises(IndexError):
            gue_positions_at(self.make(), -1)
