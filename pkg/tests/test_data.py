import numpy as np
import pytest

from crowdgp.data import (
    GoalSet,
    Scene,
    SynthConfig,
    Trajectory,
    build_training_set,
    compute_velocities,
    label_goal,
    load_goals,
    load_scene,
    save_goals,
    save_scene,
    synth_scene,
)
from crowdgp.errors import ParseError, ValidationError
from crowdgp.grid import GridConfig

from oracles import brute_occupancy


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadScene:
    def test_basic(self, tmp_path):
        path = write(tmp_path, "s.csv", "step,agent_id,x,y\n0,a,0,0\n1,a,2,0\n")
        scene = load_scene(path)
        assert len(scene) == 1
        traj = scene.agent("a")
        assert traj.start_step == 0
        np.testing.assert_array_equal(traj.positions, [[0, 0], [2, 0]])

    def test_empty_file(self, tmp_path):
        scene = load_scene(write(tmp_path, "s.csv", ""))
        assert len(scene) == 0

    def test_header_only(self, tmp_path):
        scene = load_scene(write(tmp_path, "s.csv", "step,agent_id,x,y\n"))
        assert len(scene) == 0

    def test_gap_rejected(self, tmp_path):
        path = write(tmp_path, "s.csv", "0,a,0,0\n2,a,1,0\n")
        with pytest.raises(ValidationError, match="gap in steps for agent a"):
            load_scene(path)

    def test_duplicate_rejected(self, tmp_path):
        path = write(tmp_path, "s.csv", "0,a,0,0\n0,a,1,0\n")
        with pytest.raises(ParseError, match="line 2"):
            load_scene(path)

    def test_malformed_row_names_line(self, tmp_path):
        path = write(tmp_path, "s.csv", "0,a,0,0\n1,a,oops,0\n")
        with pytest.raises(ParseError, match="line 2"):
            load_scene(path)

    def test_non_finite_rejected(self, tmp_path):
        path = write(tmp_path, "s.csv", "0,a,nan,0\n")
        with pytest.raises(ParseError):
            load_scene(path)

    def test_unsorted_rows_ok(self, tmp_path):
        path = write(tmp_path, "s.csv", "1,a,2,0\n0,a,0,0\n")
        traj = load_scene(path).agent("a")
        np.testing.assert_array_equal(traj.positions, [[0, 0], [2, 0]])

    def test_roundtrip(self, tmp_path):
        scene = synth_scene(
            SynthConfig(3, 5, GoalSet(np.array([[10.0, 0.0], [0.0, 10.0]])), speed=1.0, dt=0.5),
            seed=4,
        )
        path = tmp_path / "round.csv"
        save_scene(scene, path)
        back = load_scene(path, 0.5)
        assert back.agent_ids == scene.agent_ids
        for a, b in zip(scene.trajectories, back.trajectories):
            np.testing.assert_array_equal(a.positions, b.positions)


class TestGoalsFile:
    def test_roundtrip(self, tmp_path):
        goals = GoalSet(np.array([[1.5, -2.0], [3.0, 4.0]]))
        path = tmp_path / "g.csv"
        save_goals(goals, path)
        back = load_goals(path)
        np.testing.assert_array_equal(goals.positions, back.positions)

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            load_goals(write(tmp_path, "g.csv", "x,y\n"))

    def test_duplicate_goals_rejected(self):
        with pytest.raises(ValidationError):
            GoalSet(np.array([[1.0, 2.0], [1.0, 2.0]]))


class TestComputeVelocities:
    def test_forward_difference(self):
        traj = Trajectory("a", 0, np.array([[0.0, 0.0], [2.0, 0.0]]))
        series = compute_velocities(traj, 0.4)
        np.testing.assert_allclose(series.velocities, [[5.0, 0.0]])
        np.testing.assert_array_equal(series.aligned_steps, [0])

    def test_stationary(self):
        traj = Trajectory("a", 0, np.zeros((3, 2)))
        series = compute_velocities(traj, 1.0)
        np.testing.assert_array_equal(series.velocities, np.zeros((2, 2)))

    def test_hand_computed(self):
        traj = Trajectory("a", 0, np.array([[1.0, 1.0], [2.0, 3.0], [4.0, 3.0]]))
        series = compute_velocities(traj, 1.0)
        np.testing.assert_array_equal(series.velocities, [[1.0, 2.0], [2.0, 0.0]])

    def test_too_short(self):
        with pytest.raises(ValidationError, match="too short for velocity"):
            compute_velocities(Trajectory("a", 0, np.array([[0.0, 0.0]])), 1.0)

    def test_integration_roundtrip(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = int(rng.integers(2, 60))
            dt = float(rng.uniform(0.1, 2.0))
            positions = rng.uniform(-100, 100, (n, 2))
            traj = Trajectory("a", 0, positions)
            series = compute_velocities(traj, dt)
            rebuilt = positions[0] + np.vstack(
                [np.zeros(2), np.cumsum(series.velocities * dt, axis=0)]
            )
            np.testing.assert_allclose(rebuilt, positions, atol=1e-9)


class TestLabelGoal:
    GOALS = GoalSet(np.array([[0.0, 0.0], [100.0, 0.0]]))

    def test_nearest(self):
        traj = Trajectory("a", 0, np.array([[0.0, 0.0], [90.0, 5.0]]))
        assert label_goal(traj, self.GOALS) == 1

    def test_single_goal(self):
        traj = Trajectory("a", 0, np.array([[37.0, -4.0]]))
        assert label_goal(traj, GoalSet(np.array([[0.0, 0.0]]))) == 0

    def test_tie_lowest_index(self):
        goals = GoalSet(np.array([[0.0, 0.0], [10.0, 0.0]]))
        traj = Trajectory("a", 0, np.array([[5.0, 0.0]]))
        assert label_goal(traj, goals) == 0

    def test_translation_invariance(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            goals = rng.uniform(-50, 50, (4, 2))
            final = rng.uniform(-50, 50, 2)
            traj = Trajectory("a", 0, final[None, :])
            base = label_goal(traj, GoalSet(goals))
            shift = rng.uniform(-1000, 1000, 2)
            moved = label_goal(
                Trajectory("a", 0, (final + shift)[None, :]), GoalSet(goals + shift)
            )
            assert base == moved


class TestBuildTrainingSet:
    CFG = GridConfig(4, 80.0)

    def test_lone_agent(self):
        scene = Scene(
            (Trajectory("a", 0, np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])),), 1.0
        )
        training = build_training_set(scene, GoalSet(np.array([[10.0, 0.0]])), self.CFG)
        assert training.pair_counts == [2]
        assert np.all(training.bags[0].grids == 0)

    def test_two_colocated_agents(self):
        pos = np.array([[5.0, 5.0], [5.0, 5.0]])
        scene = Scene(
            (Trajectory("a", 0, pos.copy()), Trajectory("b", 0, pos.copy())), 1.0
        )
        training = build_training_set(scene, GoalSet(np.array([[5.0, 5.0]])), self.CFG)
        assert training.pair_counts == [2]
        for grid in training.bags[0].grids:
            np.testing.assert_array_equal(
                grid, brute_occupancy((5.0, 5.0), [(5.0, 5.0)], 4, 80.0)
            )
            assert grid.sum() == 1.0
            assert np.count_nonzero(grid) == 1

    def test_empty_scene(self):
        training = build_training_set(
            Scene((), 1.0), GoalSet(np.array([[0.0, 0.0], [1.0, 1.0]])), self.CFG
        )
        assert training.pair_counts == [0, 0]

    def test_pair_count_identity(self):
        goals = GoalSet(np.array([[30.0, 0.0], [0.0, 30.0]]))
        scene = synth_scene(
            SynthConfig(6, 9, goals, speed=2.0, repulsion=1.0, dt=0.5, noise=0.2), seed=5
        )
        # splice in a single-point agent: contributes nothing but its presence
        extra = Trajectory("z", 3, np.array([[1.0, 1.0]]))
        scene = Scene(scene.trajectories + (extra,), 0.5)
        training = build_training_set(scene, goals, self.CFG)
        expected = sum(max(len(t) - 1, 0) for t in scene.trajectories)
        assert sum(training.pair_counts) == expected

    def test_xy_bags_share_size(self):
        goals = GoalSet(np.array([[30.0, 0.0], [0.0, 30.0]]))
        scene = synth_scene(SynthConfig(6, 9, goals, speed=2.0, dt=0.5), seed=6)
        training = build_training_set(scene, goals, self.CFG)
        for g in range(2):
            grids_x, vx = training.x_bag(g)
            grids_y, vy = training.y_bag(g)
            assert grids_x.shape[0] == vx.shape[0] == vy.shape[0]
            assert grids_x is grids_y


class TestSynthScene:
    GOALS = GoalSet(np.array([[10.0, 0.0], [0.0, 10.0]]))

    def test_straight_line(self):
        cfg = SynthConfig(
            1,
            5,
            GoalSet(np.array([[10.0, 0.0]])),
            speed=1.0,
            repulsion=0.0,
            dt=1.0,
            starts=np.array([[0.0, 0.0]]),
            assignments=(0,),
        )
        scene = synth_scene(cfg, seed=0)
        expected = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]])
        np.testing.assert_allclose(scene.agent("a0").positions, expected)

    def test_deterministic(self):
        cfg = SynthConfig(5, 12, self.GOALS, speed=1.5, repulsion=2.0, dt=0.4, noise=0.3)
        a = synth_scene(cfg, seed=77)
        b = synth_scene(cfg, seed=77)
        for ta, tb in zip(a.trajectories, b.trajectories):
            np.testing.assert_array_equal(ta.positions, tb.positions)

    def test_seed_changes_scene(self):
        cfg = SynthConfig(5, 12, self.GOALS, speed=1.5, dt=0.4)
        a = synth_scene(cfg, seed=1)
        b = synth_scene(cfg, seed=2)
        assert not np.array_equal(a.trajectories[0].positions, b.trajectories[0].positions)

    def test_repulsion_increases_clearance(self):
        goals = GoalSet(np.array([[6.0, 0.0], [-6.0, 0.0]]))
        starts = np.array([[-6.0, 0.0], [6.0, 0.0]])

        def min_distance(repulsion):
            cfg = SynthConfig(
                2, 15, goals, speed=1.0, repulsion=repulsion, dt=1.0,
                starts=starts, assignments=(0, 1),
            )
            scene = synth_scene(cfg, seed=0)
            p0 = scene.agent("a0").positions
            p1 = scene.agent("a1").positions
            return float(np.min(np.linalg.norm(p0 - p1, axis=1)))

        assert min_distance(2.0) > min_distance(0.0)

    def test_agents_stop_at_goal(self):
        cfg = SynthConfig(
            1,
            30,
            GoalSet(np.array([[5.0, 0.0]])),
            speed=1.0,
            repulsion=0.0,
            dt=1.0,
            starts=np.array([[0.0, 0.0]]),
            assignments=(0,),
        )
        scene = synth_scene(cfg, seed=0)
        final = scene.agent("a0").positions[-1]
        assert np.linalg.norm(final - [5.0, 0.0]) <= 1.0  # within one step length
        # once stopped, stays stopped
        tail = scene.agent("a0").positions[-5:]
        assert np.all(tail == tail[0])

    @pytest.mark.parametrize("agents,steps", [(0, 5), (3, 0)])
    def test_invalid_config(self, agents, steps):
        with pytest.raises(ValidationError):
            SynthConfig(agents, steps, self.GOALS)


class TestSceneInvariants:
    def test_duplicate_agent_ids_rejected(self):
        t = Trajectory("a", 0, np.array([[0.0, 0.0]]))
        with pytest.raises(ValidationError, match="duplicate"):
            Scene((t, Trajectory("a", 1, np.array([[1.0, 1.0]]))), 1.0)

    def test_non_finite_positions_rejected(self):
        with pytest.raises(ValidationError):
            Trajectory("a", 0, np.array([[0.0, np.inf]]))

    def test_bad_dt_rejected(self):
        with pytest.raises(ValidationError):
            Scene((), 0.0)
