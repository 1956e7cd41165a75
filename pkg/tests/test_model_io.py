import numpy as np
import pytest

from crowdgp.data import GoalSet, SynthConfig, build_training_set, synth_scene
from crowdgp.errors import NumericalError, SchemaError, ValidationError
from crowdgp.gp import GpFitConfig, Hyperparams
from crowdgp.grid import GridConfig
from crowdgp.model import GoalModel, load_model, save_model, train_goal_models


def tiny_model(rng=None, n_goals=2, m=3):
    rng = rng or np.random.default_rng(17)
    goals = GoalSet(rng.uniform(-10, 10, (n_goals, 2)))
    pairs = tuple(
        (
            Hyperparams(rng.normal(), rng.normal(size=m * m), rng.normal()),
            Hyperparams(rng.normal(), rng.normal(size=m * m), rng.normal()),
        )
        for _ in range(n_goals)
    )
    return GoalModel(GridConfig(m, 7.5), goals, pairs, 0.4, 123)


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "model.txt"
        save_model(model, path)
        back = load_model(path)
        assert back.grid_cfg == model.grid_cfg
        assert back.timestep_duration == model.timestep_duration
        assert back.seed == model.seed
        np.testing.assert_array_equal(back.goals.positions, model.goals.positions)
        for g in range(model.n_goals):
            for ax in range(2):
                a, b = model.hyperparams[g][ax], back.hyperparams[g][ax]
                assert a.log_signal == b.log_signal
                assert a.log_noise == b.log_noise
                np.testing.assert_array_equal(a.log_lengthscales, b.log_lengthscales)

    def test_save_is_reproducible(self, tmp_path):
        model = tiny_model()
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        save_model(model, p1)
        save_model(model, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_awkward_floats_survive(self, tmp_path):
        ls = np.array([1e-300, 1e300, np.pi, -0.1, 2.0 / 3.0, 5e-324, 0.0, 1.0, 7.7])
        hp = Hyperparams(0.1, np.log(np.maximum(ls, 1e-320)), -0.2)
        # direct formatting check on raw values, bypassing validation limits
        from crowdgp.model import _fmt

        for v in [np.pi, 2.0 / 3.0, 1e-300, 1e300, -1.2345678901234567e-5]:
            assert float(_fmt(v)) == v


class TestSchemaErrors:
    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("something-else\n", encoding="utf-8")
        with pytest.raises(SchemaError, match="not a crowdgp-model"):
            load_model(path)

    def test_truncated(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "m.txt"
        save_model(model, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:5]) + "\n", encoding="utf-8")
        with pytest.raises(SchemaError):
            load_model(path)

    def test_corrupt_field_named(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "m.txt"
        save_model(model, path)
        text = path.read_text().replace("grid_span", "grid_spam", 1)
        path.write_text(text, encoding="utf-8")
        with pytest.raises(SchemaError, match="grid_span"):
            load_model(path)

    def test_bad_float(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "m.txt"
        save_model(model, path)
        lines = path.read_text().splitlines()
        for i, line in enumerate(lines):
            if line.startswith("signal "):
                lines[i] = "signal notafloat"
                break
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(SchemaError, match="signal"):
            load_model(path)

    def test_wrong_lengthscale_count(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "m.txt"
        save_model(model, path)
        lines = path.read_text().splitlines()
        for i, line in enumerate(lines):
            if line.startswith("lengthscales "):
                lines[i] = "lengthscales 0.0 0.0"
                break
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(SchemaError, match="lengthscales"):
            load_model(path)


class TestTrainGoalModels:
    GOALS = GoalSet(np.array([[12.0, 0.0], [0.0, 12.0]]))

    def make_training(self, n_agents=8, steps=12):
        cfg = SynthConfig(
            n_agents, steps, self.GOALS, speed=2.0, repulsion=1.0, dt=0.4, noise=0.1
        )
        scene = synth_scene(cfg, seed=3)
        return build_training_set(scene, self.GOALS, GridConfig(4, 8.0)), scene

    def test_record_count_is_two_per_goal(self, tmp_path):
        training, scene = self.make_training()
        model, stats = train_goal_models(
            training, self.GOALS, GpFitConfig(max_iters=40, restarts=0, seed=0), 0.4
        )
        assert len(model.hyperparams) == 2
        assert len(stats) == 4
        path = tmp_path / "m.txt"
        save_model(model, path)
        text = path.read_text()
        assert text.count("record ") == 4

    def test_threaded_matches_serial(self):
        training, _ = self.make_training()
        cfg = GpFitConfig(max_iters=40, restarts=1, seed=5)
        serial, _ = train_goal_models(training, self.GOALS, cfg, 0.4, threads=1)
        threaded, _ = train_goal_models(training, self.GOALS, cfg, 0.4, threads=4)
        for g in range(2):
            for ax in range(2):
                np.testing.assert_array_equal(
                    serial.hyperparams[g][ax].to_vector(),
                    threaded.hyperparams[g][ax].to_vector(),
                )

    def test_empty_goal_bag_rejected(self):
        # every agent heads to goal 0, so goal 1's bag stays empty
        goals = GoalSet(np.array([[10.0, 0.0], [1000.0, 1000.0]]))
        cfg = SynthConfig(
            4, 8, goals, speed=2.0, dt=0.4, assignments=(0, 0, 0, 0),
            starts=np.array([[-10.0, 0.0], [-10.0, 2.0], [-10.0, -2.0], [-10.0, 4.0]]),
        )
        scene = synth_scene(cfg, seed=1)
        training = build_training_set(scene, goals, GridConfig(4, 8.0))
        with pytest.raises(ValidationError, match="goal 1.*merging"):
            train_goal_models(training, goals, GpFitConfig(max_iters=20), 0.4)

    def test_fit_failure_names_goal_and_axis(self, monkeypatch):
        training, _ = self.make_training()
        import crowdgp.model as model_mod

        def broken_fit(X, y, cfg):
            raise NumericalError("synthetic blowup")

        monkeypatch.setattr(model_mod, "fit", broken_fit)
        with pytest.raises(NumericalError, match="goal 0 axis x"):
            train_goal_models(training, self.GOALS, GpFitConfig(max_iters=10), 0.4)
