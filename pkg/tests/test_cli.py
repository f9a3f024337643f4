import tempfile
import unittest
from pathlib import Path

import pandas as pd

from rlcbf.cli import EXIT_CONFIG, EXIT_MISSING_FILE, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, episode_files, run

SMALL_RUN = """\
env: pendulum
mode: compensate
episodes: 2
seeds: [0, 1]
eval_episodes: 1
pendulum:
  horizon: 15
agent:
  hidden: [8]
  batch_size: 8
"""


class CliTests(unittest.TestCase):
    def test_missing_subcommand_is_a_usage_error(self):
        self.assertEqual(run([]), EXIT_USAGE)

    def test_bad_option_is_a_usage_error(self):
        self.assertEqual(run(["run", "--episodes", "many"]), EXIT_USAGE)

    def test_missing_config_file(self):
        self.assertEqual(run(["run", "--config", "/nonexistent/run.yaml"]), EXIT_MISSING_FILE)

    def test_invalid_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.yaml"
            path.write_text("barriers:\n  eta: 1.5\n", encoding="utf-8")
            self.assertEqual(run(["run", "--config", str(path)]), EXIT_CONFIG)

    def test_gradient_selftest_passes(self):
        self.assertEqual(run(["selftest", "--suite", "gradient"]), EXIT_OK)

    def test_run_audit_and_aggregate(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = Path(tmp) / "small.yaml"
            config.write_text(SMALL_RUN, encoding="utf-8")
            out = Path(tmp) / "out"
            self.assertEqual(run(["run", "--config", str(config), "--out", str(out), "--verbose"]), EXIT_OK)
            for seed in (0, 1):
                seed_dir = out / f"seed_{seed}"
                for name in ("episodes.csv", "steps_0.csv", "steps_1.csv", "actor.bin", "critic.bin", "evaluation.csv"):
                    self.assertTrue((seed_dir / name).is_file(), name)

            steps = out / "seed_0" / "steps_1.csv"
            self.assertEqual(run(["audit", str(steps), "--config", str(config)]), EXIT_OK)

            merged = Path(tmp) / "aggregate.csv"
            self.assertEqual(run(["aggregate", str(out), "--out", str(merged)]), EXIT_OK)
            frame = pd.read_csv(merged)
            self.assertEqual(len(frame), 2)
            self.assertEqual(frame["n_seeds"].tolist(), [2, 2])

    def test_audit_missing_steps_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = Path(tmp) / "small.yaml"
            config.write_text(SMALL_RUN, encoding="utf-8")
            self.assertEqual(run(["audit", str(Path(tmp) / "steps_9.csv"), "--config", str(config)]), EXIT_MISSING_FILE)

    def test_unreadable_inputs_are_runtime_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = Path(tmp) / "small.yaml"
            config.write_text(SMALL_RUN, encoding="utf-8")
            steps = Path(tmp) / "steps_0.csv"
            steps.write_bytes(b"episode,t\n0,1\n0,1,2,3\n")
            self.assertEqual(run(["audit", str(steps), "--config", str(config)]), EXIT_RUNTIME)
            (Path(tmp) / "seed_0").mkdir()
            (Path(tmp) / "seed_0" / "episodes.csv").write_bytes(b"")
            self.assertEqual(run(["aggregate", str(tmp), "--out", str(Path(tmp) / "merged.csv")]), EXIT_RUNTIME)

    def test_episode_files_from_directory(self):
        with tempfile.TemporaryDirectory() as tmp:
            for seed in (0, 1):
                (Path(tmp) / f"seed_{seed}").mkdir()
                (Path(tmp) / f"seed_{seed}" / "episodes.csv").write_text("episode\n", encoding="utf-8")
            files = episode_files([tmp])
        self.assertEqual([f.parent.name for f in files], ["seed_0", "seed_1"])

    def test_episode_files_missing_input(self):
        with self.assertRaises(FileNotFoundError):
            episode_files(["/nonexistent/episodes.csv"])


if __name__ == "__main__":
    unittest.main()
