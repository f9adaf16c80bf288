#
# Copyright (C) 2026  The depolab developers.  All rights reserved.
#
# This library is free software; you can redistribute it and/or
# modify it under the terms of the GNU Lesser General Public
# License as published by the Free Software Foundation; either
# version 2.1 of the License, or (at your option) any later version.
#
# This library is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the GNU
# Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public
# License along with this library; if not, write to the Free Software
# Foundation, Inc., 51 Franklin Street, Fifth Floor, Boston, MA  02110-1301
# USA
#
import unittest

import numpy as np

from depolab.config import RunConfig
from depolab.constants import CANVAS_START, CANVAS_END, ANSWER, EOS, \
    TASK_PARITY_MEMORY
from depolab.policy import HybridStep, Trajectory
from depolab.tasks import TaskError, Episode, LatentRetrieval, \
    ParityMemory, create_task, sample_episode, check_format, score


def _steps(*items):
    """Create steps from tokens and "z" for latent steps."""
    steps = []

    for item in items:
        if item == "z":
            steps.append(HybridStep.latent(len(steps), np.ones(3)))
        else:
            steps.append(HybridStep.token(len(steps), item))

    return steps


class EpisodeTestCase(unittest.TestCase):
    """Test the episodes."""

    def test_episode(self):
        """Create an episode."""
        episode = Episode([[1, 2]], [3], gold_answer=4, task_id="t",
                          episode_id=9, target_latents=[[0.5, 0.5]])

        self.assertEqual(episode.observations[0].dtype, np.float64)
        self.assertEqual(episode.prompt_tokens, [3])
        self.assertEqual(episode.gold_answer, 4)
        self.assertEqual(episode.episode_id, 9)
        self.assertEqual(repr(episode), "Episode(task=t, id=9, answer=4)")

    def test_invalid_episode(self):
        """Reject invalid episodes."""
        with self.assertRaises(TaskError):
            Episode([], [], gold_answer=ANSWER, task_id="t")

        with self.assertRaises(TaskError):
            Episode([], [], gold_answer=1, task_id="t",
                    target_latents=[[np.nan, 0.0]])


class LatentRetrievalTestCase(unittest.TestCase):
    """Test the latent retrieval task."""

    def setUp(self):
        self.task = LatentRetrieval(
            pairs=3, obs_dim=4, hidden_dim=5, canvas_length=2,
            rng=np.random.default_rng(0)
        )

    def test_tables(self):
        """Create the fixed tables."""
        np.testing.assert_allclose(
            np.linalg.norm(self.task.value_table, axis=1), np.ones(16)
        )
        self.assertEqual(self.task.target_latent(3).shape, (5, ))
        self.assertTrue(self.task.has_targets)
        self.assertEqual(self.task.pairs, 3)

    def test_episode(self):
        """Sample an episode."""
        episode = self.task.sample_episode(np.random.default_rng(1), 5)

        self.assertEqual(len(episode.observations), 7)
        self.assertEqual(episode.prompt_tokens, [])
        self.assertEqual(episode.episode_id, 5)

        query = episode.observations[-1]
        keys = episode.observations[0:6:2]
        values = episode.observations[1:6:2]
        index = [np.array_equal(query, k) for k in keys].index(True)

        np.testing.assert_array_equal(
            values[index], self.task.value_table[episode.gold_answer]
        )
        self.assertEqual(len(episode.target_latents), 2)
        np.testing.assert_array_equal(
            episode.target_latents[0],
            self.task.target_latent(episode.gold_answer)
        )

    def test_gold_steps(self):
        """Create the gold trajectory."""
        episode = self.task.sample_episode(np.random.default_rng(2))
        steps = self.task.gold_steps(episode)
        trajectory = Trajectory(0, steps)

        self.assertEqual(
            trajectory.tokens,
            [CANVAS_START, CANVAS_END, ANSWER, episode.gold_answer, EOS]
        )
        self.assertEqual(trajectory.latent_positions, [1, 2])
        trajectory.check(2)
        self.assertTrue(check_format(steps))
        self.assertEqual(score(episode, trajectory, 0.1).accuracy, 1)

    def test_invalid_task(self):
        """Reject too many pairs."""
        with self.assertRaises(TaskError):
            LatentRetrieval(pairs=17, obs_dim=4, hidden_dim=5,
                            canvas_length=2, rng=np.random.default_rng(0))


class ParityMemoryTestCase(unittest.TestCase):
    """Test the parity memory task."""

    def test_episode(self):
        """Sample an episode."""
        task = ParityMemory(6)
        episode = sample_episode(task, np.random.default_rng(0), 2)

        self.assertEqual(len(episode.prompt_tokens), 6)
        self.assertTrue(set(episode.prompt_tokens) <= {0, 1})
        self.assertEqual(episode.gold_answer, sum(episode.prompt_tokens) % 2)
        self.assertEqual(episode.observations, [])
        self.assertIsNone(episode.target_latents)
        self.assertFalse(task.has_targets)

    def test_no_gold_steps(self):
        """Reject the gold trajectory without target latents."""
        task = ParityMemory(2)
        episode = task.sample_episode(np.random.default_rng(0))

        with self.assertRaises(TaskError):
            task.gold_steps(episode)

    def test_invalid_task(self):
        with self.assertRaises(TaskError):
            ParityMemory(0)


class CreateTaskTestCase(unittest.TestCase):
    """Test the creation of tasks."""

    def test_retrieval(self):
        """Create the same tables from the table seed."""
        config = RunConfig(hidden_dim=6, obs_dim=4, seed=1)
        a = create_task(config)
        config.seed = 2
        b = create_task(config)

        self.assertIsInstance(a, LatentRetrieval)
        np.testing.assert_array_equal(a.value_table, b.value_table)

        config.table_seed = 1
        c = create_task(config)
        self.assertFalse(np.array_equal(a.value_table, c.value_table))

    def test_parity(self):
        config = RunConfig(task=TASK_PARITY_MEMORY, parity_bits=5)
        task = create_task(config)
        self.assertIsInstance(task, ParityMemory)
        self.assertEqual(task.bits, 5)

    def test_unknown(self):
        with self.assertRaises(TaskError):
            create_task(RunConfig(task="unknown"))


class RewardTestCase(unittest.TestCase):
    """Test the format check and the reward."""

    def test_valid_format(self):
        """Accept alternating text and canvases."""
        valid = [
            _steps(CANVAS_START, "z", CANVAS_END, ANSWER, 3, EOS),
            _steps(1, 2, CANVAS_START, "z", "z", CANVAS_END, 4,
                   CANVAS_START, "z", CANVAS_END, ANSWER, 0, EOS),
        ]

        for steps in valid:
            self.assertTrue(check_format(steps))

    def test_invalid_format(self):
        """Reject broken patterns."""
        invalid = [
            _steps(),
            _steps(ANSWER, 3, EOS),
            _steps(CANVAS_START, CANVAS_END, ANSWER, 3, EOS),
            _steps(CANVAS_START, "z", ANSWER, 3, EOS),
            _steps(CANVAS_START, "z"),
            _steps(CANVAS_START, "z", CANVAS_END, ANSWER, 3),
            _steps(CANVAS_START, "z", CANVAS_END, ANSWER, 3, 4, EOS),
            _steps(CANVAS_START, "z", CANVAS_END, ANSWER, ANSWER, EOS),
            _steps(CANVAS_START, "z", CANVAS_END, ANSWER, 3, EOS, EOS),
            _steps(CANVAS_START, "z", CANVAS_END, EOS),
            _steps(CANVAS_END, CANVAS_START, "z", CANVAS_END, ANSWER, 3,
                   EOS),
        ]

        for steps in invalid:
            self.assertFalse(check_format(steps), steps)

    def test_score(self):
        """Score the accuracy and the format."""
        episode = Episode([], [], gold_answer=3, task_id="t")

        trajectory = Trajectory(0, _steps(
            CANVAS_START, "z", CANVAS_END, ANSWER, 3, EOS
        ))
        self.assertEqual(tuple(score(episode, trajectory, 0.1)),
                         (1, 1, 1.1))

        trajectory = Trajectory(0, _steps(ANSWER, 3, EOS))
        self.assertEqual(tuple(score(episode, trajectory, 0.1)),
                         (1, 0, 1.0))

        trajectory = Trajectory(0, _steps(
            CANVAS_START, "z", CANVAS_END, ANSWER, 4, EOS
        ))
        record = score(episode, trajectory, 0.5)
        self.assertEqual(record.accuracy, 0)
        self.assertEqual(record.format_ok, 1)
        self.assertEqual(record.total, 0.5)

        trajectory = Trajectory(0, _steps(1, 2))
        self.assertEqual(tuple(score(episode, trajectory, 0.1)),
                         (0, 0, 0.0))
