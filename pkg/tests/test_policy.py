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

from depolab import autodiff as ad
from depolab.config import PolicyDims, RunConfig
from depolab.constants import CANVAS_START, CANVAS_END, ANSWER, EOS, \
    KIND_TOKEN, KIND_LATENT
from depolab.namespace import get_stream
from depolab.policy import PolicyError, PolicyParams, HybridStep, \
    Trajectory, logits, latent_step, token_logprobs, unified_logprob, \
    encode_prompt, generate_trajectory, replay_states, replay_logprobs
from depolab.tasks import Episode, LatentRetrieval, ParityMemory
from depolab.vmf import VmfParams

DIMS = PolicyDims(vocab_size=24, hidden_dim=6, input_dim=5, obs_dim=4)


def _config(**values):
    settings = dict(hidden_dim=6, input_dim=5, obs_dim=4, max_length=20,
                    canvas_budget=3)
    settings.update(values)
    config = RunConfig(**settings)
    config.validate()
    return config


def _params(seed=0):
    return PolicyParams.initialize(DIMS, np.random.default_rng(seed))


def _task():
    return LatentRetrieval(pairs=2, obs_dim=4, hidden_dim=6, canvas_length=3,
                           rng=np.random.default_rng(1))


class PolicyParamsTestCase(unittest.TestCase):
    """Test the weights of the policy."""

    def test_initialize(self):
        """Initialize the weights."""
        params = _params()
        shapes = {name: t.shape for name, t in params.items()}

        self.assertEqual(shapes, {
            "E": (24, 5),
            "W_h": (6, 6),
            "W_x": (6, 5),
            "b_h": (6, ),
            "W_m": (24, 6),
            "b_m": (24, ),
            "W_o": (5, 4),
        })
        self.assertEqual([n for n, _ in params.items()],
                         list(PolicyParams.NAMES))
        self.assertEqual(params.dims, DIMS)
        self.assertTrue(params["E"].requires_grad)
        np.testing.assert_array_equal(params["b_h"].values, np.zeros(6))
        np.testing.assert_array_equal(params.adapter.values, np.eye(5, 6))
        self.assertFalse(params.adapter.requires_grad)

    def test_reproducible(self):
        """Initialize the same weights from the same stream."""
        self.assertEqual(_params(3).fingerprint(), _params(3).fingerprint())
        self.assertNotEqual(_params(3).fingerprint(),
                            _params(4).fingerprint())

    def test_invalid_arrays(self):
        """Reject inconsistent arrays."""
        arrays = dict(_params().arrays())
        del arrays["W_o"]

        with self.assertRaises(PolicyError):
            PolicyParams(arrays)

        arrays = dict(_params().arrays())
        arrays["extra"] = np.zeros(1)

        with self.assertRaises(PolicyError):
            PolicyParams(arrays)

        arrays = dict(_params().arrays())
        arrays["b_m"] = np.zeros(23)

        with self.assertRaises(PolicyError):
            PolicyParams(arrays)

    def test_copy(self):
        """Copy the weights."""
        params = _params()
        copy = params.copy()

        self.assertFalse(copy["E"].requires_grad)
        self.assertTrue(params.copy(requires_grad=True)["E"].requires_grad)
        self.assertEqual(copy.fingerprint(), params.fingerprint())

        copy["E"].values[0, 0] += 1.0
        self.assertNotEqual(copy.fingerprint(), params.fingerprint())

    def test_flat_vector(self):
        """Flatten and assign the weights."""
        params = _params()
        flat = params.flatten()
        size = sum(t.size for _, t in params.items())
        self.assertEqual(flat.shape, (size, ))

        zeros = PolicyParams.zeros(DIMS)
        zeros.assign_flat(flat)
        self.assertEqual(zeros.fingerprint(), params.fingerprint())

    def test_grads(self):
        """Get gradients of the weights."""
        params = _params()
        grads = params.grads()
        self.assertEqual(set(grads), set(PolicyParams.NAMES))
        np.testing.assert_array_equal(grads["W_h"], np.zeros((6, 6)))

        with ad.Graph() as graph:
            root = ad.total(params["b_m"])

        graph.backward(root)
        np.testing.assert_array_equal(params.grads()["b_m"], np.ones(24))

        params.zero_grad()
        self.assertIsNone(params["b_m"].grad)

    def test_check_dims(self):
        """Check the dimensions."""
        params = _params()
        params.check_dims(DIMS)
        params.check_dims(_config())

        with self.assertRaises(PolicyError):
            params.check_dims(PolicyDims(hidden_dim=7, input_dim=5,
                                         obs_dim=4))


class TrajectoryTestCase(unittest.TestCase):
    """Test the steps and trajectories."""

    def _trajectory(self, kinds):
        steps = []

        for kind in kinds:
            if kind == "z":
                steps.append(HybridStep.latent(len(steps), np.zeros(2)))
            else:
                steps.append(HybridStep.token(len(steps), kind, -1.0))

        return Trajectory(7, steps)

    def test_steps(self):
        """Create steps."""
        step = HybridStep.token(0, 5, -0.5)
        self.assertEqual(step.kind, KIND_TOKEN)
        self.assertEqual(step.token_id, 5)
        self.assertEqual(step.old_logprob, -0.5)
        self.assertFalse(step.is_latent)
        self.assertEqual(repr(step), "HybridStep(TOKEN, 0, 5)")
        self.assertEqual(repr(HybridStep.token(2, EOS)),
                         "HybridStep(TOKEN, 2, <eos>)")

        step = HybridStep.latent(3, [1.0, 2.0])
        self.assertEqual(step.kind, KIND_LATENT)
        self.assertTrue(step.is_latent)
        self.assertIsNone(step.token_id)
        np.testing.assert_array_equal(step.z_tilde, [1.0, 2.0])
        self.assertEqual(repr(step), "HybridStep(LATENT, 3)")

    def test_invalid_steps(self):
        """Reject invalid steps."""
        with self.assertRaises(PolicyError):
            HybridStep("OTHER", 0)

        with self.assertRaises(PolicyError):
            HybridStep(KIND_TOKEN, 0)

        with self.assertRaises(PolicyError):
            HybridStep(KIND_LATENT, 0, token_id=3, z_tilde=[1.0])

        with self.assertRaises(PolicyError):
            HybridStep(KIND_LATENT, 0, old_logprob=-1.0, z_tilde=[1.0])

    def test_positions(self):
        """Partition the positions by kinds."""
        trajectory = self._trajectory(
            [3, CANVAS_START, "z", "z", CANVAS_END, ANSWER, 4, EOS]
        )
        self.assertEqual(len(trajectory), 8)
        self.assertEqual(trajectory.text_positions, [0, 1, 4, 5, 6, 7])
        self.assertEqual(trajectory.latent_positions, [2, 3])
        self.assertEqual(trajectory.tokens,
                         [3, CANVAS_START, CANVAS_END, ANSWER, 4, EOS])
        self.assertIsNone(trajectory.reward)
        self.assertIsNone(trajectory.advantage)

    def test_canvas_lengths(self):
        """Count latent steps of canvases."""
        trajectory = self._trajectory([
            CANVAS_START, "z", CANVAS_END, CANVAS_START, CANVAS_END,
            CANVAS_START, "z", "z", "z", CANVAS_END, EOS
        ])
        self.assertEqual(trajectory.canvas_lengths(), [1, 0, 3])
        trajectory.check(3)

        with self.assertRaises(PolicyError):
            trajectory.check(2)

    def test_invalid_structure(self):
        """Reject broken trajectories."""
        with self.assertRaises(PolicyError):
            self._trajectory(["z", EOS]).check(3)

        with self.assertRaises(PolicyError):
            self._trajectory([CANVAS_START, "z", EOS]).check(3)

        with self.assertRaises(PolicyError):
            self._trajectory([3, CANVAS_START, "z"]).check(3)

        with self.assertRaises(PolicyError):
            self._trajectory([CANVAS_START]).check(3)

        trajectory = self._trajectory([3, 4])
        trajectory.steps.reverse()

        with self.assertRaises(PolicyError):
            trajectory.check(3)


class PolicyForwardTestCase(unittest.TestCase):
    """Test the forward computations of the policy."""

    def test_token_logprobs(self):
        """Normalize the token distribution."""
        params = _params()
        h = ad.Tensor(np.random.default_rng(0).standard_normal(6))
        logprobs = token_logprobs(h, params).values

        self.assertEqual(logprobs.shape, (24, ))
        self.assertAlmostEqual(float(np.sum(np.exp(logprobs))), 1.0)

        step = HybridStep.token(0, 5)
        vmf = VmfParams(6, 1.0)
        self.assertEqual(
            unified_logprob(step, h, params, vmf, True).item(),
            ad.log_softmax_select(logits(h, params), 5).item()
        )

    def test_latent_logprob(self):
        """Score a latent action by the vMF density."""
        params = _params()
        h = ad.Tensor([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        vmf = VmfParams(6, 2.0)

        step = HybridStep.latent(0, [0.0, 3.0, 0.0, 0.0, 0.0, 0.0])
        self.assertAlmostEqual(
            unified_logprob(step, h, params, vmf, False).item(),
            vmf.log_normalizer
        )

        step = HybridStep.latent(0, [2.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        self.assertAlmostEqual(
            unified_logprob(step, h, params, vmf, True).item(),
            vmf.log_normalizer + 4.0
        )

        with self.assertRaises(PolicyError):
            unified_logprob(None, h, params, vmf, True)

    def test_latent_step(self):
        """Feed the state back through the core."""
        params = _params()
        rng = np.random.default_rng(4)

        for _ in range(5):
            h = ad.Tensor(rng.uniform(-0.9, 0.9, 6))
            once = latent_step(h, params)
            twice = latent_step(once, params)

            self.assertTrue(np.all(np.abs(once.values) < 1))
            self.assertGreater(np.max(np.abs(twice.values - once.values)),
                               1e-6)
            self.assertGreater(np.max(np.abs(once.values - h.values)), 1e-6)

    def test_encode_prompt(self):
        """Encode observations and prompt tokens."""
        params = _params()
        episode = Episode([np.ones(4)], [1, 0], gold_answer=1, task_id="t")
        h = encode_prompt(params, episode)
        self.assertEqual(h.shape, (6, ))
        self.assertTrue(np.all(np.abs(h.values) < 1))

        episode = Episode([np.ones(3)], [], gold_answer=1, task_id="t")

        with self.assertRaises(PolicyError):
            encode_prompt(params, episode)


class GenerationTestCase(unittest.TestCase):
    """Test the generation and the replay of trajectories."""

    def setUp(self):
        self.params = _params()
        self.task = _task()
        self.episode = self.task.sample_episode(np.random.default_rng(2))

    def _generate(self, seed, relaxed=True, prefix=(), **values):
        return generate_trajectory(
            self.params, self.episode, _config(**values),
            get_stream(seed, "generate"), relaxed=relaxed, prefix=prefix
        )

    def test_deterministic(self):
        """Generate the same trajectory from the same stream."""
        for seed in range(5):
            a = self._generate(seed)
            b = self._generate(seed)

            self.assertEqual(a.tokens, b.tokens)
            self.assertEqual(a.latent_positions, b.latent_positions)
            self.assertEqual([s.old_logprob for s in a.steps],
                             [s.old_logprob for s in b.steps])

    def test_structure(self):
        """Respect the budget and the maximal length."""
        for seed in range(20):
            trajectory = self._generate(seed, temperature=1.5)
            trajectory.check(3)
            self.assertLessEqual(len(trajectory), 20)
            self.assertGreater(len(trajectory), 0)

            if EOS in trajectory.tokens:
                self.assertEqual(trajectory.tokens[-1], EOS)

    def test_greedy(self):
        """Ignore the stream in greedy decoding."""
        a = self._generate(1, temperature=0.0)
        b = self._generate(2, temperature=0.0)
        self.assertEqual(a.tokens, b.tokens)

    def test_forced_exits(self):
        """Close canvases by the budget."""
        trajectory = self._generate(
            0, prefix=(CANVAS_START, ), canvas_exit_threshold=1.0
        )
        self.assertEqual(trajectory.tokens[0], CANVAS_START)
        self.assertEqual(trajectory.canvas_lengths()[0], 3)
        self.assertEqual(trajectory.steps[4].token_id, CANVAS_END)
        lengths = trajectory.canvas_lengths()
        self.assertEqual(trajectory.forced_exits,
                         len([n for n in lengths if n > 0]))

    def test_zero_budget(self):
        """Close canvases at once without a budget."""
        trajectory = self._generate(0, prefix=(CANVAS_START, ),
                                    canvas_budget=0)
        self.assertEqual(trajectory.tokens[:2], [CANVAS_START, CANVAS_END])
        self.assertEqual(trajectory.latent_positions, [])
        self.assertEqual(trajectory.forced_exits, 0)

    def test_no_canvas_at_last_position(self):
        """Never open a canvas that could not be closed."""
        params = _params()
        params["b_m"].values[CANVAS_START] = 50.0
        trajectory = generate_trajectory(
            params, self.episode,
            _config(max_length=5, canvas_budget=0, temperature=0.0),
            get_stream(0, "generate")
        )
        self.assertEqual(len(trajectory), 5)
        self.assertEqual(trajectory.tokens[:4],
                         [CANVAS_START, CANVAS_END, CANVAS_START, CANVAS_END])
        self.assertNotEqual(trajectory.tokens[-1], CANVAS_START)
        trajectory.check(0)

    def test_no_forced_canvas_at_last_position(self):
        """Stop before a forced canvas at the last position."""
        trajectory = self._generate(0, prefix=(3, CANVAS_START),
                                    max_length=2)
        self.assertEqual(trajectory.tokens, [3])
        trajectory.check(3)

    def test_recorded_logprobs(self):
        """Record untempered log-probabilities."""
        trajectory = self._generate(4, temperature=2.0)
        logprobs = replay_logprobs(self.params, self.episode, trajectory,
                                   VmfParams(6, 1.0), True)

        for step, logprob in zip(trajectory.steps, logprobs):
            if not step.is_latent:
                self.assertEqual(step.old_logprob, logprob.item())

    def test_replay(self):
        """Replay the generated states exactly."""
        for relaxed in (True, False):
            trajectory = self._generate(0, relaxed=relaxed,
                                        prefix=(CANVAS_START, ))
            states = replay_states(self.params, self.episode,
                                   trajectory.steps)
            self.assertEqual(len(states), len(trajectory))
            self.assertTrue(trajectory.latent_positions)

            for step, h in zip(trajectory.steps, states):
                if not step.is_latent:
                    continue

                if relaxed:
                    np.testing.assert_array_equal(step.z_tilde, h.values)
                else:
                    np.testing.assert_array_equal(
                        step.z_tilde, ad.normalize(h).values
                    )

    def test_prompt_tokens(self):
        """Generate on episodes with prompt tokens."""
        episode = ParityMemory(4).sample_episode(np.random.default_rng(0))
        trajectory = generate_trajectory(
            self.params, episode, _config(), np.random.default_rng(0)
        )
        trajectory.check(3)
