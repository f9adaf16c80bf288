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
from depolab.constants import CANVAS_START, LATENT_GAUSSIAN
from depolab.losses import LossError, LossComponents, Replay, \
    surrogate_clip, gaussian_log_ratio, gaussian_kl, depo_policy_loss, \
    latent_kl_loss, token_kl_loss, total_loss, compute_rl_loss, \
    replay_batch, sft_loss
from depolab.namespace import get_stream
from depolab.policy import PolicyParams, generate_trajectory
from depolab.tasks import LatentRetrieval


def _config(**values):
    settings = dict(hidden_dim=6, input_dim=5, obs_dim=4, max_length=16,
                    canvas_budget=3, group_size=4, temperature=1.0,
                    kappa=1.0)
    settings.update(values)
    config = RunConfig(**settings)
    config.validate()
    return config


class SurrogateTestCase(unittest.TestCase):
    """Test the dual-clip surrogate."""

    def _loss(self, ratio, advantage):
        return surrogate_clip(ratio, advantage, 0.2, 0.28, 3.0).item()

    def test_positive_advantage(self):
        """Clip large ratios of good actions."""
        self.assertAlmostEqual(self._loss(1.0, 1.0), -1.0)
        self.assertAlmostEqual(self._loss(1.5, 1.0), -1.28)
        self.assertAlmostEqual(self._loss(0.5, 1.0), -0.5)
        self.assertAlmostEqual(self._loss(1.1, 2.0), -2.2)

    def test_negative_advantage(self):
        """Clip small ratios and floor large ratios of bad actions."""
        self.assertAlmostEqual(self._loss(0.5, -1.0), 0.8)
        self.assertAlmostEqual(self._loss(1.5, -1.0), 1.5)
        self.assertAlmostEqual(self._loss(5.0, -1.0), 3.0)
        self.assertAlmostEqual(self._loss(5.0, -2.0), 6.0)

    def test_zero_advantage(self):
        self.assertEqual(self._loss(1.7, 0.0), 0.0)

    def test_gradients(self):
        """Pass gradients only through the active branch."""
        cases = [
            (1.5, 1.0, 0.0),
            (1.1, 1.0, -1.0),
            (1.5, -1.0, 1.0),
            (5.0, -1.0, 0.0),
            (0.5, -1.0, 0.0),
        ]

        for ratio, advantage, expected in cases:
            r = ad.Tensor(ratio, requires_grad=True)

            with ad.Graph() as graph:
                loss = surrogate_clip(r, advantage, 0.2, 0.28, 3.0)

            if loss.requires_grad:
                graph.backward(loss)

            grad = 0.0 if r.grad is None else float(r.grad)
            self.assertAlmostEqual(grad, expected, msg=(ratio, advantage))

    def test_invalid_ratio(self):
        with self.assertRaises(LossError):
            self._loss(0.0, 1.0)

        with self.assertRaises(LossError):
            self._loss(-1.0, 1.0)


class GaussianTestCase(unittest.TestCase):
    """Test the Gaussian latent ablation."""

    def test_values(self):
        h = ad.Tensor([1.0, 0.0])
        self.assertAlmostEqual(
            gaussian_log_ratio(h, [0.0, 0.0], 0.5).item(), -2.0
        )
        self.assertAlmostEqual(gaussian_kl(h, [0.0, 0.0], 0.5).item(), 2.0)
        self.assertEqual(gaussian_log_ratio(h, [1.0, 0.0], 10.0).item(), 0.0)

    def test_invalid_scale(self):
        with self.assertRaises(LossError):
            gaussian_log_ratio(ad.Tensor([1.0]), [0.0], 0.0)

        with self.assertRaises(LossError):
            gaussian_kl(ad.Tensor([1.0]), [0.0], -1.0)


class PolicyLossTestCase(unittest.TestCase):
    """Test the losses of rollout batches."""

    def setUp(self):
        self.params = PolicyParams.initialize(
            PolicyDims(hidden_dim=6, input_dim=5, obs_dim=4),
            np.random.default_rng(0)
        )
        self.task = LatentRetrieval(pairs=2, obs_dim=4, hidden_dim=6,
                                    canvas_length=3,
                                    rng=np.random.default_rng(1))

    def _batch(self, config, seed=0, advantages=(1.0, -1.0, 0.5, -0.5)):
        snapshot = self.params.copy()
        batch = []

        for index, advantage in enumerate(advantages):
            episode = self.task.sample_episode(
                get_stream(seed, "episode", index), index
            )
            trajectory = generate_trajectory(
                snapshot, episode, config, get_stream(seed, "decode", index),
                relaxed=config.relaxed, prefix=(CANVAS_START, )
            )
            trajectory.advantage = advantage
            batch.append((episode, trajectory))

        return batch

    def _perturbed(self, scale=0.01):
        params = self.params.copy(requires_grad=True)
        noise = np.random.default_rng(9).standard_normal(params.flatten().size)
        params.assign_flat(params.flatten() + scale * noise)
        return params

    def test_ratio_at_origin(self):
        """Give unit ratios when the policy equals the snapshot."""
        config = _config()
        batch = self._batch(config)
        l_tok, l_lat, stats = depo_policy_loss(batch, self.params, config)

        self.assertGreater(stats.token_log_ratios.size, 0)
        self.assertGreater(stats.latent_log_ratios.size, 0)
        np.testing.assert_array_equal(stats.token_log_ratios, 0.0)
        np.testing.assert_array_equal(stats.latent_log_ratios, 0.0)
        self.assertEqual(stats.token_clip_fraction, 0.0)
        self.assertEqual(stats.latent_clip_fraction, 0.0)

        self.assertEqual(latent_kl_loss(batch, self.params, config).item(),
                         0.0)
        self.assertEqual(
            token_kl_loss(batch, self.params, self.params).item(), 0.0
        )

    def test_normalized_ratio_at_origin(self):
        """Give unit ratios with cosine scores."""
        config = _config(relaxed=False)
        batch = self._batch(config)
        _, _, stats = depo_policy_loss(batch, self.params, config)

        np.testing.assert_array_equal(stats.token_log_ratios, 0.0)
        np.testing.assert_allclose(stats.latent_log_ratios, 0.0, atol=1e-12)

    def test_normalized_scale_invariance(self):
        """Ignore the norm of the latent states with cosine scores."""
        config = _config(relaxed=False)
        batch = self._batch(config)
        params = self._perturbed()
        replays = replay_batch(batch, params)
        l_tok, l_lat, stats = depo_policy_loss(batch, params, config,
                                               replays=replays)

        for c in (0.01, 3.0, 100.0):
            scaled = [
                Replay(r.episode, r.trajectory, [
                    ad.scale(h, c) if s.is_latent else h
                    for s, h in zip(r.trajectory.steps, r.states)
                ])
                for r in replays
            ]
            _, other, other_stats = depo_policy_loss(
                batch, params, config, replays=scaled
            )
            self.assertAlmostEqual(other.item(), l_lat.item(), places=10)
            np.testing.assert_allclose(other_stats.latent_log_ratios,
                                       stats.latent_log_ratios, atol=1e-10)

    def test_logit_shift_invariance(self):
        """Ignore a constant added to all logits."""
        config = _config()
        batch = self._batch(config)
        params = self._perturbed()
        shifted = params.copy(requires_grad=True)
        shifted["b_m"].values[...] += 7.5

        l_tok, _, stats = depo_policy_loss(batch, params, config)
        other, _, other_stats = depo_policy_loss(batch, shifted, config)

        self.assertAlmostEqual(other.item(), l_tok.item(), places=10)
        np.testing.assert_allclose(other_stats.token_log_ratios,
                                   stats.token_log_ratios, atol=1e-10)

    def test_zero_alpha(self):
        """Take no gradient from the latent surrogate without its weight."""
        config = _config(alpha=0.0, beta_tok=0.0, beta_lat=0.0)
        batch = self._batch(config)
        params = self._perturbed()

        with ad.Graph() as graph:
            breakdown, _ = compute_rl_loss(batch, params, self.params, config)

        graph.backward(breakdown.l_total)
        total = params.grads()
        params.zero_grad()

        with ad.Graph() as graph:
            l_tok, _, _ = depo_policy_loss(batch, params, config)

        graph.backward(l_tok)
        expected = params.grads()

        for name in PolicyParams.NAMES:
            np.testing.assert_allclose(total[name], expected[name],
                                       rtol=1e-12, atol=1e-15, err_msg=name)

        params.zero_grad()

        with ad.Graph() as graph:
            _, l_lat, _ = depo_policy_loss(batch, params, config)
            root = ad.scale(l_lat, config.alpha)

        self.assertGreater(abs(l_lat.item()), 0.0)
        graph.backward(root)

        for name, grad in params.grads().items():
            np.testing.assert_array_equal(grad, 0.0, err_msg=name)

    def test_mean_of_positions(self):
        """Average the surrogate over the positions of a kind."""
        config = _config()
        batch = self._batch(config)
        params = self._perturbed()
        l_tok, l_lat, stats = depo_policy_loss(batch, params, config)

        advantages = [
            t.advantage for _, t in batch
            for s in t.steps if not s.is_latent
        ]
        expected = np.mean([
            surrogate_clip(np.exp(r), a, 0.2, 0.28, 3.0).item()
            for r, a in zip(stats.token_log_ratios, advantages)
        ])
        self.assertAlmostEqual(l_tok.item(), expected)
        self.assertGreater(np.max(np.abs(stats.latent_log_ratios)), 0.0)

    def test_text_only(self):
        """Give zero latent terms without latent positions."""
        config = _config(canvas_budget=0)
        batch = self._batch(config)
        params = self._perturbed()
        l_tok, l_lat, stats = depo_policy_loss(batch, params, config)

        self.assertEqual(stats.latent_log_ratios.size, 0)
        self.assertEqual(l_lat.item(), 0.0)
        self.assertEqual(stats.latent_clip_fraction, 0.0)
        self.assertEqual(latent_kl_loss(batch, params, config).item(), 0.0)

    def test_empty_batch(self):
        """Reject batches without positions."""
        with self.assertRaises(LossError):
            depo_policy_loss([], self.params, _config())

        self.assertEqual(token_kl_loss([], self.params, self.params).item(),
                         0.0)

    def test_gaussian(self):
        """Use the Gaussian latent ratio."""
        config = _config(latent_distribution=LATENT_GAUSSIAN,
                         gaussian_sigma=0.5)
        batch = self._batch(config)
        params = self._perturbed()
        replays = replay_batch(batch, params)
        _, _, stats = depo_policy_loss(batch, params, config, replays=replays)

        expected = [
            -float(np.sum((h.values - s.z_tilde) ** 2)) / 0.5
            for r in replays
            for s, h in zip(r.trajectory.steps, r.states) if s.is_latent
        ]
        np.testing.assert_allclose(stats.latent_log_ratios, expected)
        self.assertGreater(
            latent_kl_loss(batch, params, config).item(), 0.0
        )

    def test_token_kl(self):
        """Compute the nonnegative token KL estimator."""
        config = _config()
        batch = self._batch(config)
        value = token_kl_loss(batch, self._perturbed(0.1), self.params)
        self.assertGreater(value.item(), 0.0)

    def test_total(self):
        """Combine the weighted terms."""
        config = _config()
        components = LossComponents(
            l_tok=ad.Tensor(1.0),
            l_lat=ad.Tensor(2.0),
            kl_tok=ad.Tensor(3.0),
            kl_lat=ad.Tensor(4.0),
            num_text=5,
            num_latent=6
        )
        breakdown = total_loss(components, config)

        self.assertAlmostEqual(breakdown.l_total.item(),
                               1.0 + 0.5 * 2.0 + 0.01 * 3.0 + 0.005 * 4.0)
        self.assertEqual(breakdown.num_text, 5)
        self.assertEqual(set(breakdown.values()),
                         {"l_tok", "l_lat", "kl_tok", "kl_lat", "l_total"})

    def test_compute(self):
        """Compute the total objective with one replay."""
        config = _config()
        batch = self._batch(config)
        params = self._perturbed()
        breakdown, stats = compute_rl_loss(batch, params, self.params,
                                           config)
        values = breakdown.values()

        self.assertAlmostEqual(
            values["l_total"],
            values["l_tok"] + 0.5 * values["l_lat"]
            + 0.01 * values["kl_tok"] + 0.005 * values["kl_lat"]
        )
        positions = sum(len(t) for _, t in batch)
        self.assertEqual(breakdown.num_text + breakdown.num_latent, positions)
        self.assertEqual(breakdown.num_latent, stats.latent_log_ratios.size)


class SftLossTestCase(unittest.TestCase):
    """Test the supervised loss."""

    def setUp(self):
        self.params = PolicyParams.initialize(
            PolicyDims(hidden_dim=6, input_dim=5, obs_dim=4),
            np.random.default_rng(0)
        )
        self.task = LatentRetrieval(pairs=2, obs_dim=4, hidden_dim=6,
                                    canvas_length=3,
                                    rng=np.random.default_rng(1))

    def test_terms(self):
        """Combine the cross entropy and the canvas loss."""
        episodes = [
            self.task.sample_episode(np.random.default_rng(i))
            for i in range(2)
        ]
        batch = [(e, self.task.gold_steps(e)) for e in episodes]
        loss = sft_loss(batch, self.params, 2.0)

        self.assertEqual(loss.num_tokens, 10)
        self.assertEqual(loss.num_latent, 6)
        self.assertGreater(loss.cross_entropy.item(), 0.0)
        self.assertGreater(loss.canvas.item(), 0.0)
        self.assertAlmostEqual(
            loss.total.item(),
            loss.cross_entropy.item() + 2.0 * loss.canvas.item()
        )

    def test_missing_targets(self):
        """Reject canvas positions without targets."""
        episode = self.task.sample_episode(np.random.default_rng(0))
        steps = self.task.gold_steps(episode)
        episode.target_latents = episode.target_latents[:1]

        with self.assertRaises(LossError):
            sft_loss([(episode, steps)], self.params, 1.0)
