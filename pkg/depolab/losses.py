#
# Training objectives
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
import logging
from collections import namedtuple

import numpy as np

from depolab import autodiff as ad
from depolab.constants import LATENT_GAUSSIAN
from depolab.error import DepolabError
from depolab.policy import replay_states, unified_logprob, logits
from depolab.vmf import VmfParams, vmf_log_ratio, vmf_kl

log = logging.getLogger(__name__)

__all__ = [
    "LossError",
    "LossComponents",
    "LossBreakdown",
    "RatioStats",
    "SftBreakdown",
    "Replay",
    "replay_batch",
    "surrogate_clip",
    "depo_policy_loss",
    "latent_kl_loss",
    "token_kl_loss",
    "total_loss",
    "compute_rl_loss",
    "gaussian_log_ratio",
    "gaussian_kl",
    "sft_loss",
]


class LossError(DepolabError):
    """Exception for invalid loss inputs."""
    pass


# Scalar tensors of the objective terms and the position counts.
LossComponents = namedtuple("LossComponents", [
    "l_tok",
    "l_lat",
    "kl_tok",
    "kl_lat",
    "num_text",
    "num_latent"
])

# Log-ratios and clip fractions of the positions of a batch.
RatioStats = namedtuple("RatioStats", [
    "token_log_ratios",
    "latent_log_ratios",
    "token_clip_fraction",
    "latent_clip_fraction"
])

# Terms of the supervised objective.
SftBreakdown = namedtuple("SftBreakdown", [
    "total",
    "cross_entropy",
    "canvas",
    "num_tokens",
    "num_latent"
])


class LossBreakdown(object):
    """Components of the total objective.

    The total is l_tok + alpha * l_lat + beta_tok * kl_tok
    + beta_lat * kl_lat.
    """

    __slots__ = ["l_tok", "l_lat", "kl_tok", "kl_lat", "l_total",
                 "num_text", "num_latent"]

    def __init__(self, l_tok, l_lat, kl_tok, kl_lat, l_total, num_text,
                 num_latent):
        self.l_tok = l_tok
        self.l_lat = l_lat
        self.kl_tok = kl_tok
        self.kl_lat = kl_lat
        self.l_total = l_total
        self.num_text = num_text
        self.num_latent = num_latent

    def values(self):
        """Return the components as floats."""
        return {
            "l_tok": self.l_tok.item(),
            "l_lat": self.l_lat.item(),
            "kl_tok": self.kl_tok.item(),
            "kl_lat": self.kl_lat.item(),
            "l_total": self.l_total.item(),
        }

    def __repr__(self):
        return "LossBreakdown({})".format(", ".join(
            "{}={!r}".format(k, v) for k, v in self.values().items()
        ))


# One replayed trajectory: its steps, states and advantage.
Replay = namedtuple("Replay", [
    "episode",
    "trajectory",
    "states"
])


def _trajectories(batch):
    for item in batch:
        if hasattr(item, "trajectories"):
            for trajectory in item.trajectories:
                yield item.episode, trajectory
        else:
            yield item


def replay_batch(batch, params):
    """Replay the trajectories of a batch under the given parameters.

    :param batch: a list of RolloutGroups or of pairs of an episode
                  and a trajectory
    :param params: an instance of PolicyParams
    :return: a list of Replays
    """
    return [
        Replay(episode, trajectory,
               replay_states(params, episode, trajectory.steps))
        for episode, trajectory in _trajectories(batch)
    ]


def _zero():
    return ad.Tensor(0.0)


def _mean_or_zero(terms):
    if not terms:
        return _zero()

    return ad.mean(terms)


def surrogate_clip(ratio, advantage, eps_lo, eps_hi, c):
    """Compute the dual-clip surrogate loss of one position.

    With u = min(r A, clip(r, 1 - eps_lo, 1 + eps_hi) A) the objective
    is u for A >= 0 and max(u, c A) for A < 0. The negated objective
    is returned.

    :param ratio: a scalar tensor with a positive ratio
    :param advantage: a float
    :param eps_lo: a lower clipping range
    :param eps_hi: an upper clipping range
    :param c: a floor constant of the dual clip
    :return: a scalar tensor
    :raise LossError: if the ratio is not positive
    """
    ratio = ad.as_tensor(ratio)

    if not ratio.item() > 0:
        raise LossError("Ratio {!r} must be positive.".format(ratio.item()))

    advantage = float(advantage)
    unclipped = ad.scale(ratio, advantage)
    clipped = ad.scale(ad.clip(ratio, 1.0 - eps_lo, 1.0 + eps_hi), advantage)
    objective = ad.minimum(unclipped, clipped)

    if advantage < 0:
        objective = ad.maximum(objective, ad.Tensor(c * advantage))

    return ad.scale(objective, -1.0)


def gaussian_log_ratio(h, h_old, sigma):
    """Compute the log-ratio of the Gaussian latent ablation.

    :param h: a tensor with the current hidden state
    :param h_old: the stored hidden state, a constant
    :param sigma: a positive scale
    :return: -||h - h_old||^2 / (2 sigma^2)
    """
    if not sigma > 0:
        raise LossError("Scale {!r} must be positive.".format(sigma))

    return ad.scale(ad.sqdist(h, h_old), -1.0 / (2.0 * sigma * sigma))


def gaussian_kl(h, h_old, sigma):
    """Compute the KL of two isotropic Gaussians with a shared scale."""
    if not sigma > 0:
        raise LossError("Scale {!r} must be positive.".format(sigma))

    return ad.scale(ad.sqdist(h, h_old), 1.0 / (2.0 * sigma * sigma))


def _vmf_params(config, dim, vmf):
    if vmf is not None:
        return vmf

    return VmfParams.from_config(config, dim)


def _latent_log_ratio(h, z_tilde, config, vmf):
    if config.latent_distribution == LATENT_GAUSSIAN:
        return gaussian_log_ratio(h, z_tilde, config.gaussian_sigma)

    return vmf_log_ratio(h, z_tilde, vmf, config.relaxed)


def _clip_fraction(log_ratios, eps_lo, eps_hi):
    if not log_ratios.size:
        return 0.0

    ratios = np.exp(log_ratios)
    outside = (ratios < 1.0 - eps_lo) | (ratios > 1.0 + eps_hi)
    return float(np.mean(outside))


def depo_policy_loss(batch, params, config, vmf=None, replays=None):
    """Compute the decoupled surrogate losses.

    Token positions use the categorical ratio and the token clipping
    range, latent positions use the mode-referenced latent ratio and
    the latent clipping range. Each loss is the mean over all
    positions of its kind in the batch.

    :param batch: a list of kept RolloutGroups
    :param params: the current PolicyParams
    :param config: an instance of DepoConfig
    :param vmf: an instance of VmfParams or None
    :param replays: precomputed Replays or None
    :return: a tuple of l_tok, l_lat and RatioStats
    :raise LossError: if the batch has no positions
    """
    if replays is None:
        replays = replay_batch(batch, params)

    vmf = _vmf_params(config, params.dims.hidden_dim, vmf)
    token_terms, latent_terms = [], []
    token_logs, latent_logs = [], []

    for replay in replays:
        advantage = replay.trajectory.advantage or 0.0

        for step, h in zip(replay.trajectory.steps, replay.states):
            if step.is_latent:
                log_ratio = _latent_log_ratio(h, step.z_tilde, config, vmf)
                latent_logs.append(log_ratio.item())
                latent_terms.append(surrogate_clip(
                    ad.exp(log_ratio), advantage,
                    config.eps_lat_lo, config.eps_lat_hi, config.dual_clip_c
                ))
            else:
                new = unified_logprob(step, h, params, vmf, config.relaxed)
                log_ratio = ad.sub(new, ad.Tensor(step.old_logprob))
                token_logs.append(log_ratio.item())
                token_terms.append(surrogate_clip(
                    ad.exp(log_ratio), advantage,
                    config.eps_tok_lo, config.eps_tok_hi, config.dual_clip_c
                ))

    if not token_terms and not latent_terms:
        raise LossError("The batch has neither text nor latent positions.")

    token_logs = np.array(token_logs)
    latent_logs = np.array(latent_logs)
    stats = RatioStats(
        token_log_ratios=token_logs,
        latent_log_ratios=latent_logs,
        token_clip_fraction=_clip_fraction(
            token_logs, config.eps_tok_lo, config.eps_tok_hi
        ),
        latent_clip_fraction=_clip_fraction(
            latent_logs, config.eps_lat_lo, config.eps_lat_hi
        )
    )

    return _mean_or_zero(token_terms), _mean_or_zero(latent_terms), stats


def latent_kl_loss(batch, params, config, vmf=None, replays=None):
    """Compute the closed-form latent KL penalty.

    It is the mean over all latent positions of the vMF KL, or of
    the Gaussian KL in the Gaussian ablation. It is zero without
    latent positions.

    :param batch: a list of kept RolloutGroups
    :param params: the current PolicyParams
    :param config: an instance of DepoConfig
    :param vmf: an instance of VmfParams or None
    :param replays: precomputed Replays or None
    :return: a scalar tensor
    """
    if replays is None:
        replays = replay_batch(batch, params)

    vmf = _vmf_params(config, params.dims.hidden_dim, vmf)
    terms = []

    for replay in replays:
        for step, h in zip(replay.trajectory.steps, replay.states):
            if not step.is_latent:
                continue

            if config.latent_distribution == LATENT_GAUSSIAN:
                terms.append(gaussian_kl(
                    h, step.z_tilde, config.gaussian_sigma
                ))
            else:
                terms.append(vmf_kl(h, step.z_tilde, vmf, config.relaxed))

    return _mean_or_zero(terms)


def token_kl_loss(batch, params, ref_params, replays=None):
    """Compute the sample-based token KL against a reference policy.

    The estimator exp(d) - d - 1 with d = log p_ref - log p is
    averaged over all text positions at the stored tokens.

    :param batch: a list of kept RolloutGroups
    :param params: the current PolicyParams
    :param ref_params: the frozen reference PolicyParams
    :param replays: precomputed Replays or None
    :return: a scalar tensor
    """
    if replays is None:
        replays = replay_batch(batch, params)

    terms = []

    for replay in replays:
        steps = replay.trajectory.steps
        ref_states = replay_states(ref_params, replay.episode, steps)

        for step, h, h_ref in zip(steps, replay.states, ref_states):
            if step.is_latent:
                continue

            ref = ad.log_softmax_select(
                logits(h_ref, ref_params), step.token_id
            ).item()
            new = ad.log_softmax_select(logits(h, params), step.token_id)
            delta = ad.sub(ad.Tensor(ref), new)
            terms.append(ad.sub(
                ad.sub(ad.exp(delta), delta), ad.Tensor(1.0)
            ))

    return _mean_or_zero(terms)


def total_loss(components, config):
    """Combine the objective terms.

    :param components: an instance of LossComponents
    :param config: an instance of DepoConfig
    :return: an instance of LossBreakdown
    """
    l_total = ad.add_n([
        components.l_tok,
        ad.scale(components.l_lat, config.alpha),
        ad.scale(components.kl_tok, config.beta_tok),
        ad.scale(components.kl_lat, config.beta_lat),
    ])

    return LossBreakdown(
        l_tok=components.l_tok,
        l_lat=components.l_lat,
        kl_tok=components.kl_tok,
        kl_lat=components.kl_lat,
        l_total=l_total,
        num_text=components.num_text,
        num_latent=components.num_latent
    )


def compute_rl_loss(batch, params, ref_params, config, vmf=None):
    """Compute the total objective of a batch with one replay.

    :param batch: a list of kept RolloutGroups
    :param params: the current PolicyParams
    :param ref_params: the frozen reference PolicyParams
    :param config: an instance of DepoConfig
    :param vmf: an instance of VmfParams or None
    :return: a tuple of LossBreakdown and RatioStats
    """
    vmf = _vmf_params(config, params.dims.hidden_dim, vmf)
    replays = replay_batch(batch, params)

    l_tok, l_lat, stats = depo_policy_loss(
        batch, params, config, vmf, replays=replays
    )
    kl_lat = latent_kl_loss(batch, params, config, vmf, replays=replays)
    kl_tok = token_kl_loss(batch, params, ref_params, replays=replays)

    components = LossComponents(
        l_tok=l_tok,
        l_lat=l_lat,
        kl_tok=kl_tok,
        kl_lat=kl_lat,
        num_text=int(stats.token_log_ratios.size),
        num_latent=int(stats.latent_log_ratios.size)
    )

    return total_loss(components, config), stats


def sft_loss(batch, params, lam):
    """Compute the supervised objective on gold trajectories.

    It is the mean cross entropy over the gold tokens plus lambda
    times the squared error between the hidden states and the target
    latents, averaged over the canvas positions and the dimensions.

    :param batch: a list of pairs of an episode and its gold steps
    :param params: an instance of PolicyParams
    :param lam: a weight of the canvas loss
    :return: an instance of SftBreakdown
    :raise LossError: if a canvas position has no target
    """
    token_terms, canvas_terms = [], []
    dim = params.dims.hidden_dim

    for episode, steps in batch:
        states = replay_states(params, episode, steps)
        targets = episode.target_latents or []
        index = 0

        for step, h in zip(steps, states):
            if not step.is_latent:
                token_terms.append(ad.scale(
                    ad.log_softmax_select(logits(h, params), step.token_id),
                    -1.0
                ))
                continue

            if index >= len(targets):
                raise LossError(
                    "Episode {} has no target for canvas position "
                    "{}.".format(episode.episode_id, step.position)
                )

            canvas_terms.append(ad.scale(
                ad.sqdist(h, targets[index]), 1.0 / dim
            ))
            index += 1

    cross_entropy = _mean_or_zero(token_terms)
    canvas = _mean_or_zero(canvas_terms)

    return SftBreakdown(
        total=ad.add(cross_entropy, ad.scale(canvas, lam)),
        cross_entropy=cross_entropy,
        canvas=canvas,
        num_tokens=len(token_terms),
        num_latent=len(canvas_terms)
    )
