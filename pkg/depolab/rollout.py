#
# Group rollouts, dynamic filtering and group-relative advantages
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
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from depolab.error import DepolabError
from depolab.namespace import get_stream
from depolab.policy import generate_trajectory
from depolab.tasks import score

log = logging.getLogger(__name__)

__all__ = [
    "RolloutError",
    "RolloutGroup",
    "collect_group",
    "collect_groups",
    "group_advantages",
    "filter_groups",
]


class RolloutError(DepolabError):
    """Exception for invalid rollouts."""
    pass


class RolloutGroup(object):
    """Trajectories of one shared episode.

    The advantages and the kept flag are unset until the group
    is filtered and its advantages are computed.
    """

    def __init__(self, episode, trajectories):
        self.episode = episode
        self.trajectories = list(trajectories)
        self.advantages = None
        self.kept = None

    @property
    def size(self):
        return len(self.trajectories)

    @property
    def rewards(self):
        """Total rewards of the trajectories."""
        return np.array([t.reward.total for t in self.trajectories])

    @property
    def accuracies(self):
        return np.array([t.reward.accuracy for t in self.trajectories])

    @property
    def format_rate(self):
        return float(np.mean([t.reward.format_ok for t in self.trajectories]))

    @property
    def mean_accuracy(self):
        return float(np.mean(self.accuracies))

    def assign_advantages(self, eps):
        """Compute the advantages and broadcast them to trajectories."""
        self.advantages = group_advantages(self.rewards, eps)

        for trajectory, advantage in zip(self.trajectories, self.advantages):
            trajectory.advantage = float(advantage)

    def __repr__(self):
        return "RolloutGroup(episode={}, size={}, kept={})".format(
            self.episode.episode_id, self.size, self.kept
        )


def collect_group(snapshot, episode, group_size, decode, seed, namespace=(),
                  w_fmt=0.1, relaxed=True, members=None):
    """Generate and score a group of trajectories.

    The member i draws from the stream (seed, *namespace, i), so
    its trajectory doesn't depend on the order of the members.

    :param snapshot: a frozen instance of PolicyParams
    :param episode: the shared episode
    :param group_size: a number of trajectories G >= 2
    :param decode: an instance of DecodeConfig
    :param seed: a master seed
    :param namespace: a path of the group's streams
    :param w_fmt: a weight of the format reward
    :param relaxed: keep raw hidden states as latent actions?
    :param members: an order of generating the members or None
    :return: an instance of RolloutGroup
    """
    if group_size < 2:
        raise RolloutError(
            "Group size must be at least 2, not {}.".format(group_size)
        )

    order = range(group_size) if members is None else members
    trajectories = [None] * group_size

    for member in order:
        rng = get_stream(seed, *namespace, member)
        trajectory = generate_trajectory(
            snapshot, episode, decode, rng, relaxed=relaxed
        )
        trajectory.reward = score(episode, trajectory, w_fmt)
        trajectories[member] = trajectory

    return RolloutGroup(episode, trajectories)


def collect_groups(snapshot, episodes, config, seed, namespace=(),
                   workers=1):
    """Collect groups of several episodes, possibly in parallel.

    The result is ordered as the episodes.

    :param snapshot: a frozen instance of PolicyParams
    :param episodes: a list of episodes
    :param config: a config with the rollout and decode settings
    :param seed: a master seed
    :param namespace: a path of the streams of this collection
    :param workers: a number of threads
    :return: a list of RolloutGroups
    """
    def collect(index):
        return collect_group(
            snapshot,
            episodes[index],
            config.group_size,
            config,
            seed,
            namespace=tuple(namespace) + ("group", index),
            w_fmt=config.format_weight,
            relaxed=config.relaxed
        )

    if workers <= 1:
        return [collect(i) for i in range(len(episodes))]

    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(collect, range(len(episodes))))


def group_advantages(rewards, eps=1e-6):
    """Normalize rewards within a group.

    The advantage is (r - mean) / (std + eps) with the population
    standard deviation. Equal rewards give zero advantages.

    :param rewards: a sequence of G rewards
    :param eps: a positive constant
    :return: an array of G advantages
    """
    rewards = np.asarray(rewards, dtype=np.float64)

    if rewards.size < 2:
        raise RolloutError("At least two rewards are required.")

    if np.all(rewards == rewards[0]):
        return np.zeros_like(rewards)

    return (rewards - rewards.mean()) / (rewards.std() + eps)


def filter_groups(groups, lo, hi):
    """Keep groups with the mean accuracy in [lo, hi].

    :param groups: a list of RolloutGroups
    :param lo: a lower bound
    :param hi: an upper bound
    :return: a list of kept groups
    """
    kept = []

    for group in groups:
        group.kept = lo <= group.mean_accuracy <= hi

        if group.kept:
            kept.append(group)

    log.debug("Kept %d of %d groups.", len(kept), len(groups))
    return kept
