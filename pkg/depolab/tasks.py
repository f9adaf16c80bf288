#
# Synthetic tasks with verifiable rewards
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
from abc import ABCMeta, abstractmethod
from collections import namedtuple

import numpy as np

from depolab.constants import CONTENT_VOCAB_SIZE, CANVAS_START, \
    CANVAS_END, ANSWER, EOS, TASK_LATENT_RETRIEVAL, TASK_PARITY_MEMORY
from depolab.error import DepolabError
from depolab.namespace import get_stream
from depolab.policy import HybridStep

log = logging.getLogger(__name__)

__all__ = [
    "TaskError",
    "Episode",
    "RewardRecord",
    "Task",
    "LatentRetrieval",
    "ParityMemory",
    "create_task",
    "sample_episode",
    "is_content_token",
    "check_format",
    "score",
]


class TaskError(DepolabError):
    """Exception for invalid task settings."""
    pass


def is_content_token(token):
    """Is the token a content token?"""
    return 0 <= token < CONTENT_VOCAB_SIZE


class Episode(object):
    """One task instance.

    The observations form the continuous prefix of the prompt.
    The target latents supervise the canvas positions of the gold
    trajectory, they are None for tasks without such supervision.
    """

    __slots__ = ["observations", "prompt_tokens", "gold_answer", "task_id",
                 "episode_id", "target_latents"]

    def __init__(self, observations, prompt_tokens, gold_answer, task_id,
                 episode_id=0, target_latents=None):
        if not is_content_token(gold_answer):
            raise TaskError(
                "Answer '{}' is not a content token.".format(gold_answer)
            )

        if target_latents is not None:
            target_latents = [
                np.array(t, dtype=np.float64) for t in target_latents
            ]

            if not all(np.all(np.isfinite(t)) for t in target_latents):
                raise TaskError("Target latents must be finite.")

        self.observations = [
            np.array(o, dtype=np.float64) for o in observations
        ]
        self.prompt_tokens = [int(t) for t in prompt_tokens]
        self.gold_answer = int(gold_answer)
        self.task_id = task_id
        self.episode_id = episode_id
        self.target_latents = target_latents

    def __repr__(self):
        return "Episode(task={}, id={}, answer={})".format(
            self.task_id, self.episode_id, self.gold_answer
        )


class RewardRecord(namedtuple("RewardRecord", [
        "accuracy",
        "format_ok",
        "total"])):
    """Reward of one trajectory.

    The total is accuracy + w_fmt * format_ok.
    """
    __slots__ = ()


class Task(metaclass=ABCMeta):
    """A generator of episodes."""

    name = None

    @property
    def has_targets(self):
        """Do the episodes carry target latents?"""
        return False

    @abstractmethod
    def sample_episode(self, rng, episode_id=0):
        """Sample a fresh episode.

        :param rng: an instance of numpy.random.Generator
        :param episode_id: an identifier of the episode
        :return: an instance of Episode
        """
        return None

    def gold_steps(self, episode):
        """Create the steps of the gold trajectory of an episode.

        The gold trajectory is CANVAS_START, one latent step per
        target latent, CANVAS_END, ANSWER, the answer and EOS.

        :param episode: an instance of Episode
        :return: a list of HybridSteps
        :raise TaskError: if the episode has no target latents
        """
        if episode.target_latents is None:
            raise TaskError(
                "Task '{}' provides no target latents.".format(self.name)
            )

        steps = [HybridStep.token(0, CANVAS_START)]

        for target in episode.target_latents:
            steps.append(HybridStep.latent(len(steps), target))

        for token in (CANVAS_END, ANSWER, episode.gold_answer, EOS):
            steps.append(HybridStep.token(len(steps), token))

        return steps


class LatentRetrieval(Task):
    """Retrieve the value bound to a queried key.

    The observations are interleaved pairs of random unit keys and
    fixed value embeddings, followed by a query equal to one key.
    The answer is the content token bound to the queried key.
    """

    name = TASK_LATENT_RETRIEVAL

    def __init__(self, pairs, obs_dim, hidden_dim, canvas_length, rng):
        """Create the task.

        :param pairs: a number of key-value pairs
        :param obs_dim: a dimension of the observations
        :param hidden_dim: a dimension of the target latents
        :param canvas_length: a number of target latents
        :param rng: a generator of the fixed task tables
        :raise TaskError: if there are more pairs than content tokens
        """
        if not 1 <= pairs <= CONTENT_VOCAB_SIZE:
            raise TaskError(
                "Number of pairs {} exceeds {} content tokens.".format(
                    pairs, CONTENT_VOCAB_SIZE
                )
            )

        self._pairs = pairs
        self._obs_dim = obs_dim
        self._canvas_length = canvas_length

        values = rng.standard_normal((CONTENT_VOCAB_SIZE, obs_dim))
        self._value_table = \
            values / np.linalg.norm(values, axis=1, keepdims=True)
        self._target_map = \
            rng.standard_normal((hidden_dim, obs_dim)) / np.sqrt(obs_dim)

    @property
    def has_targets(self):
        return True

    @property
    def pairs(self):
        return self._pairs

    @property
    def value_table(self):
        """Unit observation embeddings of the content tokens."""
        return self._value_table

    def target_latent(self, token):
        """Return the canvas target of a content token."""
        return self._target_map @ self._value_table[token]

    def sample_episode(self, rng, episode_id=0):
        keys = rng.standard_normal((self._pairs, self._obs_dim))
        keys /= np.linalg.norm(keys, axis=1, keepdims=True)
        values = rng.choice(CONTENT_VOCAB_SIZE, size=self._pairs,
                            replace=False)
        query = int(rng.integers(self._pairs))

        observations = []

        for key, value in zip(keys, values):
            observations.append(key)
            observations.append(self._value_table[value])

        observations.append(keys[query])
        answer = int(values[query])
        target = self.target_latent(answer)

        return Episode(
            observations=observations,
            prompt_tokens=[],
            gold_answer=answer,
            task_id=self.name,
            episode_id=episode_id,
            target_latents=[target] * self._canvas_length
        )


class ParityMemory(Task):
    """Answer the parity of a sequence of bits.

    Bits are written with the content tokens 0 and 1.
    """

    name = TASK_PARITY_MEMORY

    def __init__(self, bits):
        if bits < 1:
            raise TaskError("Number of bits must be positive.")

        self._bits = bits

    @property
    def bits(self):
        return self._bits

    def sample_episode(self, rng, episode_id=0):
        bits = rng.integers(0, 2, size=self._bits)

        return Episode(
            observations=[],
            prompt_tokens=bits.tolist(),
            gold_answer=int(bits.sum() % 2),
            task_id=self.name,
            episode_id=episode_id
        )


def create_task(config):
    """Create the configured task.

    The fixed tables of a task depend only on the table seed.

    :param config: a config with the task settings and dimensions
    :return: an instance of Task
    :raise TaskError: if the task is unknown
    """
    if config.task == TASK_LATENT_RETRIEVAL:
        return LatentRetrieval(
            pairs=config.retrieval_pairs,
            obs_dim=config.obs_dim,
            hidden_dim=config.hidden_dim,
            canvas_length=config.sft_canvas_length,
            rng=get_stream(config.table_seed, "task", config.task)
        )

    if config.task == TASK_PARITY_MEMORY:
        return ParityMemory(config.parity_bits)

    raise TaskError("Unknown task '{}'.".format(config.task))


def sample_episode(task, rng, episode_id=0):
    """Sample a fresh episode of a task."""
    return task.sample_episode(rng, episode_id)


def check_format(steps):
    """Check the explicit and implicit reasoning pattern.

    Text tokens and canvas segments may alternate, at least one canvas
    with a latent step is required, and the trajectory ends with
    ANSWER, one content token and EOS.

    :param steps: a list of HybridSteps
    :return: True if the pattern is followed
    """
    canvases = 0
    index = 0

    while index < len(steps):
        step = steps[index]

        if step.is_latent:
            return False

        token = step.token_id

        if is_content_token(token):
            index += 1
            continue

        if token == CANVAS_START:
            end = index + 1

            while end < len(steps) and steps[end].is_latent:
                end += 1

            if end == index + 1 or end == len(steps) \
                    or steps[end].token_id != CANVAS_END:
                return False

            canvases += 1
            index = end + 1
            continue

        if token == ANSWER:
            tail = steps[index + 1:]
            return canvases > 0 and len(tail) == 2 \
                and not tail[0].is_latent \
                and is_content_token(tail[0].token_id) \
                and not tail[1].is_latent and tail[1].token_id == EOS

        return False

    return False


def _answer(steps):
    for index, step in enumerate(steps):
        if step.is_latent or step.token_id != ANSWER:
            continue

        if index + 1 < len(steps) and not steps[index + 1].is_latent:
            return steps[index + 1].token_id

        return None

    return None


def score(episode, trajectory, w_fmt):
    """Score a complete trajectory.

    :param episode: an instance of Episode
    :param trajectory: an instance of Trajectory
    :param w_fmt: a weight of the format reward
    :return: an instance of RewardRecord
    """
    accuracy = int(_answer(trajectory.steps) == episode.gold_answer)
    format_ok = int(check_format(trajectory.steps))
    return RewardRecord(accuracy, format_ok, accuracy + w_fmt * format_ok)
