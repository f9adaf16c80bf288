#
# The supervised and the reinforcement training stages
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
import json
import logging

import numpy as np

from depolab import autodiff as ad
from depolab.config import RunConfig
from depolab.constants import CHECKPOINT_FORMAT_VERSION, STAGE_INIT, \
    STAGE_SFT, STAGE_RL
from depolab.error import CheckpointError, ConfigError, NumericalError
from depolab.losses import compute_rl_loss, sft_loss
from depolab.namespace import get_stream
from depolab.policy import PolicyParams, PolicyError, generate_trajectory
from depolab.rollout import collect_groups, filter_groups
from depolab.tasks import TaskError, score
from depolab.vmf import VmfParams

log = logging.getLogger(__name__)

__all__ = [
    "OptimizerError",
    "OptimizerState",
    "Checkpoint",
    "SFT_COLUMNS",
    "RL_COLUMNS",
    "clip_grad_norm",
    "adam_step",
    "encode_array",
    "decode_array",
    "save_checkpoint",
    "load_checkpoint",
    "dump_checkpoint",
    "parse_checkpoint",
    "initial_checkpoint",
    "run_sft",
    "run_rl",
    "evaluate",
]

# Columns of the metrics of the supervised stage.
SFT_COLUMNS = (
    "step",
    "epoch",
    "loss",
    "cross_entropy",
    "canvas",
)

# Columns of the metrics of the reinforcement stage.
RL_COLUMNS = (
    "step",
    "skipped",
    "reward_mean",
    "accuracy",
    "format_rate",
    "discard_rate",
    "kept_groups",
    "l_tok",
    "l_lat",
    "kl_tok",
    "kl_lat",
    "l_total",
    "num_text",
    "num_latent",
    "tok_mean_abs_log_ratio",
    "tok_max_abs_log_ratio",
    "lat_mean_abs_log_ratio",
    "lat_max_abs_log_ratio",
    "tok_clip_fraction",
    "lat_clip_fraction",
)


class OptimizerError(NumericalError):
    """Exception for invalid optimizer updates."""
    pass


class OptimizerState(object):
    """State of the AdamW optimizer."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01, step=0, moments=None):
        """Create the state.

        :param lr: a learning rate
        :param beta1: a decay of the first moments
        :param beta2: a decay of the second moments
        :param eps: a numeric floor of the denominator
        :param weight_decay: a decoupled weight decay
        :param step: a number of applied updates
        :param moments: a map of names and pairs of moment arrays
        """
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step = step
        self.moments = moments or {}

    @classmethod
    def create(cls, params, lr, config):
        """Create a fresh state for the parameters.

        :param params: an instance of PolicyParams
        :param lr: a learning rate
        :param config: an instance of OptimizerConfig
        :return: an instance of OptimizerState
        """
        return cls(
            lr=lr,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            eps=config.adam_eps,
            weight_decay=config.weight_decay,
            moments={
                name: (np.zeros_like(t.values), np.zeros_like(t.values))
                for name, t in params.items()
            }
        )

    def to_structure(self):
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "step": self.step,
            "first_moments": {
                name: encode_array(m) for name, (m, _) in self.moments.items()
            },
            "second_moments": {
                name: encode_array(v) for name, (_, v) in self.moments.items()
            },
        }

    def copy(self):
        """Return a deep copy of the state."""
        return OptimizerState.from_structure(self.to_structure())

    @classmethod
    def from_structure(cls, structure):
        first = structure["first_moments"]
        second = structure["second_moments"]

        return cls(
            lr=float(structure["lr"]),
            beta1=float(structure["beta1"]),
            beta2=float(structure["beta2"]),
            eps=float(structure["eps"]),
            weight_decay=float(structure["weight_decay"]),
            step=int(structure["step"]),
            moments={
                name: (decode_array(first[name]), decode_array(second[name]))
                for name in first
            }
        )


def clip_grad_norm(grads, max_norm):
    """Scale the gradients down to a maximal global norm.

    The gradients are scaled in place.

    :param grads: a map of array names and gradients
    :param max_norm: a maximal norm, zero disables the clipping
    :return: the global norm before the clipping
    """
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))

    if 0 < max_norm < norm:
        for grad in grads.values():
            grad *= max_norm / norm

    return norm


def adam_step(params, grads, state):
    """Apply one AdamW update in place.

    :param params: an instance of PolicyParams
    :param grads: a map of array names and gradients
    :param state: an instance of OptimizerState
    :raise OptimizerError: if a gradient is not finite or misshaped
    """
    for name, tensor in params.items():
        grad = grads[name]

        if grad.shape != tensor.shape:
            raise OptimizerError(
                "Gradient of '{}' has shape {}, expected {}.".format(
                    name, grad.shape, tensor.shape
                )
            )

        if not np.all(np.isfinite(grad)):
            raise OptimizerError(
                "Gradient of '{}' is not finite.".format(name)
            )

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    for name, tensor in params.items():
        grad = grads[name]
        m, v = state.moments[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad

        theta = tensor.values
        theta -= state.lr * state.weight_decay * theta
        theta -= state.lr * (m / correction1) \
            / (np.sqrt(v / correction2) + state.eps)


def encode_array(array):
    """Encode an array losslessly with hexadecimal floats."""
    array = np.asarray(array, dtype=np.float64)

    return {
        "shape": list(array.shape),
        "data": [float(x).hex() for x in array.reshape(-1)],
    }


def decode_array(structure):
    """Decode an array encoded by encode_array."""
    shape = tuple(int(n) for n in structure["shape"])
    data = np.array(
        [float.fromhex(x) for x in structure["data"]], dtype=np.float64
    )
    return data.reshape(shape)


class Checkpoint(object):
    """A versioned snapshot of a training stage.

    The reference parameters are the frozen policy of the token KL,
    they are present only in checkpoints of the reinforcement stage.
    The random state is the master seed and the number of completed
    steps of the stage, which determines all later draws.
    """

    def __init__(self, stage, params, config, optimizer=None,
                 rng_state=None, reference=None):
        self.version = CHECKPOINT_FORMAT_VERSION
        self.stage = stage
        self.params = params
        self.config = config
        self.optimizer = optimizer
        self.rng_state = rng_state or {"seed": config.seed, "counter": 0}
        self.reference = reference

    def to_structure(self):
        return {
            "format_version": self.version,
            "stage": self.stage,
            "config": RunConfig.to_structure(self.config),
            "params": {
                name: encode_array(t.values) for name, t in self.params.items()
            },
            "reference": None if self.reference is None else {
                name: encode_array(t.values)
                for name, t in self.reference.items()
            },
            "optimizer": None if self.optimizer is None
            else self.optimizer.to_structure(),
            "rng_state": dict(self.rng_state),
        }

    @classmethod
    def from_structure(cls, structure):
        version = structure.get("format_version")

        if version != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(
                "Unsupported checkpoint version '{}'.".format(version)
            )

        reference = structure["reference"]
        optimizer = structure["optimizer"]

        return cls(
            stage=structure["stage"],
            params=PolicyParams({
                name: decode_array(a)
                for name, a in structure["params"].items()
            }, requires_grad=False),
            config=RunConfig.from_structure(structure["config"]),
            optimizer=None if optimizer is None
            else OptimizerState.from_structure(optimizer),
            rng_state={
                "seed": int(structure["rng_state"]["seed"]),
                "counter": int(structure["rng_state"]["counter"]),
            },
            reference=None if reference is None else PolicyParams({
                name: decode_array(a) for name, a in reference.items()
            }, requires_grad=False)
        )


def dump_checkpoint(checkpoint):
    """Serialize a checkpoint to a text."""
    return json.dumps(checkpoint.to_structure(), sort_keys=True,
                      indent=1) + "\n"


def parse_checkpoint(text, dims=None):
    """Parse a checkpoint from a text.

    :param text: a string
    :param dims: expected PolicyDims or None
    :return: an instance of Checkpoint
    :raise CheckpointError: if the checkpoint is invalid
    """
    try:
        checkpoint = Checkpoint.from_structure(json.loads(text))
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError,
            PolicyError, ConfigError) as e:
        raise CheckpointError("Corrupt checkpoint: {}".format(e)) from None

    if dims is not None:
        try:
            checkpoint.params.check_dims(dims)
        except PolicyError as e:
            raise CheckpointError(
                "Checkpoint doesn't match the config: {}".format(e)
            ) from None

    return checkpoint


def save_checkpoint(checkpoint, path):
    """Write a checkpoint to a file.

    :param checkpoint: an instance of Checkpoint
    :param path: a path of the file
    """
    with open(path, "w") as f:
        f.write(dump_checkpoint(checkpoint))

    log.info("Saved the %s checkpoint to %s.", checkpoint.stage, path)


def load_checkpoint(path, dims=None):
    """Read a checkpoint from a file.

    :param path: a path of the file
    :param dims: expected PolicyDims or None
    :return: an instance of Checkpoint
    :raise CheckpointError: if the checkpoint is invalid
    """
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise CheckpointError(
            "Cannot read the checkpoint '{}': {}".format(path, e.strerror)
        ) from None

    return parse_checkpoint(text, dims)


def initial_checkpoint(config, seed=None):
    """Create a checkpoint of randomly initialized parameters."""
    seed = config.seed if seed is None else seed
    params = PolicyParams.initialize(config, get_stream(seed, "init"))

    return Checkpoint(
        stage=STAGE_INIT,
        params=params,
        config=config,
        rng_state={"seed": seed, "counter": 0}
    )


def _backward(graph, root):
    # Constant roots have no recorded graph and zero gradients.
    if root.requires_grad:
        graph.backward(root)


def run_sft(task, epochs, config, seed, checkpoint=None, metrics=None):
    """Run the supervised stage on gold trajectories.

    Every step draws a fresh batch of episodes of the task and
    optimizes the supervised loss on their gold trajectories.
    A checkpoint of the supervised stage is resumed.

    :param task: a task with target latents
    :param epochs: a number of epochs of sft_steps_per_epoch steps
    :param config: an instance of RunConfig
    :param seed: a master seed
    :param checkpoint: a checkpoint to start from or None
    :param metrics: a Signal of metric rows or None
    :return: a checkpoint of the stage SFT
    """
    if not task.has_targets:
        raise TaskError(
            "Task '{}' provides no target latents.".format(task.name)
        )

    if checkpoint is None:
        checkpoint = initial_checkpoint(config, seed)

    params = checkpoint.params.copy(requires_grad=True)

    if checkpoint.stage == STAGE_SFT and checkpoint.optimizer is not None:
        optimizer = checkpoint.optimizer.copy()
        start = checkpoint.rng_state["counter"]
    else:
        optimizer = OptimizerState.create(params, config.sft_lr, config)
        start = 0

    total = epochs * config.sft_steps_per_epoch
    log.info("Starting the SFT stage at the step %d.", start)

    for step in range(start, start + total):
        batch = []

        for index in range(config.sft_batch_size):
            episode = task.sample_episode(
                get_stream(seed, "sft", step, "episode", index),
                episode_id=index
            )
            batch.append((episode, task.gold_steps(episode)))

        params.zero_grad()

        with ad.Graph() as graph:
            loss = sft_loss(batch, params, config.sft_lambda)

        _backward(graph, loss.total)
        grads = params.grads()
        norm = clip_grad_norm(grads, config.max_grad_norm)
        adam_step(params, grads, optimizer)

        log.debug(
            "SFT step %d: loss %f, gradient norm %f.", step,
            loss.total.item(), norm
        )

        if metrics is not None:
            metrics.emit({
                "step": step,
                "epoch": step // max(config.sft_steps_per_epoch, 1),
                "loss": loss.total.item(),
                "cross_entropy": loss.cross_entropy.item(),
                "canvas": loss.canvas.item(),
            })

    log.info("Finished the SFT stage after %d steps.", total)

    return Checkpoint(
        stage=STAGE_SFT,
        params=params.copy(requires_grad=False),
        config=config,
        optimizer=optimizer,
        rng_state={"seed": seed, "counter": start + total}
    )


def _abs_stats(values):
    if not values.size:
        return 0.0, 0.0

    magnitudes = np.abs(values)
    return float(np.mean(magnitudes)), float(np.max(magnitudes))


def _rl_row(step, groups, kept):
    trajectories = [t for g in groups for t in g.trajectories]

    return {
        "step": step,
        "skipped": int(not kept),
        "reward_mean": float(np.mean([t.reward.total for t in trajectories])),
        "accuracy": float(np.mean([t.reward.accuracy for t in trajectories])),
        "format_rate": float(np.mean(
            [t.reward.format_ok for t in trajectories]
        )),
        "discard_rate": 1.0 - len(kept) / len(groups),
        "kept_groups": len(kept),
    }


def run_rl(checkpoint, task, steps, config, seed, metrics=None):
    """Run the reinforcement stage.

    Every step snapshots the parameters as the old policy, collects
    and filters groups of rollouts, computes the group advantages and
    applies ppo_epochs updates of the total objective. The parameters
    of a supervised checkpoint become the frozen reference policy.
    A checkpoint of the reinforcement stage is resumed.

    :param checkpoint: a checkpoint of the stage SFT or RL
    :param task: a task
    :param steps: a number of steps
    :param config: an instance of RunConfig
    :param seed: a master seed
    :param metrics: a Signal of metric rows or None
    :return: a checkpoint of the stage RL
    """
    if checkpoint.stage == STAGE_SFT:
        reference = checkpoint.params.copy(requires_grad=False)
        params = checkpoint.params.copy(requires_grad=True)
        optimizer = OptimizerState.create(params, config.rl_lr, config)
        start = 0
    elif checkpoint.stage == STAGE_RL:
        reference = checkpoint.reference
        params = checkpoint.params.copy(requires_grad=True)
        optimizer = checkpoint.optimizer.copy()
        start = checkpoint.rng_state["counter"]
    else:
        raise CheckpointError(
            "Stage '{}' cannot start the RL stage.".format(checkpoint.stage)
        )

    vmf = VmfParams.from_config(config, params.dims.hidden_dim)
    reference_digest = reference.fingerprint()
    log.info(
        "Starting the RL stage at the step %d with %r.", start, vmf
    )

    for step in range(start, start + steps):
        snapshot = params.copy(requires_grad=False)
        episodes = [
            task.sample_episode(
                get_stream(seed, "rl", step, "episode", index),
                episode_id=index
            )
            for index in range(config.groups_per_step)
        ]
        groups = collect_groups(
            snapshot, episodes, config, seed, namespace=("rl", step),
            workers=config.workers
        )
        kept = filter_groups(groups, config.filter_lo, config.filter_hi)
        row = _rl_row(step, groups, kept)

        if not kept:
            log.warning("All groups of the step %d discarded.", step)

            if metrics is not None:
                metrics.emit(row)

            continue

        for group in kept:
            group.assign_advantages(config.advantage_eps)

        for _ in range(config.ppo_epochs):
            params.zero_grad()

            with ad.Graph() as graph:
                breakdown, stats = compute_rl_loss(
                    kept, params, reference, config, vmf
                )

            _backward(graph, breakdown.l_total)
            grads = params.grads()
            clip_grad_norm(grads, config.max_grad_norm)
            adam_step(params, grads, optimizer)

        tok_mean, tok_max = _abs_stats(stats.token_log_ratios)
        lat_mean, lat_max = _abs_stats(stats.latent_log_ratios)
        row.update(breakdown.values())
        row.update({
            "num_text": breakdown.num_text,
            "num_latent": breakdown.num_latent,
            "tok_mean_abs_log_ratio": tok_mean,
            "tok_max_abs_log_ratio": tok_max,
            "lat_mean_abs_log_ratio": lat_mean,
            "lat_max_abs_log_ratio": lat_max,
            "tok_clip_fraction": stats.token_clip_fraction,
            "lat_clip_fraction": stats.latent_clip_fraction,
        })

        log.debug(
            "RL step %d: accuracy %f, %d groups kept.",
            step, row["accuracy"], len(kept)
        )

        if metrics is not None:
            metrics.emit(row)

    if reference.fingerprint() != reference_digest:
        raise OptimizerError("The reference policy has changed.")

    log.info("Finished the RL stage after %d steps.", steps)

    return Checkpoint(
        stage=STAGE_RL,
        params=params.copy(requires_grad=False),
        config=config,
        optimizer=optimizer,
        rng_state={"seed": seed, "counter": start + steps},
        reference=reference
    )


def evaluate(params, task, config, episodes, seed, canvas_budget=None):
    """Evaluate the policy with greedy decoding on fresh episodes.

    :param params: an instance of PolicyParams
    :param task: a task
    :param config: an instance of RunConfig
    :param episodes: a number of episodes
    :param seed: a master seed
    :param canvas_budget: a canvas budget overriding the config or None
    :return: a map of summary values
    """
    decode = config.extract(type(config))
    decode.temperature = 0.0

    if canvas_budget is not None:
        decode.canvas_budget = canvas_budget

    accuracy, format_ok, reward = 0, 0, 0.0
    lengths, forced = [], 0

    for index in range(episodes):
        episode = task.sample_episode(
            get_stream(seed, "eval", index), episode_id=index
        )
        trajectory = generate_trajectory(
            params, episode, decode, get_stream(seed, "eval", index, "decode"),
            relaxed=config.relaxed
        )
        record = score(episode, trajectory, config.format_weight)
        accuracy += record.accuracy
        format_ok += record.format_ok
        reward += record.total
        lengths.extend(trajectory.canvas_lengths())
        forced += trajectory.forced_exits

    def ratio(count, total):
        return count / total if total else 0.0

    if decode.canvas_budget and ratio(forced, len(lengths)) > 0.5:
        log.warning("The budget %d closed %d of %d canvases.",
                    decode.canvas_budget, forced, len(lengths))

    return {
        "episodes": episodes,
        "canvas_budget": decode.canvas_budget,
        "accuracy": ratio(accuracy, episodes),
        "format_rate": ratio(format_ok, episodes),
        "mean_reward": ratio(reward, episodes),
        "canvases": len(lengths),
        "mean_canvas_length": ratio(sum(lengths), len(lengths)),
        "forced_exit_fraction": ratio(forced, len(lengths)),
    }
