#
# Configuration of the laboratory
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
# Defaults marked "published" are published hyperparameters,
# defaults marked "desk" are decisions for the 32-dimensional toy scale.
#
from depolab.constants import CONTENT_VOCAB_SIZE, CONTROL_TOKENS, \
    LATENT_VMF, LATENT_GAUSSIAN, TASK_LATENT_RETRIEVAL, TASK_PARITY_MEMORY
from depolab.error import ConfigError
from depolab.structure import ConfigData
from depolab.typing import Bool, Double, Int, Str

__all__ = [
    "PolicyDims",
    "TaskConfig",
    "DecodeConfig",
    "DepoConfig",
    "OptimizerConfig",
    "RolloutConfig",
    "RunConfig",
]


def _require(condition, message, *args):
    if not condition:
        raise ConfigError(message.format(*args))


class PolicyDims(ConfigData):
    """Dimensions of the hybrid recurrent policy (desk)."""

    vocab_size: Int = 24
    hidden_dim: Int = 32
    input_dim: Int = 32
    obs_dim: Int = 16

    def validate(self):
        super().validate()
        minimum = CONTENT_VOCAB_SIZE + len(CONTROL_TOKENS)
        _require(
            self.vocab_size >= minimum,
            "Field 'vocab_size' must be at least {}.", minimum
        )
        _require(self.hidden_dim >= 2, "Field 'hidden_dim' must be >= 2.")
        _require(self.input_dim >= 1, "Field 'input_dim' must be >= 1.")
        _require(self.obs_dim >= 1, "Field 'obs_dim' must be >= 1.")


class TaskConfig(ConfigData):
    """Synthetic task and reward settings."""

    task: Str = TASK_LATENT_RETRIEVAL
    retrieval_pairs: Int = 4
    parity_bits: Int = 8
    # Seed of the fixed tables of a task, independent of the run seed.
    table_seed: Int = 0
    # Weight of the format reward (desk).
    format_weight: Double = 0.1
    # Latent steps of the gold SFT trajectories (desk; published: 8).
    sft_canvas_length: Int = 4

    def validate(self):
        super().validate()
        _require(
            self.task in (TASK_LATENT_RETRIEVAL, TASK_PARITY_MEMORY),
            "Unknown task '{}'.", self.task
        )
        _require(
            1 <= self.retrieval_pairs <= CONTENT_VOCAB_SIZE,
            "Field 'retrieval_pairs' must be in [1, {}].", CONTENT_VOCAB_SIZE
        )
        _require(self.parity_bits >= 1, "Field 'parity_bits' must be >= 1.")
        _require(self.table_seed >= 0, "Field 'table_seed' must be >= 0.")
        _require(
            self.format_weight >= 0,
            "Field 'format_weight' must be nonnegative."
        )
        _require(
            self.sft_canvas_length >= 1,
            "Field 'sft_canvas_length' must be >= 1."
        )


class DecodeConfig(ConfigData):
    """Settings of the trajectory generation."""

    # Sampling temperature (published: 0.9); zero means greedy decoding.
    temperature: Double = 0.9
    # Maximal number of generated positions (desk; published: 2048).
    max_length: Int = 64
    # Maximal number of latent steps of one canvas segment.
    canvas_budget: Int = 8
    # Probability of CANVAS_END that closes a canvas early.
    canvas_exit_threshold: Double = 0.5

    def validate(self):
        super().validate()
        _require(self.temperature >= 0, "Field 'temperature' must be >= 0.")
        _require(self.max_length >= 1, "Field 'max_length' must be >= 1.")
        _require(
            self.canvas_budget >= 0,
            "Field 'canvas_budget' must be >= 0."
        )
        _require(
            0 < self.canvas_exit_threshold <= 1,
            "Field 'canvas_exit_threshold' must be in (0, 1]."
        )


class DepoConfig(ConfigData):
    """Settings of the decoupled policy optimization objective."""

    # Token clipping range (published).
    eps_tok_lo: Double = 0.2
    eps_tok_hi: Double = 0.28
    # Latent clipping range (published).
    eps_lat_lo: Double = 0.05
    eps_lat_hi: Double = 0.05
    # Weight of the latent surrogate (published).
    alpha: Double = 0.5
    # Weights of the KL penalties (published).
    beta_tok: Double = 0.01
    beta_lat: Double = 0.005
    # Floor of the dual-clip surrogate (desk).
    dual_clip_c: Double = 3.0
    # Use inner products instead of cosines (published: relaxed).
    relaxed: Bool = True
    # Concentration of the latent vMF policy (desk).
    kappa: Double = 0.01
    # Weight of the latent KL; negative means kappa * A_D(kappa).
    w_kappa: Double = -1.0
    # Latent density of the ratio: "vmf" or the "gaussian" ablation.
    latent_distribution: Str = LATENT_VMF
    # Scale of the Gaussian ablation (published).
    gaussian_sigma: Double = 10.0

    def validate(self):
        super().validate()

        for name in ("eps_tok_lo", "eps_tok_hi", "eps_lat_lo", "eps_lat_hi"):
            value = getattr(self, name)
            _require(0 < value < 1, "Field '{}' must be in (0, 1).", name)

        _require(
            self.dual_clip_c > 1 + self.eps_tok_hi,
            "Field 'dual_clip_c' must exceed 1 + eps_tok_hi."
        )
        _require(self.alpha >= 0, "Field 'alpha' must be nonnegative.")
        _require(self.beta_tok >= 0, "Field 'beta_tok' must be nonnegative.")
        _require(self.beta_lat >= 0, "Field 'beta_lat' must be nonnegative.")
        _require(self.kappa > 0, "Field 'kappa' must be positive.")
        _require(
            self.latent_distribution in (LATENT_VMF, LATENT_GAUSSIAN),
            "Unknown latent distribution '{}'.", self.latent_distribution
        )
        _require(
            self.gaussian_sigma > 0,
            "Field 'gaussian_sigma' must be positive."
        )
        _require(
            self.relaxed or self.latent_distribution != LATENT_GAUSSIAN,
            "The Gaussian latent distribution requires 'relaxed'."
        )


class OptimizerConfig(ConfigData):
    """Settings of the AdamW optimizer."""

    # Learning rates (desk; published: 1e-5 and 1e-6).
    sft_lr: Double = 3e-3
    rl_lr: Double = 1e-4
    adam_beta1: Double = 0.9
    adam_beta2: Double = 0.999
    adam_eps: Double = 1e-8
    # Decoupled weight decay (published).
    weight_decay: Double = 0.01
    # Maximal global norm of the gradients; zero disables the clipping.
    max_grad_norm: Double = 1.0

    def validate(self):
        super().validate()
        _require(self.sft_lr > 0, "Field 'sft_lr' must be positive.")
        _require(self.rl_lr > 0, "Field 'rl_lr' must be positive.")
        _require(
            0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1,
            "Adam betas must be in [0, 1)."
        )
        _require(self.adam_eps > 0, "Field 'adam_eps' must be positive.")
        _require(
            self.weight_decay >= 0,
            "Field 'weight_decay' must be nonnegative."
        )
        _require(
            self.max_grad_norm >= 0,
            "Field 'max_grad_norm' must be nonnegative."
        )


class RolloutConfig(ConfigData):
    """Settings of the group rollouts and their filtering."""

    # Rollouts per episode (published).
    group_size: Int = 8
    # Groups per optimizer step (desk; published batch: 64).
    groups_per_step: Int = 16
    # Valid range of the group mean accuracy (published).
    filter_lo: Double = 0.1
    filter_hi: Double = 0.9
    advantage_eps: Double = 1e-6
    # Threads generating the rollouts of one step.
    workers: Int = 1

    def validate(self):
        super().validate()
        _require(self.group_size >= 2, "Field 'group_size' must be >= 2.")
        _require(
            self.groups_per_step >= 1,
            "Field 'groups_per_step' must be >= 1."
        )
        _require(
            0 <= self.filter_lo < self.filter_hi <= 1,
            "Filter range must satisfy 0 <= filter_lo < filter_hi <= 1."
        )
        _require(
            self.advantage_eps > 0,
            "Field 'advantage_eps' must be positive."
        )
        _require(self.workers >= 1, "Field 'workers' must be >= 1.")


class RunConfig(PolicyDims, TaskConfig, DecodeConfig, DepoConfig,
                OptimizerConfig, RolloutConfig):
    """The fully resolved configuration of one run."""

    seed: Int = 0
    out_dir: Str = "runs/default"
    # Supervised stage (published: a single epoch).
    sft_epochs: Int = 1
    sft_steps_per_epoch: Int = 1500
    sft_batch_size: Int = 16
    # Weight of the canvas loss (desk).
    sft_lambda: Double = 1.0
    # Reinforcement stage.
    rl_steps: Int = 500
    # Optimizer updates per rollout batch against one snapshot.
    ppo_epochs: Int = 2
    # Evaluation and diagnostics.
    eval_episodes: Int = 1000
    # Concentration of the ratio sweep; zero means the hidden size.
    diag_kappa: Double = 0.0
    diag_trials: Int = 16
    diag_episodes: Int = 8

    def validate(self):
        super().validate()
        _require(self.seed >= 0, "Field 'seed' must be nonnegative.")
        _require(self.sft_epochs >= 0, "Field 'sft_epochs' must be >= 0.")
        _require(
            self.sft_steps_per_epoch >= 0,
            "Field 'sft_steps_per_epoch' must be >= 0."
        )
        _require(
            self.sft_batch_size >= 1,
            "Field 'sft_batch_size' must be >= 1."
        )
        _require(self.sft_lambda >= 0, "Field 'sft_lambda' must be >= 0.")
        _require(self.rl_steps >= 0, "Field 'rl_steps' must be >= 0.")
        _require(self.ppo_epochs >= 1, "Field 'ppo_epochs' must be >= 1.")
        _require(
            self.eval_episodes >= 0,
            "Field 'eval_episodes' must be >= 0."
        )
        _require(self.diag_kappa >= 0, "Field 'diag_kappa' must be >= 0.")
        _require(self.diag_trials >= 1, "Field 'diag_trials' must be >= 1.")
        _require(
            self.diag_episodes >= 1,
            "Field 'diag_episodes' must be >= 1."
        )
