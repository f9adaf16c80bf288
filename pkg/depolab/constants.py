#
# Constants of the laboratory
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

# Number of content tokens. Content tokens have the ids 0 .. 15.
CONTENT_VOCAB_SIZE = 16

# Reserved control tokens, placed right after the content tokens.
CANVAS_START = 16
CANVAS_END = 17
ANSWER = 18
EOS = 19

CONTROL_TOKENS = (CANVAS_START, CANVAS_END, ANSWER, EOS)

# Names of the control tokens for readable traces.
TOKEN_NAMES = {
    CANVAS_START: "<|canvas_start|>",
    CANVAS_END: "<|canvas_end|>",
    ANSWER: "<answer>",
    EOS: "<eos>",
}

# Smallest norm of a vector that still has a direction.
MIN_DIRECTION_NORM = 1e-12

# Version of the checkpoint container.
CHECKPOINT_FORMAT_VERSION = 1

# Environment variable overriding the output directory.
OUTPUT_DIR_VARIABLE = "DEPOLAB_OUT_DIR"

# Names of the output files.
CONFIG_FILE_NAME = "config.txt"
METRICS_FILE_NAME = "metrics.csv"
SUMMARY_FILE_NAME = "summary.json"
RATIO_SWEEP_FILE_NAME = "ratio_sweep.csv"
KL_VERIFY_FILE_NAME = "kl_verify.csv"
KTEST_SWEEP_FILE_NAME = "ktest_sweep.csv"
GRADCHECK_FILE_NAME = "gradcheck.txt"
CHECKPOINT_FILE_NAME = "checkpoint_{}.json"

# Stage tags of checkpoints.
STAGE_INIT = "INIT"
STAGE_SFT = "SFT"
STAGE_RL = "RL"

# Kinds of trajectory positions.
KIND_TOKEN = "TOKEN"
KIND_LATENT = "LATENT"

# Latent densities of the RL objective.
LATENT_VMF = "vmf"
LATENT_GAUSSIAN = "gaussian"

# Names of the synthetic tasks.
TASK_LATENT_RETRIEVAL = "latent_retrieval"
TASK_PARITY_MEMORY = "parity_memory"
