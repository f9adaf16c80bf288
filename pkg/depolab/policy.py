#
# The hybrid recurrent policy
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
import hashlib
import logging

import numpy as np

from depolab import autodiff as ad
from depolab.config import PolicyDims
from depolab.constants import CANVAS_START, CANVAS_END, EOS, \
    KIND_TOKEN, KIND_LATENT, TOKEN_NAMES
from depolab.error import DepolabError

log = logging.getLogger(__name__)

__all__ = [
    "PolicyError",
    "PolicyParams",
    "HybridStep",
    "Trajectory",
    "step_core",
    "latent_step",
    "logits",
    "token_logprobs",
    "unified_logprob",
    "encode_prompt",
    "generate_trajectory",
    "replay_states",
    "replay_logprobs",
]


class PolicyError(DepolabError):
    """Exception for invalid use of the policy."""
    pass


class PolicyParams(object):
    """Weights of the hybrid recurrent policy.

    The arrays are held by leaf tensors, so the optimizer updates
    their values in place and the gradients are attached to them.
    The dimension adapter P is fixed and never trained.
    """

    # Names of the trained arrays in the canonical order.
    NAMES = ("E", "W_h", "W_x", "b_h", "W_m", "b_m", "W_o")

    def __init__(self, arrays, requires_grad=True):
        """Create the parameters.

        :param arrays: a map of array names and arrays
        :param requires_grad: are the parameters trained?
        :raise PolicyError: if the arrays are inconsistent
        """
        missing = set(self.NAMES) - set(arrays)
        unknown = set(arrays) - set(self.NAMES)

        if missing or unknown:
            raise PolicyError(
                "Invalid arrays: missing {}, unknown {}.".format(
                    sorted(missing), sorted(unknown)
                )
            )

        self._tensors = {
            name: ad.Tensor(arrays[name], requires_grad=requires_grad)
            for name in self.NAMES
        }

        self._dims = self._infer_dims()
        self._adapter = ad.Tensor(np.eye(
            self._dims.input_dim, self._dims.hidden_dim
        ))

    def _infer_dims(self):
        vocab, input_dim = self["E"].shape
        hidden_dim = self["W_h"].shape[0]
        obs_dim = self["W_o"].shape[1]

        expected = {
            "E": (vocab, input_dim),
            "W_h": (hidden_dim, hidden_dim),
            "W_x": (hidden_dim, input_dim),
            "b_h": (hidden_dim, ),
            "W_m": (vocab, hidden_dim),
            "b_m": (vocab, ),
            "W_o": (input_dim, obs_dim),
        }

        for name, shape in expected.items():
            if self[name].shape != shape:
                raise PolicyError(
                    "Array '{}' has shape {}, expected {}.".format(
                        name, self[name].shape, shape
                    )
                )

        return PolicyDims(
            vocab_size=vocab,
            hidden_dim=hidden_dim,
            input_dim=input_dim,
            obs_dim=obs_dim
        )

    @classmethod
    def initialize(cls, dims, rng):
        """Create randomly initialized parameters.

        The recurrent weights start at the identity, so the state of
        the core and of the canvas recursion is carried over unchanged
        up to the inputs. The input weights are drawn from
        N(0, 1/(4 fan_in)), the head from N(0, 1/fan_in), the
        embeddings and the observation projector from N(0, 1) and the
        biases are zero.

        :param dims: an instance of PolicyDims
        :param rng: an instance of numpy.random.Generator
        :return: an instance of PolicyParams
        """
        v, d, d_in, d_obs = \
            dims.vocab_size, dims.hidden_dim, dims.input_dim, dims.obs_dim

        return cls({
            "E": rng.standard_normal((v, d_in)),
            "W_h": np.eye(d),
            "W_x": rng.standard_normal((d, d_in)) / (2.0 * np.sqrt(d_in)),
            "b_h": np.zeros(d),
            "W_m": rng.standard_normal((v, d)) / np.sqrt(d),
            "b_m": np.zeros(v),
            "W_o": rng.standard_normal((d_in, d_obs)),
        })

    @classmethod
    def zeros(cls, dims):
        """Create parameters with all arrays zero."""
        v, d, d_in, d_obs = \
            dims.vocab_size, dims.hidden_dim, dims.input_dim, dims.obs_dim

        return cls({
            "E": np.zeros((v, d_in)),
            "W_h": np.zeros((d, d)),
            "W_x": np.zeros((d, d_in)),
            "b_h": np.zeros(d),
            "W_m": np.zeros((v, d)),
            "b_m": np.zeros(v),
            "W_o": np.zeros((d_in, d_obs)),
        })

    @property
    def dims(self):
        """Dimensions of the policy."""
        return self._dims

    @property
    def adapter(self):
        """The fixed map P from the hidden to the input space."""
        return self._adapter

    def __getitem__(self, name):
        return self._tensors[name]

    def arrays(self):
        """Return a map of array names and arrays.

        The arrays are not copied.
        """
        return {name: self._tensors[name].values for name in self.NAMES}

    def items(self):
        """Return pairs of names and tensors in the canonical order."""
        return [(name, self._tensors[name]) for name in self.NAMES]

    def copy(self, requires_grad=False):
        """Return a deep copy, frozen by default.

        :param requires_grad: is the copy trained?
        :return: an instance of PolicyParams
        """
        return PolicyParams(self.arrays(), requires_grad=requires_grad)

    def zero_grad(self):
        """Forget the accumulated gradients."""
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def grads(self):
        """Return a map of array names and gradients.

        Missing gradients are zero.
        """
        return {
            name: tensor.grad if tensor.grad is not None
            else np.zeros_like(tensor.values)
            for name, tensor in self.items()
        }

    def flatten(self):
        """Concatenate all arrays into one vector."""
        return np.concatenate([
            self._tensors[name].values.reshape(-1) for name in self.NAMES
        ])

    def assign_flat(self, vector):
        """Overwrite all arrays from one vector in place."""
        offset = 0

        for name in self.NAMES:
            values = self._tensors[name].values
            values[...] = vector[offset:offset + values.size].reshape(
                values.shape
            )
            offset += values.size

    def fingerprint(self):
        """Return a digest of all arrays."""
        digest = hashlib.sha256()

        for name in self.NAMES:
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self[name].values).tobytes())

        return digest.hexdigest()

    def check_dims(self, dims):
        """Check the parameters against configured dimensions.

        :param dims: an instance of PolicyDims
        :raise PolicyError: if the dimensions differ
        """
        for name in ("vocab_size", "hidden_dim", "input_dim", "obs_dim"):
            actual = getattr(self._dims, name)
            expected = getattr(dims, name)

            if actual != expected:
                raise PolicyError(
                    "Dimension '{}' is {}, expected {}.".format(
                        name, actual, expected
                    )
                )


class HybridStep(object):
    """One position of a trajectory.

    A token step holds the emitted token and the log-probability
    recorded at the rollout. A latent step holds the recorded latent
    action. Gold trajectories carry no rollout log-probability.
    """

    __slots__ = ["_kind", "_position", "_token_id", "_old_logprob",
                 "_z_tilde"]

    def __init__(self, kind, position, token_id=None, old_logprob=None,
                 z_tilde=None):
        if kind == KIND_TOKEN:
            valid = token_id is not None and z_tilde is None
        elif kind == KIND_LATENT:
            valid = token_id is None and old_logprob is None \
                and z_tilde is not None
        else:
            raise PolicyError("Unknown kind '{}'.".format(kind))

        if not valid:
            raise PolicyError(
                "Invalid fields of a step of the kind '{}'.".format(kind)
            )

        self._kind = kind
        self._position = position
        self._token_id = token_id
        self._old_logprob = old_logprob
        self._z_tilde = None if z_tilde is None \
            else np.array(z_tilde, dtype=np.float64)

    @classmethod
    def token(cls, position, token_id, old_logprob=None):
        """Create a token step."""
        return cls(KIND_TOKEN, position, token_id=int(token_id),
                   old_logprob=old_logprob)

    @classmethod
    def latent(cls, position, z_tilde):
        """Create a latent step."""
        return cls(KIND_LATENT, position, z_tilde=z_tilde)

    @property
    def kind(self):
        return self._kind

    @property
    def position(self):
        return self._position

    @property
    def token_id(self):
        return self._token_id

    @property
    def old_logprob(self):
        return self._old_logprob

    @property
    def z_tilde(self):
        return self._z_tilde

    @property
    def is_latent(self):
        return self._kind == KIND_LATENT

    def __repr__(self):
        if self.is_latent:
            return "HybridStep(LATENT, {})".format(self._position)

        return "HybridStep(TOKEN, {}, {})".format(
            self._position, TOKEN_NAMES.get(self._token_id, self._token_id)
        )


class Trajectory(object):
    """Ordered positions of one episode.

    The text positions Z and the latent positions S partition
    the positions by the kind of their steps.
    """

    def __init__(self, episode_id, steps, forced_exits=0):
        """Create a trajectory.

        :param episode_id: an identifier of the episode
        :param steps: a list of HybridSteps
        :param forced_exits: a number of canvases closed by the budget
        """
        self.episode_id = episode_id
        self.steps = list(steps)
        self.forced_exits = forced_exits
        self.reward = None
        self.advantage = None

    def __len__(self):
        return len(self.steps)

    @property
    def text_positions(self):
        """Positions of the token steps."""
        return [s.position for s in self.steps if not s.is_latent]

    @property
    def latent_positions(self):
        """Positions of the latent steps."""
        return [s.position for s in self.steps if s.is_latent]

    @property
    def tokens(self):
        """Token ids of the token steps in order."""
        return [s.token_id for s in self.steps if not s.is_latent]

    def canvas_lengths(self):
        """Return the number of latent steps of every canvas segment."""
        lengths = []
        current = None

        for step in self.steps:
            if step.is_latent:
                if current is not None:
                    current += 1
            elif step.token_id == CANVAS_START:
                current = 0
            elif step.token_id == CANVAS_END and current is not None:
                lengths.append(current)
                current = None

        return lengths

    def check(self, canvas_budget):
        """Check the structure of the trajectory.

        :param canvas_budget: a maximal length of a canvas segment
        :raise PolicyError: if the structure is broken
        """
        current = None

        for index, step in enumerate(self.steps):
            if step.position != index:
                raise PolicyError("Step {} has a wrong position.".format(
                    index
                ))

            if step.is_latent:
                if current is None:
                    raise PolicyError(
                        "Latent step {} is outside of a canvas.".format(index)
                    )

                current += 1

                if current > canvas_budget:
                    raise PolicyError(
                        "Canvas at {} exceeds the budget.".format(index)
                    )

            elif current is not None:
                if step.token_id != CANVAS_END:
                    raise PolicyError(
                        "Canvas at {} is not closed.".format(index)
                    )
                current = None

            elif step.token_id == CANVAS_START:
                current = 0

        if current is not None:
            raise PolicyError("Canvas at the end is not closed.")

    def __repr__(self):
        return "Trajectory(episode={}, steps={})".format(
            self.episode_id, len(self.steps)
        )


def step_core(h_prev, x, params):
    """Advance the recurrent core by one input.

    :param h_prev: a hidden state of dimension D
    :param x: an input of dimension D_in
    :param params: an instance of PolicyParams
    :return: tanh(W_h h_prev + W_x x + b_h)
    """
    pre = ad.add(
        ad.add(ad.matvec(params["W_h"], h_prev), ad.matvec(params["W_x"], x)),
        params["b_h"]
    )
    return ad.tanh(pre)


def latent_step(h_prev, params):
    """Feed the hidden state back as the next input."""
    return step_core(h_prev, ad.matvec(params.adapter, h_prev), params)


def logits(h, params):
    """Compute the logits of the token head."""
    return ad.add(ad.matvec(params["W_m"], h), params["b_m"])


def token_logprobs(h, params):
    """Compute the log-probabilities of all tokens.

    :param h: a hidden state
    :param params: an instance of PolicyParams
    :return: a tensor of the dimension V
    """
    return ad.log_softmax(logits(h, params))


def unified_logprob(step, h, params, vmf, relaxed):
    """Compute the log-probability of a hybrid action.

    A token action is scored by the head. A latent action z is
    scored by log C_D(kappa) + kappa * score(h, z), where the score
    is the cosine or the raw inner product in the relaxed mode.

    :param step: an instance of HybridStep
    :param h: a hidden state at the position of the step
    :param params: an instance of PolicyParams
    :param vmf: an instance of VmfParams
    :param relaxed: use raw inner products?
    :return: a scalar tensor
    """
    if not isinstance(step, HybridStep):
        raise PolicyError("Invalid step '{}'.".format(step))

    if not step.is_latent:
        return ad.log_softmax_select(logits(h, params), step.token_id)

    z = ad.Tensor(step.z_tilde)

    if relaxed:
        score = ad.dot(h, z)
    else:
        score = ad.dot(ad.normalize(h), ad.normalize(z))

    return ad.add(ad.scale(score, vmf.kappa), ad.Tensor(vmf.log_normalizer))


def encode_prompt(params, episode):
    """Feed the observations and the prompt tokens to the core.

    :param params: an instance of PolicyParams
    :param episode: an episode with observations and prompt tokens
    :return: the hidden state after the prompt
    :raise PolicyError: if an observation has a wrong dimension
    """
    h = ad.Tensor(np.zeros(params.dims.hidden_dim))

    for observation in episode.observations:
        observation = np.asarray(observation, dtype=np.float64)

        if observation.shape != (params.dims.obs_dim, ):
            raise PolicyError(
                "Observation of shape {} doesn't match the dimension "
                "{}.".format(observation.shape, params.dims.obs_dim)
            )

        h = step_core(h, ad.matvec(params["W_o"], observation), params)

    for token in episode.prompt_tokens:
        h = step_core(h, ad.row(params["E"], token), params)

    return h


def _sample_token(h, params, temperature, rng, exclude=None):
    scores = logits(h, params).values

    if exclude is not None:
        scores = scores.copy()
        scores[exclude] = -np.inf

    if temperature == 0:
        return int(np.argmax(scores))

    scaled = scores / temperature
    probs = np.exp(scaled - np.max(scaled))
    probs /= probs.sum()
    return int(rng.choice(probs.size, p=probs))


def _end_probability(h, params):
    return float(np.exp(token_logprobs(h, params).values[CANVAS_END]))


def _latent_action(h, relaxed):
    if relaxed:
        return h.values.copy()

    return ad.normalize(h).values


def generate_trajectory(params, episode, decode, rng, relaxed=True,
                        prefix=()):
    """Generate one trajectory of the policy.

    Tokens are sampled at the decode temperature and recorded with
    their untempered log-probabilities. CANVAS_START opens a canvas
    of deterministic latent steps, which is closed by a CANVAS_END
    step once the head gives CANVAS_END a probability above the exit
    threshold, or after the canvas budget. EOS or the maximal length
    ends the trajectory.

    :param params: a frozen snapshot of PolicyParams
    :param episode: an episode
    :param decode: an instance of DecodeConfig
    :param rng: an instance of numpy.random.Generator
    :param relaxed: keep raw hidden states as latent actions?
    :param prefix: tokens emitted before any sampling
    :return: an instance of Trajectory
    """
    h = encode_prompt(params, episode)
    steps = []
    forced = list(prefix)
    forced_exits = 0

    def emit(token, state):
        logprob = ad.log_softmax_select(logits(state, params), token).item()
        steps.append(HybridStep.token(len(steps), token, logprob))
        return step_core(state, ad.row(params["E"], token), params)

    while len(steps) < decode.max_length:
        # No canvas opens at the last position.
        last = len(steps) == decode.max_length - 1

        if forced:
            token = forced.pop(0)
        else:
            token = _sample_token(
                h, params, decode.temperature, rng,
                exclude=CANVAS_START if last else None
            )

        if token == CANVAS_START and last:
            break

        h = emit(token, h)

        if token == EOS:
            break

        if token != CANVAS_START:
            continue

        # Keep one position for the closing token.
        budget = min(decode.canvas_budget, decode.max_length - len(steps) - 1)
        closed = False

        for _ in range(budget):
            h = latent_step(h, params)
            steps.append(HybridStep.latent(
                len(steps), _latent_action(h, relaxed)
            ))

            if _end_probability(h, params) > decode.canvas_exit_threshold:
                closed = True
                break

        if not closed and budget > 0:
            forced_exits += 1

        h = emit(CANVAS_END, h)

    log.debug(
        "Generated %d steps for the episode %s.", len(steps),
        episode.episode_id
    )
    return Trajectory(episode.episode_id, steps, forced_exits)


def replay_states(params, episode, steps):
    """Replay stored steps through the policy.

    :param params: an instance of PolicyParams
    :param episode: the episode of the steps
    :param steps: a list of HybridSteps
    :return: a list of hidden states, one per step
    """
    h = encode_prompt(params, episode)
    states = []

    for step in steps:
        if step.is_latent:
            h = latent_step(h, params)
            states.append(h)
        else:
            states.append(h)
            h = step_core(h, ad.row(params["E"], step.token_id), params)

    return states


def replay_logprobs(params, episode, trajectory, vmf, relaxed):
    """Recompute the unified log-probabilities of a trajectory.

    :param params: an instance of PolicyParams
    :param episode: the episode of the trajectory
    :param trajectory: an instance of Trajectory
    :param vmf: an instance of VmfParams
    :param relaxed: use raw inner products?
    :return: a list of scalar tensors, one per step
    """
    states = replay_states(params, episode, trajectory.steps)

    return [
        unified_logprob(step, h, params, vmf, relaxed)
        for step, h in zip(trajectory.steps, states)
    ]
