#
# Verification experiments of the objectives
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
import math
from collections import namedtuple

import numpy as np

from depolab import autodiff as ad
from depolab.config import RunConfig
from depolab.constants import CANVAS_START, KIND_TOKEN, KIND_LATENT, \
    LATENT_GAUSSIAN
from depolab.error import DepolabError
from depolab.losses import compute_rl_loss, depo_policy_loss, \
    latent_kl_loss, token_kl_loss, sft_loss, surrogate_clip
from depolab.namespace import get_stream
from depolab.policy import PolicyParams, generate_trajectory, replay_states, \
    logits
from depolab.tasks import LatentRetrieval
from depolab.trainer import evaluate
from depolab.vmf import VmfParams, vmf_log_ratio, vmf_kl, mc_kl_estimate

log = logging.getLogger(__name__)

__all__ = [
    "DiagnosticsError",
    "RatioRow",
    "RatioSweepResult",
    "KlCheck",
    "KlReport",
    "GradcheckEntry",
    "GradcheckReport",
    "RATIO_COLUMNS",
    "KL_COLUMNS",
    "KTEST_COLUMNS",
    "DEFAULT_MAGNITUDES",
    "ratio_mismatch_experiment",
    "random_kl_configs",
    "verify_vmf_kl",
    "gradcheck_config",
    "gradcheck_all",
    "ktest_sweep",
]

# Perturbation magnitudes of the ratio sweep.
DEFAULT_MAGNITUDES = (0.0, 0.005, 0.01, 0.02, 0.05, 0.1)

# Smallest sample count of the KL verification.
KL_MIN_SAMPLES = 10 ** 5

# Number of standard errors tolerated by the KL verification.
KL_TOLERANCE = 3.0

# Absolute slack of the KL verification for vanishing errors.
KL_FLOOR = 1e-12

# Step and tolerances of the gradient checks.
GRADCHECK_STEP = 1e-5
GRADCHECK_RTOL = 1e-4
GRADCHECK_ATOL = 1e-8

# Ratios closer than this to a kink of the surrogate are excluded.
KINK_MARGIN = 1e-3

# Micro-batches drawn before giving up on avoiding the kinks.
MICRO_BATCH_ATTEMPTS = 16

RATIO_COLUMNS = (
    "kappa",
    "magnitude",
    "kind",
    "mean_ratio",
    "std_ratio",
    "max_abs_log_ratio",
    "count",
)

KL_COLUMNS = (
    "dim",
    "kappa",
    "angle_deg",
    "closed_form",
    "mc_estimate",
    "stderr",
    "status",
)

KTEST_COLUMNS = (
    "checkpoint",
    "k_test",
    "episodes",
    "accuracy",
    "format_rate",
    "mean_reward",
    "mean_canvas_length",
)


class DiagnosticsError(DepolabError):
    """Exception for invalid diagnostics."""
    pass


RatioRow = namedtuple("RatioRow", [
    "kappa",
    "magnitude",
    "kind",
    "mean_ratio",
    "std_ratio",
    "max_abs_log_ratio",
    "count"
])


class RatioSweepResult(object):
    """Ratio statistics per perturbation magnitude and position kind.

    Sweeps at several concentrations can be joined into one result.
    """

    def __init__(self, rows):
        self.rows = list(rows)

    def series(self, kind, kappa=None):
        """Return the mean maximal |log r| of a kind per magnitude.

        :param kind: KIND_TOKEN or KIND_LATENT
        :param kappa: a concentration of the sweep or None for the first
        :return: a list of values
        """
        if kappa is None and self.rows:
            kappa = self.rows[0].kappa

        return [
            r.max_abs_log_ratio for r in self.rows
            if r.kind == kind and r.kappa == kappa
        ]

    def magnitudes(self):
        return sorted({r.magnitude for r in self.rows})

    def kappas(self):
        """Return the concentrations in the order of the sweeps."""
        return list(dict.fromkeys(r.kappa for r in self.rows))

    def join(self, other):
        """Return a result with the rows of both sweeps."""
        return RatioSweepResult(self.rows + other.rows)

    def to_rows(self):
        return [r._asdict() for r in self.rows]


def _rollout_set(snapshot, task, config, seed, count):
    # Every trajectory opens with a canvas, so both kinds are present.
    rollouts = []

    for index in range(count):
        episode = task.sample_episode(
            get_stream(seed, "diag", "episode", index), episode_id=index
        )
        trajectory = generate_trajectory(
            snapshot, episode, config,
            get_stream(seed, "diag", "rollout", index),
            relaxed=config.relaxed, prefix=(CANVAS_START, )
        )
        rollouts.append((episode, trajectory))

    return rollouts


def _log_ratios(params, rollouts, vmf, relaxed):
    token, latent = [], []

    for episode, trajectory in rollouts:
        states = replay_states(params, episode, trajectory.steps)

        for step, h in zip(trajectory.steps, states):
            if step.is_latent:
                latent.append(vmf_log_ratio(h, step.z_tilde, vmf,
                                            relaxed).item())
            else:
                new = ad.log_softmax_select(logits(h, params), step.token_id)
                token.append(new.item() - step.old_logprob)

    return np.array(token), np.array(latent)


def ratio_mismatch_experiment(snapshot, task, magnitudes, trials, config,
                              seed, kappa=None):
    """Measure importance ratios under random parameter perturbations.

    A fixed set of rollouts of the snapshot is replayed under
    theta = theta_old + m * ||theta_old|| * u for random unit
    directions u. Token and latent ratios are summarized separately.

    :param snapshot: an instance of PolicyParams
    :param task: a task
    :param magnitudes: increasing relative magnitudes in [0, 0.5]
    :param trials: a number of directions per magnitude, at least 8
    :param config: an instance of RunConfig
    :param seed: a master seed
    :param kappa: a concentration of the latent ratios or None for
        diag_kappa, which falls back to the hidden size
    :return: an instance of RatioSweepResult
    """
    magnitudes = [float(m) for m in magnitudes]

    if not magnitudes or any(not 0 <= m <= 0.5 for m in magnitudes):
        raise DiagnosticsError("Magnitudes must be in [0, 0.5].")

    if any(a >= b for a, b in zip(magnitudes, magnitudes[1:])):
        raise DiagnosticsError("Magnitudes must be strictly increasing.")

    if trials < 8:
        raise DiagnosticsError(
            "At least 8 trials are required, not {}.".format(trials)
        )

    if kappa is None:
        kappa = config.diag_kappa or float(snapshot.dims.hidden_dim)

    kappa = float(kappa)

    if kappa <= 0:
        raise DiagnosticsError(
            "Concentration '{}' must be positive.".format(kappa)
        )

    vmf = VmfParams(snapshot.dims.hidden_dim, kappa)
    rollouts = _rollout_set(
        snapshot, task, config, seed, config.diag_episodes
    )
    origin = snapshot.flatten()
    scale = np.linalg.norm(origin)
    perturbed = snapshot.copy()
    rows = []

    log.info(
        "Sweeping %d magnitudes with %d trials and kappa %f.",
        len(magnitudes), trials, kappa
    )

    for index, magnitude in enumerate(magnitudes):
        collected = {KIND_TOKEN: [], KIND_LATENT: []}
        maxima = {KIND_TOKEN: [], KIND_LATENT: []}

        for trial in range(trials):
            rng = get_stream(seed, "diag", "ratio", index, trial)
            direction = rng.standard_normal(origin.size)
            direction /= np.linalg.norm(direction)
            perturbed.assign_flat(origin + magnitude * scale * direction)

            token, latent = _log_ratios(
                perturbed, rollouts, vmf, config.relaxed
            )

            for kind, values in ((KIND_TOKEN, token), (KIND_LATENT, latent)):
                collected[kind].append(values)
                maxima[kind].append(
                    float(np.max(np.abs(values))) if values.size else 0.0
                )

        for kind in (KIND_TOKEN, KIND_LATENT):
            ratios = np.exp(np.concatenate(collected[kind]))
            rows.append(RatioRow(
                kappa=kappa,
                magnitude=magnitude,
                kind=kind,
                mean_ratio=float(np.mean(ratios)) if ratios.size else 1.0,
                std_ratio=float(np.std(ratios)) if ratios.size else 0.0,
                max_abs_log_ratio=float(np.mean(maxima[kind])),
                count=int(ratios.size)
            ))

    result = RatioSweepResult(rows)
    log.info(
        "Largest mean max |log r| at kappa %f: token %f, latent %f.",
        kappa, result.series(KIND_TOKEN)[-1], result.series(KIND_LATENT)[-1]
    )
    return result


KlCheck = namedtuple("KlCheck", [
    "dim",
    "kappa",
    "angle_deg",
    "closed_form",
    "mc_estimate",
    "stderr",
    "passed"
])


class KlReport(object):
    """Results of the closed-form KL verification."""

    def __init__(self, checks):
        self.checks = list(checks)

    @property
    def passed(self):
        return sum(1 for c in self.checks if c.passed)

    @property
    def all_passed(self):
        return self.passed == len(self.checks)

    def to_rows(self):
        return [
            {
                "dim": c.dim,
                "kappa": c.kappa,
                "angle_deg": c.angle_deg,
                "closed_form": c.closed_form,
                "mc_estimate": c.mc_estimate,
                "stderr": c.stderr,
                "status": "PASS" if c.passed else "FAIL",
            }
            for c in self.checks
        ]


def random_kl_configs(count, rng):
    """Draw random configurations of the KL verification.

    :param count: a number of configurations
    :param rng: an instance of numpy.random.Generator
    :return: a list of tuples of a dimension, kappa and an angle
    """
    return [
        (
            int(rng.choice([4, 8, 16])),
            float(rng.uniform(0.5, 8.0)),
            float(rng.uniform(1.0, 179.0))
        )
        for _ in range(count)
    ]


def _directions(dim, angle_deg, rng):
    # Two unit vectors at the given angle in a random orientation.
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    angle = math.radians(angle_deg)
    planar = np.zeros(dim)
    planar[0] = math.cos(angle)
    planar[1] = math.sin(angle)
    basis = np.zeros(dim)
    basis[0] = 1.0
    return q @ planar, q @ basis


def verify_vmf_kl(configs, n, seed):
    """Compare the closed-form vMF KL with Monte-Carlo estimates.

    A configuration passes if the difference is at most three
    standard errors of the estimate.

    :param configs: a list of tuples of a dimension, kappa and an angle
    :param n: a number of samples per configuration
    :param seed: a master seed
    :return: an instance of KlReport
    """
    if n < KL_MIN_SAMPLES:
        raise DiagnosticsError(
            "At least {} samples are required, not {}.".format(
                KL_MIN_SAMPLES, n
            )
        )

    checks = []

    for index, (dim, kappa, angle) in enumerate(configs):
        rng = get_stream(seed, "verify", index)
        mu_new, mu_old = _directions(dim, angle, rng)
        params = VmfParams(dim, kappa)
        closed = vmf_kl(mu_new, mu_old, params, relaxed=False).item()
        estimate, stderr = mc_kl_estimate(mu_new, mu_old, kappa, n, rng)
        passed = abs(closed - estimate) <= KL_TOLERANCE * stderr + KL_FLOOR

        log.debug(
            "KL check D=%d kappa=%f angle=%f: %f vs %f +- %f.",
            dim, kappa, angle, closed, estimate, stderr
        )
        checks.append(KlCheck(
            dim, kappa, angle, closed, estimate, stderr, passed
        ))

    return KlReport(checks)


GradcheckEntry = namedtuple("GradcheckEntry", [
    "op",
    "param",
    "index",
    "analytic",
    "numeric",
    "error",
    "passed"
])


class GradcheckReport(object):
    """Results of the gradient checks."""

    def __init__(self):
        self.entries = []
        self.excluded = []

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def failures(self):
        return [e for e in self.entries if not e.passed]

    def format(self):
        """Return a readable report."""
        lines = []

        for e in self.entries:
            lines.append(
                "{} {} {} max error {:.3e} at {} "
                "(analytic {!r}, numeric {!r})".format(
                    "PASS" if e.passed else "FAIL", e.op, e.param, e.error,
                    e.index, e.analytic, e.numeric
                )
            )

        for note in self.excluded:
            lines.append("EXCLUDED {}".format(note))

        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines) + "\n"


def _compare(op, name, analytic, numeric):
    difference = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = (difference <= GRADCHECK_RTOL * scale) \
        | (difference <= GRADCHECK_ATOL)
    error = difference / np.where(scale > 0, scale, 1.0)
    # Failing elements come first.
    worst = int(np.argmax(np.where(ok, error, np.inf)))
    index = np.unravel_index(worst, analytic.shape)

    return GradcheckEntry(
        op=op,
        param=name,
        index=tuple(int(i) for i in index),
        analytic=float(analytic[index]),
        numeric=float(numeric[index]),
        error=float(error[index]),
        passed=bool(ok.all())
    )


def _check_params(report, op, params, loss_fn):
    params.zero_grad()

    with ad.Graph() as graph:
        root = loss_fn()

    if root.requires_grad:
        graph.backward(root)

    grads = params.grads()

    for name, tensor in params.items():
        numeric = ad.finite_difference(
            lambda: loss_fn().item(), tensor.values, GRADCHECK_STEP
        )
        report.entries.append(_compare(op, name, grads[name], numeric))


def _check_surrogate(report, config):
    # The last ratio sits on the upper clip edge.
    edges = (1.0 - config.eps_tok_lo, 1.0 + config.eps_tok_hi)
    cases = [(0.7, 1.0), (1.1, 1.0), (1.5, 1.0), (0.9, -1.0), (5.0, -1.0),
             (edges[1], 1.0)]

    for ratio, advantage in cases:
        kinks = edges + (config.dual_clip_c, )

        if min(abs(ratio - k) for k in kinks) < KINK_MARGIN:
            report.excluded.append(
                "surrogate_clip at r={!r}, A={!r}".format(ratio, advantage)
            )
            continue

        r = ad.Tensor(ratio, requires_grad=True)

        with ad.Graph() as graph:
            loss = surrogate_clip(r, advantage, config.eps_tok_lo,
                                  config.eps_tok_hi, config.dual_clip_c)

        if loss.requires_grad:
            graph.backward(loss)

        analytic = r.grad if r.grad is not None else np.zeros(())
        numeric = ad.finite_difference(
            lambda: surrogate_clip(
                r, advantage, config.eps_tok_lo, config.eps_tok_hi,
                config.dual_clip_c
            ).item(),
            r.values, GRADCHECK_STEP
        )
        report.entries.append(_compare(
            "surrogate_clip", "r={!r},A={!r}".format(ratio, advantage),
            np.reshape(analytic, (1, )), np.reshape(numeric, (1, ))
        ))


def _near_kink(batch, params, config, vmf):
    _, _, stats = depo_policy_loss(batch, params, config, vmf)
    kinks = []

    for values, lo, hi in (
            (stats.token_log_ratios, config.eps_tok_lo, config.eps_tok_hi),
            (stats.latent_log_ratios, config.eps_lat_lo, config.eps_lat_hi)):
        for k in (1.0 - lo, 1.0 + hi, config.dual_clip_c):
            kinks.extend(np.flatnonzero(
                np.abs(np.exp(values) - k) < KINK_MARGIN
            ).tolist())

    return len(kinks)


def _micro_setup(seed, config):
    task = LatentRetrieval(
        pairs=2,
        obs_dim=config.obs_dim,
        hidden_dim=config.hidden_dim,
        canvas_length=2,
        rng=get_stream(seed, "gradcheck", "task")
    )
    params = PolicyParams.initialize(
        config, get_stream(seed, "gradcheck", "init")
    )
    return task, params


def _perturbed(params, seed, *namespace, magnitude=0.05):
    rng = get_stream(seed, "gradcheck", *namespace)
    copy = params.copy()
    origin = copy.flatten()
    direction = rng.standard_normal(origin.size)
    direction *= magnitude * np.linalg.norm(origin) \
        / np.linalg.norm(direction)
    copy.assign_flat(origin + direction)
    return copy


def _micro_batch(task, params, config, seed):
    # Rollouts of a nearby old policy, so the ratios differ from one.
    for attempt in range(MICRO_BATCH_ATTEMPTS):
        old = _perturbed(params, seed, "old", attempt)
        batch = []

        for index, advantage in enumerate((1.0, -1.0)):
            episode = task.sample_episode(
                get_stream(seed, "gradcheck", "episode", attempt, index),
                episode_id=index
            )
            trajectory = generate_trajectory(
                old, episode, config,
                get_stream(seed, "gradcheck", "rollout", attempt, index),
                relaxed=config.relaxed, prefix=(CANVAS_START, )
            )
            trajectory.advantage = advantage
            batch.append((episode, trajectory))

        vmf = VmfParams.from_config(config, config.hidden_dim)

        if not _near_kink(batch, params, config, vmf):
            return batch, attempt

    raise DiagnosticsError("Cannot build a micro-batch away from kinks.")


def gradcheck_config(**overrides):
    """Return the small config of the gradient checks."""
    config = RunConfig(
        hidden_dim=4,
        input_dim=3,
        obs_dim=3,
        max_length=10,
        canvas_budget=3,
        kappa=1.0,
        temperature=1.0
    )
    config.update(overrides)
    config.validate()
    return config


def gradcheck_all(seed):
    """Check the analytic gradients of every objective.

    Every objective is evaluated on frozen micro-batches of a small
    policy and its gradients are compared with central differences
    for every parameter array.

    :param seed: a master seed
    :return: an instance of GradcheckReport
    """
    report = GradcheckReport()
    config = gradcheck_config()
    task, params = _micro_setup(seed, config)
    _check_surrogate(report, config)

    episode = task.sample_episode(get_stream(seed, "gradcheck", "sft"))
    sft_batch = [(episode, task.gold_steps(episode))]
    _check_params(report, "sft_loss", params,
                  lambda: sft_loss(sft_batch, params, 1.0).total)

    reference = _perturbed(params, seed, "reference")
    batches = {}

    for relaxed in (True, False):
        mode = gradcheck_config(relaxed=relaxed)
        suffix = "relaxed" if relaxed else "normalized"
        vmf = VmfParams.from_config(mode, mode.hidden_dim)
        batch, attempts = _micro_batch(task, params, mode, seed)
        batches[relaxed] = batch

        if attempts:
            report.excluded.append(
                "{} micro-batches near kinks ({})".format(attempts, suffix)
            )

        def policy_loss(batch=batch, mode=mode, vmf=vmf):
            l_tok, l_lat, _ = depo_policy_loss(batch, params, mode, vmf)
            return ad.add(l_tok, ad.scale(l_lat, mode.alpha))

        def kl_loss(batch=batch, mode=mode, vmf=vmf):
            return latent_kl_loss(batch, params, mode, vmf)

        def rl_loss(batch=batch, mode=mode, vmf=vmf):
            return compute_rl_loss(batch, params, reference, mode, vmf)[0] \
                .l_total

        _check_params(report, "depo_policy_loss/" + suffix, params,
                      policy_loss)
        _check_params(report, "latent_kl_loss/" + suffix, params, kl_loss)
        _check_params(report, "total_loss/" + suffix, params, rl_loss)

    _check_params(report, "token_kl_loss", params,
                  lambda: token_kl_loss(batches[True], params, reference))

    gaussian = gradcheck_config(
        latent_distribution=LATENT_GAUSSIAN, gaussian_sigma=0.5
    )
    gaussian_batch, _ = _micro_batch(task, params, gaussian, seed)
    _check_params(report, "gaussian_ratio", params,
                  lambda: compute_rl_loss(gaussian_batch, params, reference,
                                          gaussian)[0].l_total)

    log.info("Gradient checks %s.", "passed" if report.passed else "failed")
    return report


def ktest_sweep(checkpoints, task, k_values, episodes, config, seed):
    """Evaluate checkpoints under several canvas budgets.

    :param checkpoints: a list of pairs of a name and PolicyParams
    :param task: a task
    :param k_values: canvas budgets including zero
    :param episodes: a number of episodes per point
    :param config: an instance of RunConfig
    :param seed: a master seed
    :return: a list of rows
    """
    if 0 not in k_values:
        raise DiagnosticsError("Canvas budgets must include zero.")

    rows = []

    for name, params in checkpoints:
        for k in k_values:
            summary = evaluate(params, task, config, episodes, seed,
                               canvas_budget=k)
            rows.append({
                "checkpoint": name,
                "k_test": k,
                "episodes": episodes,
                "accuracy": summary["accuracy"],
                "format_rate": summary["format_rate"],
                "mean_reward": summary["mean_reward"],
                "mean_canvas_length": summary["mean_canvas_length"],
            })

    return rows
