#
# Von Mises-Fisher mathematics of the latent policy
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

import numpy as np

from depolab import autodiff as ad
from depolab.error import NumericalError

log = logging.getLogger(__name__)

__all__ = [
    "VmfError",
    "VmfParams",
    "normalize",
    "vmf_log_ratio",
    "vmf_kl",
    "vmf_log_density",
    "log_bessel_i",
    "mean_resultant_length",
    "sample_vmf",
    "sample_vmf_batch",
    "mc_kl_estimate",
    "mc_mean_resultant_length",
]

# Relative size of the last series term that is still added.
SERIES_TOLERANCE = 1e-14

# Maximal number of terms of the Bessel series.
SERIES_MAX_TERMS = 10 ** 4

# Maximal number of rounds of the rejection sampler.
REJECTION_MAX_ROUNDS = 10 ** 6

# Smallest sample count of the Monte-Carlo oracles.
MC_MIN_SAMPLES = 10 ** 3


class VmfError(NumericalError):
    """Exception for invalid von Mises-Fisher computations."""
    pass


def _check_domain(dim, kappa):
    if int(dim) != dim or dim < 2:
        raise VmfError("Dimension '{}' must be an integer >= 2.".format(dim))

    if not kappa > 0 or not math.isfinite(kappa):
        raise VmfError("Concentration '{}' must be positive.".format(kappa))


class VmfParams(object):
    """Parameters of the latent vMF policy.

    The KL weight defaults to kappa * A_D(kappa) and can be
    overridden by a nonnegative value.
    """

    __slots__ = ["_dim", "_kappa", "_w_kappa", "_log_normalizer"]

    def __init__(self, dim, kappa, w_kappa=None):
        """Create the parameters.

        :param dim: a dimension D >= 2
        :param kappa: a positive concentration
        :param w_kappa: a KL weight or None
        :raise VmfError: if a value is out of domain
        """
        _check_domain(dim, kappa)

        if w_kappa is not None and not w_kappa >= 0:
            raise VmfError(
                "KL weight '{}' must be nonnegative.".format(w_kappa)
            )

        self._dim = int(dim)
        self._kappa = float(kappa)
        self._w_kappa = w_kappa
        self._log_normalizer = None

    @classmethod
    def from_config(cls, config, dim):
        """Create the parameters from a config.

        A negative w_kappa of the config selects the derived weight.

        :param config: an instance of DepoConfig
        :param dim: a dimension D
        :return: an instance of VmfParams
        """
        w_kappa = config.w_kappa if config.w_kappa >= 0 else None
        return cls(dim, config.kappa, w_kappa)

    @property
    def dim(self):
        """Dimension of the ambient space."""
        return self._dim

    @property
    def kappa(self):
        """Concentration."""
        return self._kappa

    @property
    def w_kappa(self):
        """Weight of the latent KL."""
        if self._w_kappa is None:
            self._w_kappa = self._kappa * mean_resultant_length(
                self._dim, self._kappa
            )

        return self._w_kappa

    @property
    def log_normalizer(self):
        """The logarithm of the normalization constant C_D(kappa)."""
        if self._log_normalizer is None:
            nu = self._dim / 2.0 - 1.0
            self._log_normalizer = \
                nu * math.log(self._kappa) \
                - (self._dim / 2.0) * math.log(2.0 * math.pi) \
                - log_bessel_i(nu, self._kappa)

        return self._log_normalizer

    def __repr__(self):
        return "VmfParams(dim={}, kappa={!r}, w_kappa={!r})".format(
            self._dim, self._kappa, self.w_kappa
        )


def normalize(v):
    """Scale a vector to the unit norm.

    :param v: a tensor or an array
    :return: a tensor
    :raise DegenerateDirectionError: if the norm is below 1e-12
    """
    return ad.normalize(v)


def _prepare(h, z_tilde, params, relaxed):
    h = ad.as_tensor(h)
    z = np.asarray(
        z_tilde.values if isinstance(z_tilde, ad.Tensor) else z_tilde,
        dtype=np.float64
    )

    if h.shape != (params.dim, ) or z.shape != (params.dim, ):
        raise VmfError(
            "Expected vectors of dimension {}, got {} and {}.".format(
                params.dim, h.shape, z.shape
            )
        )

    if relaxed:
        return h, ad.Tensor(z)

    return ad.normalize(h), ad.normalize(ad.Tensor(z))


def vmf_log_ratio(h, z_tilde, params, relaxed):
    """Compute the mode-referenced log density ratio.

    The normalized form is kappa * (cos(h, z) - 1), the relaxed form
    is kappa * (h.z - z.z). Both are zero when h equals z.

    :param h: a tensor with the current hidden state
    :param z_tilde: a stored latent action, a constant
    :param params: an instance of VmfParams
    :param relaxed: use raw inner products?
    :return: a scalar tensor
    """
    mu, z = _prepare(h, z_tilde, params, relaxed)
    score = ad.sub(ad.dot(mu, z), ad.dot(z, z))
    return ad.scale(score, params.kappa)


def vmf_kl(h, z_tilde, params, relaxed):
    """Compute the closed-form latent KL penalty.

    The normalized form is W * (1 - cos(h, z)), the relaxed form
    is W * (z.z - h.z) with the weight W of the parameters.

    :param h: a tensor with the current hidden state
    :param z_tilde: a stored latent action, a constant
    :param params: an instance of VmfParams
    :param relaxed: use raw inner products?
    :return: a scalar tensor
    """
    mu, z = _prepare(h, z_tilde, params, relaxed)
    distance = ad.sub(ad.dot(z, z), ad.dot(mu, z))
    return ad.scale(distance, params.w_kappa)


def vmf_log_density(x, mu, params):
    """Compute the log density of a unit vector.

    :param x: a unit vector
    :param mu: a unit mean direction
    :param params: an instance of VmfParams
    :return: a float
    """
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    return params.log_normalizer + params.kappa * float(mu @ x)


def _bessel_series(nu, kappa):
    # Sum of (kappa^2/4)^k * Gamma(nu+1) / (k! * Gamma(nu+k+1)).
    quarter = kappa * kappa / 4.0
    term = 1.0
    total = 1.0

    for k in range(1, SERIES_MAX_TERMS + 1):
        term *= quarter / (k * (k + nu))
        total += term

        if term < SERIES_TOLERANCE * total:
            return total

    raise VmfError(
        "Bessel series of order {} at {} did not converge in {} "
        "terms.".format(nu, kappa, SERIES_MAX_TERMS)
    )


def log_bessel_i(nu, kappa):
    """Compute the logarithm of the modified Bessel function I_nu.

    :param nu: an order > -1
    :param kappa: a positive argument
    :return: a float
    :raise VmfError: if the series doesn't converge
    """
    return nu * math.log(kappa / 2.0) - math.lgamma(nu + 1.0) \
        + math.log(_bessel_series(nu, kappa))


def mean_resultant_length(dim, kappa):
    """Compute the mean resultant length A_D(kappa).

    It is the ratio I_{D/2}(kappa) / I_{D/2-1}(kappa) of modified
    Bessel functions evaluated by their ascending series.

    :param dim: a dimension D >= 2
    :param kappa: a positive concentration
    :return: a float in (0, 1)
    :raise VmfError: if a value is out of domain
    """
    _check_domain(dim, kappa)
    nu = dim / 2.0 - 1.0

    return (kappa / 2.0) / (nu + 1.0) \
        * _bessel_series(nu + 1.0, kappa) / _bessel_series(nu, kappa)


def _sample_cosines(dim, kappa, count, rng):
    # Wood's envelope rejection for the cosine to the mean direction.
    m = dim - 1
    b = m / (2.0 * kappa + math.sqrt(4.0 * kappa * kappa + m * m))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + m * math.log(1.0 - x0 * x0)

    accepted = [np.empty(0)]
    remaining = count

    for _ in range(REJECTION_MAX_ROUNDS):
        if remaining == 0:
            return np.concatenate(accepted)

        z = rng.beta(m / 2.0, m / 2.0, size=remaining)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=remaining)

        mask = kappa * w + m * np.log(1.0 - x0 * w) - c >= np.log(u)
        accepted.append(w[mask])
        remaining -= int(np.count_nonzero(mask))

    raise VmfError(
        "Rejection sampler exceeded {} rounds.".format(REJECTION_MAX_ROUNDS)
    )


def _check_unit(mu):
    mu = np.asarray(mu, dtype=np.float64)

    if mu.ndim != 1 or mu.size < 2:
        raise VmfError("Mean direction must be a vector of dimension >= 2.")

    if abs(np.linalg.norm(mu) - 1.0) > 1e-9:
        raise VmfError("Mean direction must have the unit norm.")

    return mu


def sample_vmf_batch(mu, kappa, count, rng):
    """Draw exact samples of a vMF distribution.

    :param mu: a unit mean direction
    :param kappa: a positive concentration
    :param count: a number of samples
    :param rng: an instance of numpy.random.Generator
    :return: an array of the shape (count, D)
    :raise VmfError: if the rejection sampler doesn't finish
    """
    mu = _check_unit(mu)
    _check_domain(mu.size, kappa)

    w = _sample_cosines(mu.size, kappa, count, rng)

    # Uniform directions in the tangent space at mu.
    v = rng.standard_normal((count, mu.size))
    v -= np.outer(v @ mu, mu)
    v /= np.linalg.norm(v, axis=1, keepdims=True)

    sine = np.sqrt(np.maximum(1.0 - w * w, 0.0))
    return w[:, None] * mu[None, :] + sine[:, None] * v


def sample_vmf(mu, kappa, rng):
    """Draw one exact sample of a vMF distribution.

    :param mu: a unit mean direction
    :param kappa: a positive concentration
    :param rng: an instance of numpy.random.Generator
    :return: a unit vector
    """
    return sample_vmf_batch(mu, kappa, 1, rng)[0]


def _mean_and_stderr(values):
    estimate = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / math.sqrt(values.size))
    return estimate, stderr


def mc_kl_estimate(mu_new, mu_old, kappa, n, rng):
    """Estimate KL(vMF(mu_new) || vMF(mu_old)) by Monte Carlo.

    The normalization constants cancel, so the integrand is
    kappa * (mu_new - mu_old).x over samples x of the new policy.

    :param mu_new: a unit vector
    :param mu_old: a unit vector
    :param kappa: a positive concentration
    :param n: a number of samples, at least 1000
    :param rng: an instance of numpy.random.Generator
    :return: a tuple of the estimate and its standard error
    """
    if n < MC_MIN_SAMPLES:
        raise VmfError(
            "At least {} samples are required, not {}.".format(
                MC_MIN_SAMPLES, n
            )
        )

    mu_new = _check_unit(mu_new)
    mu_old = _check_unit(mu_old)
    samples = sample_vmf_batch(mu_new, kappa, n, rng)
    return _mean_and_stderr(kappa * (samples @ (mu_new - mu_old)))


def mc_mean_resultant_length(dim, kappa, n, rng):
    """Estimate A_D(kappa) by Monte Carlo.

    :param dim: a dimension D >= 2
    :param kappa: a positive concentration
    :param n: a number of samples, at least 1000
    :param rng: an instance of numpy.random.Generator
    :return: a tuple of the estimate and its standard error
    """
    if n < MC_MIN_SAMPLES:
        raise VmfError(
            "At least {} samples are required, not {}.".format(
                MC_MIN_SAMPLES, n
            )
        )

    mu = np.zeros(dim)
    mu[0] = 1.0
    samples = sample_vmf_batch(mu, kappa, n, rng)
    return _mean_and_stderr(samples @ mu)
