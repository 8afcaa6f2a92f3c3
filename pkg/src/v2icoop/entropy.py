"""Hierarchical entropy model: hyper encoder/decoder, factorised prior, Gaussian conditional.

Training uses additive uniform noise in place of rounding; both
likelihoods are evaluated as a density convolved with a unit box, i.e.
CDF(x + 1/2) - CDF(x - 1/2).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

from .config import ModelConfig
from .nn import ShapeError, Tensor, ops
from .nn.init import conv_weight, zeros

LIKELIHOOD_BOUND = 1e-9
PMF_FLOOR = 2.0 ** -16


class RateError(ValueError):
    pass


def quantize(x):
    """Round half away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def uniform_noise(shape, rng):
    """i.i.d. U[-0.5, 0.5) noise."""
    return rng.random(shape) - 0.5


def relax_with_noise(x, rng):
    """x + U[-0.5, 0.5) noise; identity gradient. ``rng`` may be a seed."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return ops.add_noise(x, uniform_noise(x.shape, rng))


# -- hyper encoder / decoder ---------------------------------------------------

def init_hyper(rng, cfg: ModelConfig):
    c, cz = cfg.feature_channels, cfg.hyper_channels
    hid = 2 * cz
    return {
        "hyper_enc.conv0.w": conv_weight(rng, 3, c, cz),
        "hyper_enc.conv0.b": zeros((cz,)),
        "hyper_enc.conv1.w": conv_weight(rng, 3, cz, cz),
        "hyper_enc.conv1.b": zeros((cz,)),
        "hyper_dec.conv0.w": conv_weight(rng, 3, cz, cz),
        "hyper_dec.conv0.b": zeros((cz,)),
        "hyper_dec.conv1.w": conv_weight(rng, 3, cz, hid),
        "hyper_dec.conv1.b": zeros((hid,)),
        "hyper_dec.mu.w": conv_weight(rng, 1, hid, c),
        "hyper_dec.mu.b": zeros((c,)),
        "hyper_dec.sigma.w": conv_weight(rng, 1, hid, c),
        "hyper_dec.sigma.b": zeros((c,)),
    }


def hyper_encode(features, params):
    """(N, H, W, C) -> (N, H/4, W/4, Cz) via two stride-2 3x3 convs."""
    n, h, w, _ = features.shape
    if h % 4 or w % 4:
        raise ShapeError(f"hyper_encode: spatial size {h}x{w} must be divisible by 4")
    x = ops.relu(ops.conv2d(features, params["hyper_enc.conv0.w"], params["hyper_enc.conv0.b"], stride=2))
    return ops.conv2d(x, params["hyper_enc.conv1.w"], params["hyper_enc.conv1.b"], stride=2)


def hyper_decode(z, params, sigma_min=0.11):
    """(N, H/4, W/4, Cz) -> (mu, sigma), each (N, H, W, C); sigma >= sigma_min."""
    if z.ndim != 4 or z.shape[3] != params["hyper_dec.conv0.w"].shape[2]:
        raise ShapeError(f"hyper_decode: unexpected hyper-latent shape {z.shape}")
    x = ops.upsample2x(z)
    x = ops.relu(ops.conv2d(x, params["hyper_dec.conv0.w"], params["hyper_dec.conv0.b"]))
    x = ops.upsample2x(x)
    x = ops.relu(ops.conv2d(x, params["hyper_dec.conv1.w"], params["hyper_dec.conv1.b"]))
    mu = ops.conv2d(x, params["hyper_dec.mu.w"], params["hyper_dec.mu.b"])
    raw = ops.conv2d(x, params["hyper_dec.sigma.w"], params["hyper_dec.sigma.b"])
    sigma = ops.lower_bound(ops.softplus(raw), sigma_min)
    return mu, sigma


# -- Gaussian conditional ----------------------------------------------------------

def gaussian_likelihood(x, mu, sigma, bound=LIKELIHOOD_BOUND):
    """Differentiable p(x) = Phi((x - mu + 1/2)/sigma) - Phi((x - mu - 1/2)/sigma).

    Evaluated on the lower tail, |x - mu|, to keep precision.
    """
    v = ops.absolute(ops.sub(x, mu))
    upper = ops.gaussian_cdf(ops.div(ops.sub(0.5, v), sigma))
    lower = ops.gaussian_cdf(ops.div(ops.sub(-0.5, v), sigma))
    return ops.lower_bound(ops.sub(upper, lower), bound)


def gaussian_pmf(k, mu, sigma):
    """Probability of integer ``k`` under N(mu, sigma^2) convolved with U(-1/2, 1/2)."""
    v = np.abs(np.asarray(k, dtype=np.float64) - mu)
    return ndtr((0.5 - v) / sigma) - ndtr((-0.5 - v) / sigma)


def gaussian_pmf_table(mu, sigma, bound):
    """PMF over symbols -bound..bound plus a trailing escape entry (tail mass).

    Floored at 2^-16 and renormalised to sum to one.
    """
    ks = np.arange(-bound, bound + 1, dtype=np.float64)
    p = gaussian_pmf(ks, mu, sigma)
    tail = ndtr((-bound - 0.5 - mu) / sigma) + ndtr((mu - bound - 0.5) / sigma)
    return _floor_normalize(np.append(p, tail))


def _floor_normalize(p):
    p = np.maximum(p, PMF_FLOOR)
    return p / p.sum()


# -- fully factorised prior ------------------------------------------------------

def init_prior(rng, cfg: ModelConfig):
    """Per-channel monotone CDF network, 1 -> f1 -> ... -> fK -> 1.

    Biases start at zero so the initial density is symmetric about 0.
    """
    cz = cfg.hyper_channels
    filters = (1,) + tuple(cfg.prior_filters) + (1,)
    scale = cfg.prior_init_scale ** (1.0 / (len(filters) - 1))
    p = {}
    for i in range(len(filters) - 1):
        init = math.log(math.expm1(1.0 / scale / filters[i + 1]))
        p[f"prior.H{i}"] = Tensor(np.full((cz, filters[i + 1], filters[i]), init), requires_grad=True)
        p[f"prior.b{i}"] = Tensor(np.zeros((cz, filters[i + 1], 1)), requires_grad=True)
        if i < len(filters) - 2:
            p[f"prior.a{i}"] = Tensor(np.zeros((cz, filters[i + 1], 1)), requires_grad=True)
    return p


def _prior_layers(params):
    n = 0
    while f"prior.H{n}" in params:
        n += 1
    return n


def prior_logits(x, params):
    """Cumulative logits for x of shape (Cz, 1, M)."""
    n = _prior_layers(params)
    for i in range(n):
        x = ops.add(ops.matmul(ops.softplus(params[f"prior.H{i}"]), x), params[f"prior.b{i}"])
        if i < n - 1:
            x = ops.add(x, ops.mul(ops.tanh(params[f"prior.a{i}"]), ops.tanh(x)))
    return x


def prior_logits_np(x, params):
    """Numpy twin of :func:`prior_logits` for table building; x is (Cz, 1, M)."""
    n = _prior_layers(params)
    for i in range(n):
        x = np.logaddexp(0.0, params[f"prior.H{i}"].data) @ x + params[f"prior.b{i}"].data
        if i < n - 1:
            x = x + np.tanh(params[f"prior.a{i}"].data) * np.tanh(x)
    return x


def _channels_first(z):
    """(N, h, w, Cz) tensor -> (Cz, 1, N*h*w)."""
    cz = z.shape[3]
    return ops.reshape(ops.transpose(z, (3, 0, 1, 2)), (cz, 1, -1))


def factorized_likelihood(z, params, bound=LIKELIHOOD_BOUND):
    """Differentiable p(z) under the factorised prior; returns shape (Cz, 1, M)."""
    zc = _channels_first(z)
    lower = prior_logits(ops.sub(zc, 0.5), params)
    upper = prior_logits(ops.add(zc, 0.5), params)
    # evaluate on the side of the median where the sigmoid is not saturated
    sign = Tensor(np.where(lower.data + upper.data > 0, -1.0, 1.0))
    p = ops.absolute(ops.sub(ops.sigmoid(ops.mul(sign, upper)), ops.sigmoid(ops.mul(sign, lower))))
    return ops.lower_bound(p, bound)


def factorized_cdf(x, channel, params):
    cz = params["prior.H0"].shape[0]
    if not 0 <= channel < cz:
        raise IndexError(f"channel {channel} out of range for {cz} channels")
    xs = np.asarray(x, dtype=np.float64)
    grid = np.broadcast_to(xs.reshape(1, 1, -1), (cz, 1, xs.size))
    logits = prior_logits_np(grid, params)[channel, 0]
    return ops._sigmoid(logits).reshape(xs.shape)


def factorized_pmf(k, channel, params):
    """Raw probability of integer ``k`` on ``channel``."""
    k = np.asarray(k, dtype=np.float64)
    return _factorized_diff(k, channel, params)


def _factorized_diff(k, channel, params):
    cz = params["prior.H0"].shape[0]
    if not 0 <= channel < cz:
        raise IndexError(f"channel {channel} out of range for {cz} channels")
    flat = k.reshape(1, 1, -1)
    lo = prior_logits_np(np.broadcast_to(flat - 0.5, (cz, 1, flat.size)), params)[channel, 0]
    hi = prior_logits_np(np.broadcast_to(flat + 0.5, (cz, 1, flat.size)), params)[channel, 0]
    sign = np.where(lo + hi > 0, -1.0, 1.0)
    return np.abs(ops._sigmoid(sign * hi) - ops._sigmoid(sign * lo)).reshape(k.shape)


def factorized_pmf_table(channel, params, bound):
    """PMF over -bound..bound plus escape (both tails), floored and renormalised."""
    ks = np.arange(-bound, bound + 1, dtype=np.float64)
    p = _factorized_diff(ks, channel, params)
    edges = np.array([-bound - 0.5, bound + 0.5])
    cdf = factorized_cdf(edges, channel, params)
    tail = cdf[0] + (1.0 - cdf[1])
    return _floor_normalize(np.append(p, tail))


# -- rate --------------------------------------------------------------------------

def rate_estimate(likelihoods, weights=None):
    """Sum of -log2 p, differentiable. ``weights`` (same shape, array or Tensor) masks elements."""
    if np.any(likelihoods.data <= 0):
        raise RateError("non-positive likelihood: CDF is not monotone or bound was skipped")
    bits = ops.scale(ops.log(likelihoods), -1.0 / math.log(2.0))
    if weights is not None:
        bits = ops.mul(bits, weights)
    return ops.sum(bits)
