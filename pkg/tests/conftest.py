"""Shared builders for randomized test instances."""

import math

import numpy as np
import pytest

from svcsel import reml


def random_blocks(rng, n, p):
    """Random spatial-style and flat-style blocks for p covariate terms."""
    blocks = []
    for j in range(p):
        x = rng.standard_normal(n)
        ls = rng.integers(3, 8)
        ev = np.sort(rng.uniform(0.05, 1.0, ls))[::-1]
        ev[0] = 1.0
        q, _ = np.linalg.qr(rng.standard_normal((n, ls)))
        blocks.append(reml.RandomBlock(f"t{j}:s", "spatial", x[:, None] * q,
                                       scaled_eigenvalues=ev))
        ln = rng.integers(2, 6)
        q2, _ = np.linalg.qr(rng.standard_normal((n, ln)))
        blocks.append(reml.RandomBlock(f"t{j}:n", "nonspatial", x[:, None] * q2))
    return blocks


def random_instance(rng, n, p):
    """A response, fixed design, random blocks, and parameters within bounds.

    Returns (y, x, blocks, params) with one parameter vector per block drawn
    from the optimizer's admissible box.
    """
    x = np.hstack([np.ones((n, 1)), rng.standard_normal((n, p))])
    blocks = random_blocks(rng, n, p)
    params = []
    for b in blocks:
        tau = math.exp(rng.uniform(math.log(1e-2), math.log(5.0)))
        if b.kind == "spatial":
            alpha = math.exp(rng.uniform(math.log(0.5), math.log(4.0)))
            params.append(np.array([tau, alpha]))
        else:
            params.append(np.array([tau]))
    y = rng.standard_normal(n) + x @ rng.standard_normal(x.shape[1])
    return y, x, blocks, params


def active_from(blocks, params, which=None):
    which = range(len(blocks)) if which is None else which
    return [(i, blocks[i].v_from_params(params[i])) for i in which]


@pytest.fixture(scope="session")
def rng_session():
    return np.random.default_rng(20240817)
