"""Randomized property checks over generated inputs."""

import numpy as np
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mcpt.aft import equal_energy_partition, uniform_partition
from mcpt.evaluation import feature_stats, hungarian_accuracy
from mcpt.mdc import DiscrepancyCurve, band_schedule
from mcpt.objectives import sym_loss, unsup_loss
from mcpt.tensor import dft2, idft2

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=finite))
def test_dft_round_trip_and_parseval(x):
    X = dft2(torch.as_tensor(x))
    assert np.allclose(idft2(X).real.numpy(), x, atol=1e-9 * (1 + np.abs(x).max()))
    lhs = float((X.abs() ** 2).sum())
    rhs = x.size * float((x**2).sum())
    assert abs(lhs - rhs) <= 1e-9 * max(rhs, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_partitions_tile_the_curve(data):
    b = data.draw(st.integers(2, 30))
    n = data.draw(st.integers(1, b))
    mass = np.array(data.draw(st.lists(st.floats(0, 10), min_size=b, max_size=b)))
    curve = DiscrepancyCurve(band_schedule(b)[0], mass)
    for inits in (equal_energy_partition(curve, n), uniform_partition(curve, n)):
        covered = [i for init in inits for i in range(init.region[0], init.region[1] + 1)]
        assert covered == list(range(b))
        assert all(init.sigma_hat > 0 for init in inits)
        mus = [init.mu_hat for init in inits]
        assert mus == sorted(mus)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_hungarian_relabeling_and_weighted_consistency(data):
    k = data.draw(st.integers(1, 6))
    n = data.draw(st.integers(1, 50))
    truth = np.array(data.draw(st.lists(st.integers(0, k - 1), min_size=n, max_size=n)))
    pred = np.array(data.draw(st.lists(st.integers(0, k - 1), min_size=n, max_size=n)))
    old = data.draw(st.sets(st.integers(0, k - 1)))
    perm = np.array(data.draw(st.permutations(range(k))))
    acc = hungarian_accuracy(pred, truth, old)
    assert np.array_equal(hungarian_accuracy(perm[pred], truth, old), acc, equal_nan=True)
    is_old = np.isin(truth, list(old))
    n_old, n_new = int(is_old.sum()), int((~is_old).sum())
    parts = (n_old * acc[1] if n_old else 0.0) + (n_new * acc[2] if n_new else 0.0)
    assert abs(acc[0] - parts / n) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1), st.floats(0.05, 1.0))
def test_contrastive_losses_are_row_permutation_invariant(n, seed, tau):
    g = torch.Generator().manual_seed(seed)
    z = [torch.nn.functional.normalize(torch.randn(n, 5, generator=g, dtype=torch.float64), dim=-1) for _ in range(4)]
    perm = torch.randperm(n, generator=g)
    assert torch.allclose(sym_loss(*z, tau=tau), sym_loss(*(v[perm] for v in z), tau=tau), atol=1e-12)
    assert torch.allclose(unsup_loss(z[0], z[1], tau), unsup_loss(z[0][perm], z[1][perm], tau), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
def test_feature_stats_homogeneity(seed, alpha):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((12, 4))
    labels = np.repeat([0, 1, 2], 4)
    intra, inter, ratio = feature_stats(z, labels)
    s_intra, s_inter, s_ratio = feature_stats(alpha * z, labels)
    assert np.isclose(s_intra, alpha**2 * intra, rtol=1e-9)
    assert np.isclose(s_inter, alpha**2 * inter, rtol=1e-9)
    assert abs(s_ratio - ratio) <= 1e-9 * ratio
