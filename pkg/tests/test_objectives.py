import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from mcpt.objectives import (
    FinetuneLossConfig,
    finetune_loss,
    marginal_entropy,
    separation_penalty,
    sym_loss,
    total_loss,
    unsup_loss,
)
from mcpt.tensor import grad_check

from oracles import loop_sym_loss, loop_unsup_loss


def _unit(n, d, seed):
    g = torch.Generator().manual_seed(seed)
    return F.normalize(torch.randn(n, d, generator=g, dtype=torch.float64), dim=-1)


def test_single_pair_sym_loss_is_ln2():
    z = _unit(4, 5, 0)
    # equal positive similarities: give both optical views the same vector
    loss = sym_loss(z[:1], z[1:2], z[2:3], z[1:2], tau=0.07)
    sar_side = sym_loss(z[:1], z[1:2], z[:1], z[1:2], tau=0.07)
    assert abs(sar_side.item() - math.log(2)) < 1e-9
    assert loss.item() >= 0


def test_sym_loss_saturates_at_ln2():
    # both positives share the denominator, so each log term is at most log(1/2)
    n = 8
    e = torch.eye(n, dtype=torch.float64)
    simplex = F.normalize(e - e.mean(dim=0), dim=-1)  # pairwise cosine -1/7, the most negative possible
    loss = sym_loss(simplex, simplex, simplex, simplex, tau=0.07).item()
    assert 0 <= loss - math.log(2) < 1e-6


def test_sym_loss_direction_swap():
    a, b, c, d = (_unit(5, 6, s) for s in range(4))
    assert abs(sym_loss(a, b, c, d).item() - sym_loss(b, a, d, c).item()) < 1e-9


def test_sym_loss_matches_loop_oracle():
    a, b, c, d = (_unit(4, 3, s) for s in range(10, 14))
    for tau in (0.07, 0.5, 2.0):
        assert abs(sym_loss(a, b, c, d, tau).item() - loop_sym_loss(a, b, c, d, tau)) < 1e-12


def test_sym_loss_decreases_as_positives_align():
    anchor = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
    neg = torch.tensor([[0.0, 0.0, 1.0]], dtype=torch.float64)
    values = []
    for angle in np.linspace(1.5, 0.0, 12):
        pos = torch.tensor([[math.cos(angle), math.sin(angle), 0.0]], dtype=torch.float64)
        z_eo = torch.cat([pos, neg])
        z_sar = torch.cat([anchor, neg])
        values.append(sym_loss(z_sar, z_eo, z_sar, z_eo, tau=0.2).item())
    assert all(b < a for a, b in zip(values, values[1:]))


def test_nonpositive_tau_rejected():
    z = _unit(2, 3, 0)
    with pytest.raises(ValueError):
        sym_loss(z, z, z, z, tau=0.0)
    with pytest.raises(ValueError):
        unsup_loss(z, z, tau=-1.0)


def test_single_sample_unsup_loss_is_zero():
    z = _unit(2, 4, 1)
    assert unsup_loss(z[:1], z[1:], tau=0.07).item() == 0.0


def test_unsup_loss_hand_example():
    e = torch.eye(4, dtype=torch.float64)
    z = torch.stack([e[0], e[1]])
    z_aug = torch.stack([e[0], e[2]])
    term1 = -math.log(math.e / (math.e + 2))  # positive + 2 orthogonal terms
    term2 = math.log(3)
    assert abs(unsup_loss(z, z_aug, tau=1.0).item() - 0.5 * (term1 + term2)) < 1e-12


def test_unsup_loss_matches_oracle_and_is_permutation_invariant():
    z, za = _unit(6, 4, 20), _unit(6, 4, 21)
    assert abs(unsup_loss(z, za, 0.3).item() - loop_unsup_loss(z, za, 0.3)) < 1e-12
    perm = torch.randperm(6, generator=torch.Generator().manual_seed(0))
    assert abs(unsup_loss(z[perm], za[perm], 0.3).item() - unsup_loss(z, za, 0.3).item()) < 1e-12


def test_total_loss_endpoints_and_affinity():
    a, b = torch.tensor(1.7, dtype=torch.float64), torch.tensor(0.4, dtype=torch.float64)
    assert total_loss(a, b, 0.0).item() == a.item()
    assert total_loss(a, b, 1.0).item() == b.item()
    mid = total_loss(a, b, 0.5).item()
    assert abs(mid - 0.5 * (total_loss(a, b, 0.0).item() + total_loss(a, b, 1.0).item())) < 1e-12
    with pytest.raises(ValueError):
        total_loss(a, b, 1.5)


def test_losses_pass_grad_check():
    z = {k: _unit(3, 4, s) for s, k in enumerate(["a", "b", "c", "d"])}
    fn = lambda p: sym_loss(*(F.normalize(p[k], dim=-1) for k in "abcd"), tau=0.2)
    assert grad_check(fn, z) < 1e-4
    fn = lambda p: unsup_loss(F.normalize(p["a"], dim=-1), F.normalize(p["b"], dim=-1), tau=0.2)
    assert grad_check(fn, {"a": z["a"], "b": z["b"]}) < 1e-4


def test_separation_penalty_is_cosine():
    theta = 1.1
    protos = torch.tensor([[1.0, 0.0], [2 * math.cos(theta), 2 * math.sin(theta)]], dtype=torch.float64)
    assert separation_penalty(protos).item() == pytest.approx(math.cos(theta), abs=1e-15)


def test_finetune_loss_limits():
    k = 3
    protos = torch.eye(k, dtype=torch.float64)
    z = torch.eye(k, dtype=torch.float64)
    labels = torch.arange(k)
    loss, terms = finetune_loss(z, z, protos, labels, FinetuneLossConfig(tau_proto=0.01))
    assert terms["l_cls"] < 1e-12
    assert terms["separation"] == 0.0
    assert terms["marginal_entropy"] == pytest.approx(math.log(k), abs=1e-12)
    assert terms["l_reg"] == pytest.approx(-math.log(k), abs=1e-12)

    # the same predictions on unlabeled samples: confident pseudo-labels, same regularizer
    loss, terms = finetune_loss(z, z, protos, torch.full((k,), -1), FinetuneLossConfig(tau_proto=0.01))
    assert terms["l_cls"] < 1e-12
    assert terms["marginal_entropy"] == pytest.approx(math.log(k), abs=1e-12)
    assert terms["l_reg"] == pytest.approx(-math.log(k), abs=1e-12)


def test_marginal_entropy_uniform():
    probs = torch.full((5, 4), 0.25, dtype=torch.float64)
    assert marginal_entropy(probs).item() == pytest.approx(math.log(4), abs=1e-15)


def test_confidence_one_disables_pseudo_labels():
    protos = torch.eye(2, dtype=torch.float64)
    z = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    labels = torch.tensor([-1, -1])
    _, terms = finetune_loss(z, z, protos, labels, FinetuneLossConfig(confidence=1.0, tau_proto=0.01))
    assert terms["l_pseudo"] == 0.0
    _, terms = finetune_loss(z, z, protos, labels, FinetuneLossConfig(confidence=0.7, tau_proto=0.01))
    assert terms["l_pseudo"] < 1e-12


def test_pseudo_labels_follow_augmented_view():
    protos = torch.eye(2, dtype=torch.float64)
    z = torch.tensor([[0.6, 0.8]], dtype=torch.float64)
    z_aug = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    cfg = FinetuneLossConfig(tau_proto=0.1)
    _, terms = finetune_loss(z, z_aug, protos, torch.tensor([-1]), cfg)
    expected = -torch.log_softmax(z @ protos.T / 0.1, dim=-1)[0, 0].item()
    assert terms["l_pseudo"] == pytest.approx(expected, abs=1e-12)


def test_finetune_loss_errors_and_gradients():
    with pytest.raises(ValueError):
        finetune_loss(torch.zeros(1, 2), torch.zeros(1, 2), torch.zeros(0, 2), torch.tensor([0]))
    z, za = _unit(4, 3, 5), _unit(4, 3, 6)
    labels = torch.tensor([0, 1, -1, -1])
    fn = lambda p: finetune_loss(z, za, p["protos"], labels, FinetuneLossConfig(confidence=1.0))[0]
    assert grad_check(fn, {"protos": _unit(3, 3, 7) * 1.5}) < 1e-4
