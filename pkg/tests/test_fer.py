import math

import numpy as np
import pytest
import torch

from mcpt.fer import FER, Expert, GlobalBranch, RoutingNet, attend, expert_refine, global_modulate, route_and_aggregate


def _loop_attention(q, k, v):
    """Scalar-by-scalar softmax(q k^T / sqrt(d)) v."""
    q, k, v = (np.asarray(a, dtype=np.float64).tolist() for a in (q, k, v))
    d = len(q[0])
    out = []
    for qi in q:
        scores = [sum(qi[t] * kj[t] for t in range(d)) / math.sqrt(d) for kj in k]
        m = max(scores)
        e = [math.exp(s - m) for s in scores]
        z = sum(e)
        out.append([sum(e[j] / z * v[j][c] for j in range(len(v))) for c in range(len(v[0]))])
    return np.array(out)


def _linear(x, lin):
    x = np.asarray(x, dtype=np.float64)
    w = lin.weight.detach().numpy()
    b = lin.bias.detach().numpy() if lin.bias is not None else np.zeros(w.shape[0])
    return np.array([[sum(w[o, i] * row[i] for i in range(len(row))) + b[o] for o in range(w.shape[0])] for row in x])


def _set_identity(proj):
    with torch.no_grad():
        for lin in (proj.q, proj.k, proj.v):
            lin.weight.copy_(torch.eye(lin.weight.shape[0], dtype=lin.weight.dtype))
            if lin.bias is not None:
                lin.bias.zero_()


def test_single_key_returns_value_row():
    torch.manual_seed(0)
    e = Expert(3).double()
    feats = torch.randn(5, 3, dtype=torch.float64)
    tok = torch.randn(1, 3, dtype=torch.float64)
    out = expert_refine(feats, tok, e)
    assert torch.equal(out, e.v(tok).expand(5, 3))


def test_constant_token_rows_pass_through():
    e = Expert(2).double()
    _set_identity(e)
    v = torch.tensor([0.3, -1.1], dtype=torch.float64)
    out = expert_refine(torch.randn(4, 2, dtype=torch.float64), v.expand(3, 2), e)
    assert torch.allclose(out, v.expand(4, 2), atol=1e-15)


def test_expert_matches_explicit_arithmetic():
    torch.manual_seed(1)
    e = Expert(2).double()
    feats = torch.tensor([[0.5, -1.0], [2.0, 0.25]], dtype=torch.float64)
    tok = torch.tensor([[1.0, 0.0], [-0.5, 1.5]], dtype=torch.float64)
    oracle = _loop_attention(_linear(feats, e.q), _linear(tok, e.k), _linear(tok, e.v))
    assert np.max(np.abs(expert_refine(feats, tok, e).detach().numpy() - oracle)) < 1e-9


def test_attention_shape_errors():
    with pytest.raises(ValueError):
        attend(torch.zeros(2, 3), torch.zeros(2, 4), torch.zeros(2, 3))
    with pytest.raises(ValueError):
        attend(torch.zeros(2, 3), torch.zeros(2, 3), torch.zeros(5, 3))


def test_attention_rows_sum_to_one_f32():
    torch.manual_seed(2)
    q, k = torch.randn(7, 8), torch.randn(5, 8)
    ones = torch.ones(5, 1)
    assert torch.allclose(attend(q, k, ones), torch.ones(7, 1), atol=1e-6)


def test_equal_logits_average_outputs():
    refined = torch.randn(2, 4, 3, 5, dtype=torch.float64)
    r_a, w = route_and_aggregate(torch.zeros(2, 4, dtype=torch.float64), refined)
    assert torch.allclose(w.sum(-1), torch.ones(2, dtype=torch.float64))
    assert torch.allclose(r_a, refined.mean(dim=1), atol=1e-15)


def test_saturated_logits_select_first_expert():
    refined = torch.randn(1, 4, 3, 5, dtype=torch.float64)
    r_a, _ = route_and_aggregate(torch.tensor([[20.0, -20.0, -20.0, -20.0]], dtype=torch.float64), refined)
    assert (r_a - refined[:, 0]).abs().max() < 1e-8 * max(1.0, refined.abs().max().item())


def test_single_expert_is_exact():
    refined = torch.randn(2, 1, 3, 4, dtype=torch.float64)
    r_a, _ = route_and_aggregate(torch.randn(2, 1, dtype=torch.float64), refined)
    assert torch.equal(r_a, refined[:, 0])


def test_zero_experts_rejected():
    with pytest.raises(ValueError):
        route_and_aggregate(torch.zeros(1, 0), torch.zeros(1, 0, 2, 2))


def test_aggregate_is_convex():
    gen = torch.Generator().manual_seed(3)
    refined = torch.rand(3, 4, 6, 2, generator=gen, dtype=torch.float64) * 10 - 5
    r_a, _ = route_and_aggregate(torch.randn(3, 4, generator=gen, dtype=torch.float64) * 3, refined)
    assert torch.all(r_a >= refined.min(dim=1).values - 1e-12)
    assert torch.all(r_a <= refined.max(dim=1).values + 1e-12)


def test_router_weights_form_simplex_f32():
    torch.manual_seed(4)
    router = RoutingNet(6, 4)
    w = torch.softmax(router(torch.randn(3, 4, 10, 6)), dim=-1)
    assert torch.all(w >= 0)
    assert torch.allclose(w.sum(-1), torch.ones(3), atol=1e-6)


def test_uniform_global_rows_give_mean_of_values():
    torch.manual_seed(5)
    branch = GlobalBranch(2).double()
    r_g = torch.tensor([[0.7, -0.2]], dtype=torch.float64).expand(4, 2)
    r_a = torch.randn(4, 2, dtype=torch.float64)
    out = branch.modulate(r_g, r_a)
    assert torch.allclose(out, branch.outer.v(r_a).mean(dim=0).expand(4, 2), atol=1e-14)


def test_one_hot_attention_passes_through():
    branch = GlobalBranch(3).double()
    _set_identity(branch.outer)
    with torch.no_grad():
        branch.outer.q.weight.mul_(100.0)
    r_g = torch.eye(3, dtype=torch.float64)
    r_a = torch.randn(3, 3, dtype=torch.float64)
    assert torch.allclose(branch.modulate(r_g, r_a), r_a, atol=1e-12)


def test_global_modulate_matches_explicit_arithmetic():
    torch.manual_seed(6)
    branch = GlobalBranch(2).double()
    feats = torch.randn(3, 2, dtype=torch.float64)
    r_a = torch.randn(3, 2, dtype=torch.float64)
    sa, o = branch.self_attn, branch.outer
    r_g = _loop_attention(_linear(feats, sa.q), _linear(feats, sa.k), _linear(feats, sa.v))
    oracle = _loop_attention(_linear(r_g, o.q), _linear(r_g, o.k), _linear(r_a, o.v))
    out = global_modulate(feats, r_a, branch).detach().numpy()
    assert np.max(np.abs(out - oracle)) < 1e-9


def test_expert_is_row_permutation_equivariant():
    torch.manual_seed(7)
    e = Expert(4).double()
    feats = torch.randn(6, 4, dtype=torch.float64)
    tok = torch.randn(5, 4, dtype=torch.float64)
    perm = torch.randperm(6)
    assert torch.allclose(expert_refine(feats[perm], tok, e), expert_refine(feats, tok, e)[perm], atol=1e-14)


def test_fer_parameter_names():
    names = {n.split(".")[0] for n, _ in FER(4, n_experts=3).named_parameters()}
    assert names == {"expert0", "expert1", "expert2", "router", "global"}


def test_fer_without_experts_ignores_tokens():
    torch.manual_seed(8)
    fer = FER(4, 2, use_experts=False).double()
    feats = torch.randn(2, 5, 4, dtype=torch.float64)
    out = fer(feats, None)
    out.sum().backward()
    assert torch.allclose(out, fer.global_branch.global_features(feats))
    for n, p in fer.named_parameters():
        if n.startswith(("expert", "router")):
            assert p.grad is None


def test_fer_rejects_wrong_token_count():
    fer = FER(4, 2)
    with pytest.raises(ValueError):
        fer(torch.zeros(1, 5, 4), torch.zeros(1, 3, 5, 4))
