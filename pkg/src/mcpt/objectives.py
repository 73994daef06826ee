"""Contrastive pretraining losses and the prototype fine-tuning objective."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")


def _directional(anchor, pos, pos_aug, tau):
    """Per-anchor loss with two positives sharing one denominator over all 2N targets."""
    targets = torch.cat([pos, pos_aug], dim=0)
    log_den = torch.logsumexp(anchor @ targets.T / tau, dim=1)
    s1 = (anchor * pos).sum(-1) / tau
    s2 = (anchor * pos_aug).sum(-1) / tau
    return -0.5 * ((s1 - log_den) + (s2 - log_den))


def sym_loss(z_sar, z_eo, z_sar_aug, z_eo_aug, tau: float = 0.07) -> torch.Tensor:
    """Symmetric cross-modal loss averaged over both directions and the batch.

    SAR anchors see the optical original and its augmented view as positives
    against all ``2N`` optical embeddings; the optical-to-SAR direction swaps roles.
    """
    _check_tau(tau)
    n = z_sar.shape[0]
    if n < 1 or not (z_eo.shape[0] == z_sar_aug.shape[0] == z_eo_aug.shape[0] == n):
        raise ValueError("all four embedding blocks need the same non-zero batch size")
    l_se = _directional(z_sar, z_eo, z_eo_aug, tau)
    l_es = _directional(z_eo, z_sar, z_sar_aug, tau)
    return (l_se + l_es).sum() / (2 * n)


def unsup_loss(z, z_aug, tau: float = 0.07) -> torch.Tensor:
    """InfoNCE with anchors ``z``, positives ``z_aug`` and all other views as the denominator.

    The denominator runs over the ``2N`` views of the batch minus the anchor itself.
    """
    _check_tau(tau)
    n = z.shape[0]
    if n < 1 or z_aug.shape[0] != n:
        raise ValueError("z and z_aug need the same non-zero batch size")
    views = torch.cat([z, z_aug], dim=0)
    logits = z @ views.T / tau
    self_mask = torch.zeros_like(logits, dtype=torch.bool)
    self_mask[torch.arange(n), torch.arange(n)] = True
    log_den = torch.logsumexp(logits.masked_fill(self_mask, float("-inf")), dim=1)
    pos = logits[torch.arange(n), n + torch.arange(n)]
    return -(pos - log_den).mean()


def total_loss(l_sym, l_unsup, lam: float = 0.5):
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    return (1.0 - lam) * l_sym + lam * l_unsup


@dataclass
class FinetuneLossConfig:
    tau: float = 0.07
    tau_proto: float = 0.1
    confidence: float = 0.7


def marginal_entropy(probs: torch.Tensor) -> torch.Tensor:
    mean = probs.mean(dim=0)
    return -(mean * torch.log(mean.clamp_min(1e-12))).sum()


def separation_penalty(prototypes: torch.Tensor) -> torch.Tensor:
    """Mean cosine similarity over unordered prototype pairs (0 for a single prototype)."""
    k = prototypes.shape[0]
    if k < 2:
        return prototypes.sum() * 0.0
    p = F.normalize(prototypes, dim=-1)
    sims = p @ p.T
    iu = torch.triu_indices(k, k, offset=1)
    return sims[iu[0], iu[1]].mean()


def finetune_loss(
    z: torch.Tensor,
    z_aug: torch.Tensor,
    prototypes: torch.Tensor,
    labels: torch.Tensor,
    config: FinetuneLossConfig = FinetuneLossConfig(),
) -> tuple[torch.Tensor, dict[str, float]]:
    """Prototype-classifier objective ``cls + con + reg``.

    ``labels`` holds a class id for labeled samples and ``-1`` for unlabeled ones.
    Pseudo-labels are taken from the augmented view's prediction when its
    confidence reaches ``config.confidence`` and supervise the original view;
    a confidence of 1 or more disables them. The pseudo-label term is averaged
    over all unlabeled samples in the batch; the marginal entropy is taken over
    the whole batch.
    """
    if prototypes.shape[0] == 0:
        raise ValueError("no prototypes")
    protos = F.normalize(prototypes, dim=-1)
    logits = z @ protos.T / config.tau_proto
    log_probs = torch.log_softmax(logits, dim=-1)
    probs = log_probs.exp()

    labeled = labels >= 0
    zero = logits.sum() * 0.0
    l_sup = -log_probs[labeled, labels[labeled]].mean() if labeled.any() else zero

    l_pseudo = zero
    unlabeled = ~labeled
    if unlabeled.any() and config.confidence < 1.0:
        with torch.no_grad():
            aug_probs = torch.softmax(z_aug[unlabeled] @ protos.T / config.tau_proto, dim=-1)
            conf, pseudo = aug_probs.max(dim=-1)
            keep = conf >= config.confidence
        if keep.any():
            lp = log_probs[unlabeled]
            l_pseudo = -lp[keep, pseudo[keep]].sum() / unlabeled.sum()

    l_cls = l_sup + l_pseudo
    l_con = unsup_loss(z, z_aug, config.tau) if z.shape[0] >= 1 else zero
    entropy = marginal_entropy(probs)
    sep = separation_penalty(prototypes)
    l_reg = -entropy + sep
    loss = l_cls + l_con + l_reg
    terms = {
        "l_cls": float(l_cls.detach()),
        "l_sup": float(l_sup.detach()),
        "l_pseudo": float(l_pseudo.detach()),
        "l_con": float(l_con.detach()),
        "l_reg": float(l_reg.detach()),
        "marginal_entropy": float(entropy.detach()),
        "separation": float(sep.detach()),
        "l_fine": float(loss.detach()),
    }
    return loss, terms
