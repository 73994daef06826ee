"""GCD scoring: Hungarian-matched accuracy, feature-space statistics and reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

from .imaging import GCDSplit, Sample


@dataclass
class EvalReport:
    protocol: str
    all: float
    old: float
    new: float
    intra: float
    inter: float
    ratio: float
    confusion: list[list[int]]
    class_names: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


def match_clusters(pred, truth, clusters=None, classes=None, prefer=()) -> dict[int, int]:
    """Optimal one-to-one map from predicted cluster ids to class ids (max total agreement).

    ``clusters``/``classes`` widen the id universes beyond the ids present in the
    data; the smaller side is padded with ids no sample carries (negative ones).
    Among maximal maps, one with the most agreement on the ``prefer`` classes is
    chosen, so the split of hits between those and the rest does not depend on
    how the clusters happen to be numbered.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    clusters = np.unique(np.concatenate([pred, np.asarray(clusters if clusters is not None else [], dtype=np.int64)]))
    classes = np.unique(np.concatenate([truth, np.asarray(classes if classes is not None else [], dtype=np.int64)]))
    k = max(len(clusters), len(classes))
    counts = np.zeros((k, k), dtype=np.int64)
    ci = {c: i for i, c in enumerate(clusters)}
    ti = {t: i for i, t in enumerate(classes)}
    np.add.at(counts, ([ci[p] for p in pred], [ti[t] for t in truth]), 1)
    bonus = np.zeros(k, dtype=np.int64)
    bonus[: len(classes)] = np.isin(classes, list(prefer))
    # lexicographic: total matches first, preferred-class matches second
    score = counts * (len(pred) + 1) + counts * bonus[None, :]
    rows, cols = linear_sum_assignment(score, maximize=True)
    mapping = {}
    for r, c in zip(rows, cols):
        if r < len(clusters):
            mapping[int(clusters[r])] = int(classes[c]) if c < len(classes) else -1 - int(c)
    return mapping


def hungarian_accuracy(pred, truth, old_classes, clusters=None, classes=None) -> tuple[float, float, float]:
    """All/Old/New accuracy (percent) under a single global cluster-to-class matching.

    Old and New are computed over samples whose true class is in / not in
    ``old_classes``; a subset with no samples scores ``nan``.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.size == 0:
        raise ValueError("empty prediction list")
    if pred.shape != truth.shape:
        raise ValueError("pred and truth differ in length")
    mapping = match_clusters(pred, truth, clusters, classes, prefer=old_classes)
    hits = np.array([mapping[p] for p in pred]) == truth
    is_old = np.isin(truth, list(old_classes))

    def pct(mask):
        return float(100.0 * hits[mask].mean()) if mask.any() else float("nan")

    return pct(np.ones_like(hits)), pct(is_old), pct(~is_old)


def confusion_matrix(pred, truth, classes: Sequence[int], clusters: Sequence[int] | None = None, prefer=()) -> np.ndarray:
    """Rows: true class; columns: the class each prediction was matched to.

    Every cluster in ``clusters`` (default: the predicted ids) is matched to a class
    in ``classes``, so row sums equal per-class sample counts whenever there are at
    least as many classes as clusters. ``prefer`` breaks ties as in :func:`match_clusters`.
    """
    mapping = match_clusters(pred, truth, clusters, classes, prefer)
    idx = {c: i for i, c in enumerate(classes)}
    out = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(pred, truth):
        m = mapping[int(p)]
        if m in idx:
            out[idx[int(t)], idx[m]] += 1
    return out


def feature_stats(embeddings, labels) -> tuple[float, float, float]:
    """Intra-class spread, inter-class centroid spread and their ratio.

    intra: mean over classes of the mean squared distance to the class centroid;
    inter: mean over unordered centroid pairs of the squared centroid distance.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("feature statistics need at least two classes")
    centroids = np.stack([x[y == c].mean(axis=0) for c in classes])
    intra = float(np.mean([((x[y == c] - centroids[i]) ** 2).sum(axis=1).mean() for i, c in enumerate(classes)]))
    diffs = centroids[:, None, :] - centroids[None, :, :]
    sq = (diffs**2).sum(-1)
    iu = np.triu_indices(len(classes), k=1)
    inter = float(sq[iu].mean())
    return intra, inter, inter / (intra + 1e-12)


@torch.no_grad()
def embed_samples(model, samples: Sequence[Sample], batch_size: int = 64) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(samples), batch_size):
        batch = np.stack([s.image for s in samples[i : i + batch_size]])
        x = torch.as_tensor(batch, dtype=dtype).permute(0, 3, 1, 2)
        out.append(model(x, mode="inference"))
    return torch.cat(out) if out else torch.zeros(0, model.config.embedding_dim, dtype=dtype)


def predict(embeddings: torch.Tensor, prototypes: torch.Tensor) -> np.ndarray:
    sims = embeddings @ F.normalize(prototypes, dim=-1).T
    return sims.argmax(dim=-1).cpu().numpy()


def evaluate(model, prototypes: torch.Tensor, split: GCDSplit, protocol: str = "transductive"):
    """Score the parametric prototype head on ``D_u`` (transductive) or ``D_test`` (inductive).

    Returns ``(report, embeddings, samples)`` so callers can dump the embeddings.
    """
    if protocol == "transductive":
        samples = split.unlabeled
    elif protocol == "inductive":
        samples = split.test
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    if not samples:
        raise ValueError(f"{protocol} evaluation needs a non-empty {'D_u' if protocol == 'transductive' else 'D_test'}")
    model.eval()
    z = embed_samples(model, samples)
    pred = predict(z, prototypes)
    truth = np.array([s.class_id for s in samples])
    classes = sorted(split.old_classes | split.new_classes | set(truth.tolist()))
    clusters = list(range(prototypes.shape[0]))
    all_acc, old_acc, new_acc = hungarian_accuracy(pred, truth, split.old_classes, clusters, classes)
    conf = confusion_matrix(pred, truth, classes, clusters, prefer=split.old_classes)
    zn = z.double().numpy()
    if len(np.unique(truth)) >= 2:
        intra, inter, ratio = feature_stats(zn, truth)
    else:
        intra = inter = ratio = float("nan")
    report = EvalReport(protocol, all_acc, old_acc, new_acc, intra, inter, ratio,
                        conf.tolist(), [str(c) for c in classes])
    return report, zn, samples


def write_embeddings_csv(path, samples: Sequence[Sample], embeddings: np.ndarray, old_classes) -> None:
    embeddings = np.asarray(embeddings)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "label", "is_old"] + [f"dim{i}" for i in range(embeddings.shape[1])])
        for s, z in zip(samples, embeddings):
            writer.writerow([s.sample_id, s.class_id, int(s.class_id in old_classes)] + [repr(float(v)) for v in z])
