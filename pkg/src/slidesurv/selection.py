"""Patch selection: condense a feature bag to N_S visual prompts.

Strategies:
  em       mixture-responsibility screening (rare clusters kept whole,
           big clusters contribute their highest- and lowest-posterior
           patches, seeded random padding fills the remainder)
  cluster  proportional allocation of centroid-nearest patches
  random   uniform without-replacement sample
  none     keep every patch (N_S becomes N_p)
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .clustering import Centroids, GmmModel, _pairwise_sq_dists, assign_to_centroids, responsibilities
from .dataio import FeatureBag
from .errors import SelectionError

STRATEGIES = ("em", "cluster", "random", "none")

RARE_DIVISOR = 32   # classes with count < N_S/32 are kept whole
TOPK_DIVISOR = 16   # classes with count >= N_S/16 contribute top-K each side


@dataclass
class SelectionResult:
    selected_indices: list[int]
    provenance: list[str]
    strategy: str
    # per-selected-patch diagnostics (class and max posterior where defined)
    classes: list[int] | None = None
    posteriors: list[float] | None = None

    def __post_init__(self):
        if len(set(self.selected_indices)) != len(self.selected_indices):
            raise SelectionError("duplicate indices in selection")

    def to_text(self) -> str:
        lines = ["index\tclass\tposterior\tprovenance"]
        for i, idx in enumerate(self.selected_indices):
            cls = self.classes[i] if self.classes is not None else -1
            post = self.posteriors[i] if self.posteriors is not None else float("nan")
            lines.append(f"{idx}\t{cls}\t{post!r}\t{self.provenance[i]}")
        return "\n".join(lines) + "\n"


def bag_seed(base_seed: int, sample_id: str) -> int:
    """Stable per-bag seed so padding is deterministic across runs."""
    return (base_seed * 0x9E3779B1 + zlib.crc32(sample_id.encode())) % (2**32)


def _check_budget(n_patches: int, n_select: int):
    if n_select > n_patches:
        raise SelectionError(f"cannot select {n_select} from {n_patches} patches")
    if n_select < 1:
        raise SelectionError(f"n_select must be positive, got {n_select}")


def select_em(bag: FeatureBag, model: GmmModel, n_select: int, seed: int,
              top_k: int | None = None) -> SelectionResult:
    n_p = bag.features.shape[0]
    _check_budget(n_p, n_select)
    resp = responsibilities(bag.features, model)
    classes = resp.argmax
    scores = resp.max_posterior
    n_components = model.n_components
    counts = np.bincount(classes, minlength=n_components)

    if top_k is None:
        # per qualifying class: K highest and K lowest posteriors
        top_k = max(1, n_select // (4 * n_components))
    picks: list[int] = []
    provenance: list[str] = []

    for c in range(n_components):
        count = counts[c]
        if count == 0:
            continue
        members = np.flatnonzero(classes == c)
        # deterministic order: posterior descending, index ascending on ties
        order = members[np.lexsort((members, -scores[members]))]
        if count < n_select / RARE_DIVISOR:
            picks.extend(int(i) for i in order)
            provenance.extend(["rare-cluster"] * len(order))
        elif count >= n_select / TOPK_DIVISOR:
            hi = order[:top_k]
            lo = [i for i in order[::-1][:top_k] if i not in set(hi)]
            picks.extend(int(i) for i in hi)
            provenance.extend(["top-max-posterior"] * len(hi))
            picks.extend(int(i) for i in lo)
            provenance.extend(["top-min-posterior"] * len(lo))
        # middle-band classes select nothing; padding covers them

    if len(picks) < n_select:
        rng = np.random.default_rng(seed)
        pool = np.setdiff1d(np.arange(n_p), np.asarray(picks, dtype=np.int64))
        pad = rng.choice(pool, size=n_select - len(picks), replace=False)
        picks.extend(int(i) for i in pad)
        provenance.extend(["random-pad"] * len(pad))
    elif len(picks) > n_select:
        picks, provenance = _truncate(picks, provenance, scores, n_select)

    return SelectionResult(picks, provenance, "em",
                           classes=[int(classes[i]) for i in picks],
                           posteriors=[float(scores[i]) for i in picks])


def _truncate(picks, provenance, scores, n_select):
    """Drop over-budget picks, lowest priority first; rare picks last."""
    mean_score = float(np.mean([scores[i] for i in picks]))

    def priority(i, prov):
        # higher tuple = kept longer
        tier = {"random-pad": 0, "top-min-posterior": 1,
                "top-max-posterior": 1, "rare-cluster": 2}[prov]
        return (tier, abs(scores[i] - mean_score), -i)

    ranked = sorted(zip(picks, provenance), key=lambda t: priority(*t), reverse=True)
    kept = ranked[:n_select]
    kept_set = {i for i, _ in kept}
    out_picks, out_prov = [], []
    for i, prov in zip(picks, provenance):  # preserve original order
        if i in kept_set:
            out_picks.append(i)
            out_prov.append(prov)
    return out_picks, out_prov


def select_cluster(bag: FeatureBag, centroids: Centroids, n_select: int,
                   seed: int) -> SelectionResult:
    n_p = bag.features.shape[0]
    _check_budget(n_p, n_select)
    labels = assign_to_centroids(bag.features, centroids)
    d2 = np.maximum(_pairwise_sq_dists(bag.features, centroids.vectors), 0.0)
    own_dist = d2[np.arange(n_p), labels]

    picks: list[int] = []
    provenance: list[str] = []
    for c in range(centroids.count):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        quota = int(round(members.size / n_p * n_select))
        order = members[np.lexsort((members, own_dist[members]))]
        picks.extend(int(i) for i in order[:quota])
        provenance.extend(["cluster-nearest"] * min(quota, len(order)))

    if len(picks) > n_select:
        # drop the globally farthest quota picks
        order = sorted(range(len(picks)),
                       key=lambda j: (own_dist[picks[j]], picks[j]))[:n_select]
        keep = sorted(order)
        picks = [picks[j] for j in keep]
        provenance = [provenance[j] for j in keep]
    elif len(picks) < n_select:
        pool = np.setdiff1d(np.arange(n_p), np.asarray(picks, dtype=np.int64))
        order = pool[np.lexsort((pool, own_dist[pool]))]
        extra = order[: n_select - len(picks)]
        picks.extend(int(i) for i in extra)
        provenance.extend(["cluster-fill"] * len(extra))

    return SelectionResult(picks, provenance, "cluster",
                           classes=[int(labels[i]) for i in picks])


def select_random(bag: FeatureBag, n_select: int, seed: int) -> SelectionResult:
    n_p = bag.features.shape[0]
    _check_budget(n_p, n_select)
    rng = np.random.default_rng(seed)
    picks = [int(i) for i in rng.choice(n_p, size=n_select, replace=False)]
    return SelectionResult(picks, ["random"] * n_select, "random")


def select_none(bag: FeatureBag) -> SelectionResult:
    n_p = bag.features.shape[0]
    return SelectionResult(list(range(n_p)), ["all"] * n_p, "none")


def select(bag: FeatureBag, strategy: str, n_select: int, seed: int,
           model: GmmModel | None = None,
           centroids: Centroids | None = None) -> SelectionResult:
    if strategy == "em":
        return select_em(bag, model, n_select, seed)
    if strategy == "cluster":
        if centroids is None:
            centroids = Centroids(model.means.copy())
        return select_cluster(bag, centroids, n_select, seed)
    if strategy == "random":
        return select_random(bag, n_select, seed)
    if strategy == "none":
        return select_none(bag)
    raise SelectionError(f"unknown strategy {strategy!r}")
