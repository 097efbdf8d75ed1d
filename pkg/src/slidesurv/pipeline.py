"""Training loop, 5-fold cross-validation, ablations, checkpointing.

Per-fold protocol: the mixture model is fit on training-fold patches only,
time bins come from training-fold uncensored quartiles, and evaluation runs
in visual-only mode on the held-out fold.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .clustering import GmmModel, em_fit, gmm_from_centroids, kmeans
from .dataio import Cohort, FeatureBag, N_FOLDS, assign_bins, quartile_cuts
from .errors import ConfigError, DataLoadError, TrainingError
from .metrics import concordance_index
from .model import ForwardOutput, SurvivalNet
from .reconstruct import LOSS_KINDS
from .selection import STRATEGIES, bag_seed, select
from .survival import nll_loss


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    weight_decay: float = 1e-5
    epochs: int = 30           # desk-scale default; reference setup used 100
    lambda_kl: float = 1.0
    n_prompts: int = 64        # N_S
    n_tokens: int = 16         # N_L
    n_clusters: int = 24       # C_h
    em_iters: int = 10
    corpus_cap: int = 50_000   # max patches sampled for corpus-level fitting
    strategy: str = "em"
    loss_kind: str = "kl"
    use_vga: bool = True
    standardize_genomic: bool = False
    grad_accum: int = 1
    seed: int = 0
    n_folds: int = N_FOLDS

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy {self.strategy!r} not in {STRATEGIES}")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind {self.loss_kind!r} not in {LOSS_KINDS}")
        for name in ("learning_rate", "epochs", "n_prompts", "n_tokens",
                     "n_clusters", "grad_accum", "n_folds"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("weight_decay", "lambda_kl", "em_iters", "corpus_cap"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @staticmethod
    def from_json(text: str) -> "TrainConfig":
        return TrainConfig(**json.loads(text))


class Adam:
    """Adam with decoupled weight decay, deterministic update order."""

    def __init__(self, params, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)


@dataclass
class Checkpoint:
    state: dict[str, np.ndarray]
    gmm: GmmModel
    config: TrainConfig
    d: int
    genomic_shift: np.ndarray | None = None  # per-dim standardization, optional
    genomic_scale: np.ndarray | None = None
    train_ids: tuple[str, ...] = ()  # provenance: patients the GMM/net saw
    bin_cuts: np.ndarray | None = None  # training-split quartile cut points

    def config_hash(self) -> str:
        return self.config.config_hash()

    def weights_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.state):
            h.update(name.encode())
            h.update(self.state[name].tobytes())
        return h.hexdigest()[:16]

    def build_net(self) -> SurvivalNet:
        net = SurvivalNet(self.d, n_tokens=self.config.n_tokens,
                          use_vga=self.config.use_vga, seed=self.config.seed)
        net.load_state_dict(self.state)
        return net


def save_checkpoint(path, ckpt: Checkpoint):
    arrays = {f"param::{k}": v for k, v in ckpt.state.items()}
    arrays["gmm::weights"] = ckpt.gmm.weights
    arrays["gmm::means"] = ckpt.gmm.means
    arrays["gmm::variances"] = ckpt.gmm.variances
    arrays["meta::d"] = np.array([ckpt.d], dtype=np.int64)
    arrays["meta::config"] = np.frombuffer(ckpt.config.to_json().encode(), dtype=np.uint8)
    arrays["meta::train_ids"] = np.frombuffer(
        json.dumps(list(ckpt.train_ids)).encode(), dtype=np.uint8)
    if ckpt.genomic_shift is not None:
        arrays["meta::genomic_shift"] = ckpt.genomic_shift
        arrays["meta::genomic_scale"] = ckpt.genomic_scale
    if ckpt.bin_cuts is not None:
        arrays["meta::bin_cuts"] = ckpt.bin_cuts
    np.savez(path, **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    config = TrainConfig.from_json(bytes(arrays["meta::config"]).decode())
    state = {k.split("::", 1)[1]: arrays[k] for k in arrays if k.startswith("param::")}
    gmm = GmmModel(arrays["gmm::weights"], arrays["gmm::means"], arrays["gmm::variances"])
    train_ids = tuple(json.loads(bytes(arrays["meta::train_ids"]).decode()))
    return Checkpoint(
        state=state, gmm=gmm, config=config, d=int(arrays["meta::d"][0]),
        genomic_shift=arrays.get("meta::genomic_shift"),
        genomic_scale=arrays.get("meta::genomic_scale"),
        train_ids=train_ids,
        bin_cuts=arrays.get("meta::bin_cuts"))


# ---------------------------------------------------------------------------
# corpus-level mixture fitting


def fit_cohort_gmm(cohort: Cohort, sample_ids, config: TrainConfig) -> GmmModel:
    """K-means++ seeding, hard-assignment initialization, EM refinement on
    patches pooled from the given patients (capped subsample)."""
    pools = [cohort.bags[sid].features for sid in sample_ids]
    points = np.vstack(pools)
    if points.shape[0] > config.corpus_cap:
        rng = np.random.default_rng(config.seed)
        idx = rng.choice(points.shape[0], size=config.corpus_cap, replace=False)
        points = points[np.sort(idx)]
    centroids = kmeans(points, config.n_clusters, seed=config.seed)
    model = gmm_from_centroids(points, centroids)
    return em_fit(points, model, iters=config.em_iters)


def _select_for_bag(bag: FeatureBag, gmm: GmmModel, config: TrainConfig):
    n_select = min(config.n_prompts, bag.features.shape[0])
    return select(bag, config.strategy, n_select,
                  bag_seed(config.seed, bag.sample_id), model=gmm)


def forward_risk(bag: FeatureBag, ckpt: Checkpoint, mode: str = "inference",
                 genomic: np.ndarray | None = None,
                 net: SurvivalNet | None = None) -> ForwardOutput:
    """Run one patient through a checkpoint. The path is identical in both
    modes; ``mode='train'`` only enables the reconstruction loss."""
    if bag.features.shape[1] != ckpt.d:
        raise DataLoadError(f"{bag.sample_id}: d={bag.features.shape[1]} vs checkpoint d={ckpt.d}")
    if net is None:
        net = ckpt.build_net()
    sel = _select_for_bag(bag, ckpt.gmm, ckpt.config)
    gen = None
    if mode == "train" and genomic is not None:
        gen = _standardized(genomic, ckpt)
    return net.forward(bag.features, sel.selected_indices, genomic=gen,
                       loss_kind=ckpt.config.loss_kind)


def _standardized(genomic, ckpt: Checkpoint):
    if ckpt.genomic_shift is None:
        return genomic
    return (genomic - ckpt.genomic_shift) / ckpt.genomic_scale


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_nll: list[float] = field(default_factory=list)
    epoch_recon: list[float] = field(default_factory=list)


def train_fold(cohort: Cohort, fold: int, config: TrainConfig) -> tuple[Checkpoint, TrainHistory]:
    train_ids, _ = cohort.fold_split(fold)
    if not train_ids:
        raise TrainingError(f"fold {fold}: empty training split")
    train_records = assign_bins([cohort.records[s] for s in train_ids])
    bins = {r.sample_id: r for r in train_records}
    cuts = quartile_cuts([r.time for r in train_records if r.censor == 0])

    gmm = fit_cohort_gmm(cohort, train_ids, config)

    shift = scale = None
    if config.standardize_genomic:
        gens = np.vstack([cohort.genomics[s].embedding for s in train_ids
                          if s in cohort.genomics])
        shift = gens.mean(axis=0)
        scale = np.maximum(gens.std(axis=0), 1e-8)

    net = SurvivalNet(cohort.d, n_tokens=config.n_tokens,
                      use_vga=config.use_vga, seed=config.seed)
    ckpt = Checkpoint(net.state_dict(), gmm, config, cohort.d, shift, scale,
                      tuple(train_ids), cuts)
    optimizer = Adam(net.parameters(), config.learning_rate, config.weight_decay)
    rng = np.random.default_rng(bag_seed(config.seed, f"fold{fold}"))

    # selections are deterministic per bag; compute once
    selections = {sid: _select_for_bag(cohort.bags[sid], gmm, config).selected_indices
                  for sid in train_ids}

    history = TrainHistory()
    order = np.array(train_ids)
    for epoch in range(config.epochs):
        rng.shuffle(order)
        totals = np.zeros(3)  # loss, nll, recon
        pending = 0
        net.zero_grad()
        for sid in order:
            record = bins[sid]
            gen = None
            if config.use_vga and config.lambda_kl > 0 and sid in cohort.genomics:
                gen = cohort.genomics[sid].embedding
                if shift is not None:
                    gen = (gen - shift) / scale
            out = net.forward(cohort.bags[sid].features, selections[sid],
                              genomic=gen, loss_kind=config.loss_kind)
            loss = nll_loss(out.profile, record)
            nll_val = loss.item()
            recon_val = 0.0
            if out.recon_loss is not None:
                loss = loss + ad.constant(config.lambda_kl) * out.recon_loss
                recon_val = out.recon_loss.item()
            if not np.isfinite(loss.item()):
                raise TrainingError(
                    f"fold {fold}, epoch {epoch}, patient {sid}: loss diverged "
                    f"(nll={nll_val!r}, recon={recon_val!r})")
            loss.backward()
            totals += (loss.item(), nll_val, recon_val)
            pending += 1
            if pending >= config.grad_accum:
                optimizer.step()
                net.zero_grad()
                pending = 0
        if pending:
            optimizer.step()
            net.zero_grad()
        n = len(order)
        history.epoch_loss.append(totals[0] / n)
        history.epoch_nll.append(totals[1] / n)
        history.epoch_recon.append(totals[2] / n)

    ckpt = replace(ckpt, state=net.state_dict())
    return ckpt, history


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class RiskRow:
    sample_id: str
    risk: float
    bin: int
    time: float
    censor: int


@dataclass
class FoldEval:
    fold: int
    c_index: float
    rows: list[RiskRow]

    def to_text(self) -> str:
        lines = ["sample_id\trisk\tbin\ttime\tcensor"]
        for r in self.rows:
            lines.append(f"{r.sample_id}\t{r.risk!r}\t{r.bin}\t{r.time!r}\t{r.censor}")
        return "\n".join(lines) + "\n"


def evaluate_fold(cohort: Cohort, fold: int, ckpt: Checkpoint) -> FoldEval:
    """Visual-only evaluation on the held-out fold; genomic data is never
    read here."""
    _, test_ids = cohort.fold_split(fold)
    net = ckpt.build_net()
    rows = []
    for sid in test_ids:
        out = forward_risk(cohort.bags[sid], ckpt, mode="inference", net=net)
        rec = cohort.records[sid]
        # bins relative to the training split's cut points
        b = int(np.sum(rec.time >= ckpt.bin_cuts)) if ckpt.bin_cuts is not None else -1
        rows.append(RiskRow(sid, out.risk, b, rec.time, rec.censor))
    c = concordance_index([r.risk for r in rows], [r.time for r in rows],
                          [r.censor for r in rows])
    return FoldEval(fold, c, rows)


@dataclass
class CvResult:
    fold_evals: list[FoldEval]
    histories: list[TrainHistory]
    checkpoints: list[Checkpoint]

    @property
    def c_indices(self) -> np.ndarray:
        return np.array([f.c_index for f in self.fold_evals])

    @property
    def mean(self) -> float:
        return float(self.c_indices.mean())

    @property
    def std(self) -> float:
        return float(self.c_indices.std())

    def summary(self) -> str:
        return f"{self.mean:.3f} ± {self.std:.3f}"


def cross_validate(cohort: Cohort, config: TrainConfig) -> CvResult:
    fold_evals, histories, checkpoints = [], [], []
    for fold in range(config.n_folds):
        ckpt, history = train_fold(cohort, fold, config)
        fold_evals.append(evaluate_fold(cohort, fold, ckpt))
        histories.append(history)
        checkpoints.append(ckpt)
    return CvResult(fold_evals, histories, checkpoints)


# ---------------------------------------------------------------------------
# ablation harness


@dataclass
class AblationRow:
    label: str
    mean: float
    std: float
    per_seed: list[float]


def run_ablation(cohort: Cohort, grid: list[tuple[str, TrainConfig]],
                 seeds=(0,)) -> list[AblationRow]:
    """Mean +/- std C-index per config over identical folds and seeds."""
    rows = []
    for label, config in grid:
        per_seed = []
        for seed in seeds:
            result = cross_validate(cohort, replace(config, seed=seed))
            per_seed.append(result.mean)
        arr = np.array(per_seed)
        rows.append(AblationRow(label, float(arr.mean()), float(arr.std()), per_seed))
    return rows


def ablation_table(rows: list[AblationRow]) -> str:
    width = max(len(r.label) for r in rows)
    lines = [f"{'config'.ljust(width)}  c-index"]
    for r in rows:
        lines.append(f"{r.label.ljust(width)}  {r.mean:.3f} ± {r.std:.3f}")
    return "\n".join(lines) + "\n"


def ablation_rows_machine(rows: list[AblationRow]) -> str:
    lines = ["label\tmean\tstd\tper_seed"]
    for r in rows:
        lines.append(f"{r.label}\t{r.mean!r}\t{r.std!r}\t"
                     + ",".join(repr(v) for v in r.per_seed))
    return "\n".join(lines) + "\n"


def standard_ablation_grid(base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    """Selection-strategy grid: em / cluster / random / none."""
    return [(s, replace(base, strategy=s)) for s in STRATEGIES]


def module_ablation_grid(base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    """Module grid: full model, reconstruction without screening, neither."""
    return [
        ("ese+vga", replace(base, strategy="em", use_vga=True)),
        ("vga-only", replace(base, strategy="none", use_vga=True)),
        ("neither", replace(base, strategy="none", use_vga=False, lambda_kl=0.0)),
    ]


def loss_ablation_grid(base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    return [(k, replace(base, loss_kind=k)) for k in LOSS_KINDS]
