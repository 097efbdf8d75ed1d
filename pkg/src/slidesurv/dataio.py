"""Cohort file formats and synthetic cohort generation.

On-disk layout of a cohort directory:

    manifest.tsv       line 1: ``# d=<int>``; line 2: tab-separated header
                       ``sample_id bag genomic time censor fold``; one row
                       per patient, paths relative to the manifest, genomic
                       ``-`` when absent.
    bags/<id>.mat      patch-feature matrix (N_p x d)
    genomic/<id>.mat   genomic embedding (1 x d)

Matrix files are little-endian float32, row-major, preceded by an 8-byte
header: 4-byte magic ``SSMX``, uint16 rows, uint16 cols.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import BinningError, ConfigError, DataLoadError

MAGIC = b"SSMX"
_HEADER = struct.Struct("<4sHH")

MANIFEST_COLUMNS = ("sample_id", "bag", "genomic", "time", "censor", "fold")
N_BINS = 4
N_FOLDS = 5


# ---------------------------------------------------------------------------
# binary matrix format


def write_matrix_block(fh, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("matrix blocks are 2-D")
    rows, cols = arr.shape
    if rows > 0xFFFF or cols > 0xFFFF:
        raise ValueError("matrix too large for uint16 header")
    fh.write(_HEADER.pack(MAGIC, rows, cols))
    fh.write(arr.tobytes())


def read_matrix_block(fh) -> np.ndarray:
    head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise DataLoadError("truncated matrix header")
    magic, rows, cols = _HEADER.unpack(head)
    if magic != MAGIC:
        raise DataLoadError(f"bad magic {magic!r}")
    body = fh.read(4 * rows * cols)
    if len(body) != 4 * rows * cols:
        raise DataLoadError("truncated matrix body")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64)


def save_matrix(path, arr: np.ndarray):
    with open(path, "wb") as fh:
        write_matrix_block(fh, arr)


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_matrix_block(fh)


# ---------------------------------------------------------------------------
# domain records


@dataclass(frozen=True)
class FeatureBag:
    sample_id: str
    features: np.ndarray  # (N_p, d)


@dataclass(frozen=True)
class GenomicEmbedding:
    sample_id: str
    embedding: np.ndarray  # (d,)


@dataclass(frozen=True)
class SurvivalRecord:
    sample_id: str
    time: float
    censor: int  # 1 = right-censored
    bin: int | None = None


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    bag_path: str
    genomic_path: str | None
    time: float
    censor: int
    fold: int


@dataclass
class CohortManifest:
    d: int
    entries: list[ManifestEntry]

    @property
    def folds(self) -> dict[str, int]:
        return {e.sample_id: e.fold for e in self.entries}


@dataclass
class Cohort:
    """Fully materialized, immutable after loading."""
    manifest: CohortManifest
    bags: dict[str, FeatureBag]
    genomics: dict[str, GenomicEmbedding]  # absent ids simply missing
    records: dict[str, SurvivalRecord]

    @property
    def d(self) -> int:
        return self.manifest.d

    def sample_ids(self) -> list[str]:
        return [e.sample_id for e in self.manifest.entries]

    def fold_split(self, fold: int) -> tuple[list[str], list[str]]:
        train, test = [], []
        for e in self.manifest.entries:
            (test if e.fold == fold else train).append(e.sample_id)
        return train, test


def write_manifest(path, manifest: CohortManifest):
    lines = [f"# d={manifest.d}", "\t".join(MANIFEST_COLUMNS)]
    for e in manifest.entries:
        lines.append("\t".join([
            e.sample_id, e.bag_path, e.genomic_path or "-",
            repr(e.time), str(e.censor), str(e.fold),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> CohortManifest:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataLoadError(f"{path}: cannot read manifest ({exc})") from exc
    if not lines or not lines[0].startswith("# d="):
        raise DataLoadError(f"{path}: missing '# d=' line")
    d = int(lines[0].split("=", 1)[1])
    if tuple(lines[1].split("\t")) != MANIFEST_COLUMNS:
        raise DataLoadError(f"{path}: unexpected header {lines[1]!r}")
    entries = []
    for ln in lines[2:]:
        if not ln.strip():
            continue
        parts = ln.split("\t")
        if len(parts) != len(MANIFEST_COLUMNS):
            raise DataLoadError(f"{path}: malformed row {ln!r}")
        sid, bag, genomic, time, censor, fold = parts
        entries.append(ManifestEntry(sid, bag, None if genomic == "-" else genomic,
                                     float(time), int(censor), int(fold)))
    return CohortManifest(d=d, entries=entries)


def load_cohort(manifest_path) -> Cohort:
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent
    bags, genomics, records = {}, {}, {}
    for e in manifest.entries:
        if e.sample_id in bags:
            raise DataLoadError(f"duplicate sample_id {e.sample_id!r}")
        bag_file = root / e.bag_path
        if not bag_file.exists():
            raise DataLoadError(f"{e.sample_id}: missing bag file {bag_file}")
        feats = load_matrix(bag_file)
        if feats.shape[1] != manifest.d:
            raise DataLoadError(
                f"{e.sample_id}: bag has d={feats.shape[1]}, cohort d={manifest.d}")
        if not np.isfinite(feats).all():
            raise DataLoadError(f"{e.sample_id}: non-finite bag values")
        bags[e.sample_id] = FeatureBag(e.sample_id, feats)
        if e.genomic_path is not None:
            gen_file = root / e.genomic_path
            if not gen_file.exists():
                raise DataLoadError(f"{e.sample_id}: missing genomic file {gen_file}")
            emb = load_matrix(gen_file)
            if emb.shape != (1, manifest.d):
                raise DataLoadError(
                    f"{e.sample_id}: genomic shape {emb.shape}, expected (1, {manifest.d})")
            genomics[e.sample_id] = GenomicEmbedding(e.sample_id, emb[0])
        if e.time <= 0:
            raise DataLoadError(f"{e.sample_id}: non-positive time {e.time}")
        records[e.sample_id] = SurvivalRecord(e.sample_id, e.time, e.censor)
    return Cohort(manifest, bags, genomics, records)


# ---------------------------------------------------------------------------
# discrete time bins


def quartile_cuts(uncensored_times) -> np.ndarray:
    """25/50/75 percentiles (linear interpolation) of uncensored times."""
    times = np.asarray(uncensored_times, dtype=np.float64)
    if times.size < N_BINS:
        raise BinningError(f"need >= {N_BINS} uncensored patients, got {times.size}")
    return np.percentile(times, [25.0, 50.0, 75.0], method="linear")


def assign_bins(records: list[SurvivalRecord]) -> list[SurvivalRecord]:
    """Assign each record the bin r with time in [t_r, t_{r+1}).

    Cut points come from uncensored patients only; the same cuts apply to
    censored patients.
    """
    cuts = quartile_cuts([r.time for r in records if r.censor == 0])
    return [replace(r, bin=int(np.sum(r.time >= cuts))) for r in records]


# ---------------------------------------------------------------------------
# synthetic cohort generation


@dataclass
class GeneratorConfig:
    seed: int = 0
    n_patients: int = 200
    d: int = 32
    n_patch_range: tuple[int, int] = (150, 250)
    n_latent_clusters: int = 20
    cluster_spread: float = 2.0
    signal_separation: float = 8.0
    genomic_noise: float = 0.1
    time_signal: float = 1.0
    time_noise: float = 0.3
    base_time: float = 10.0
    censor_range: tuple[float, float] = (5.0, 60.0)


@dataclass
class GeneratedCohort:
    manifest_path: Path
    manifest: CohortManifest
    planted_risks: dict[str, float]
    n_signal_clusters: int


def generate_synthetic_cohort(out_dir, config: GeneratorConfig = None, **overrides) -> GeneratedCohort:
    """Write a synthetic cohort with a planted, recoverable risk signal.

    Patches are drawn from a mixture of latent Gaussian clusters; roughly
    20% of the clusters carry signal. Signal clusters are well separated
    from the background and contribute at most one patch each, so the
    signal lives in rare, atypical patches rather than in bulk patch
    statistics. The genomic embedding is a fixed noisy linear readout of
    each patient's signal-cluster occupancy, and survival time decreases
    in a planted risk score combining occupancy and the genomic
    embedding. Fully deterministic given the seed.
    """
    cfg = replace(config or GeneratorConfig(), **overrides)
    if cfg.n_patients < 20:
        raise ConfigError(f"n_patients must be >= 20, got {cfg.n_patients}")
    if cfg.d < 8:
        raise ConfigError(f"d must be >= 8, got {cfg.d}")
    if cfg.n_latent_clusters < 4:
        raise ConfigError(f"n_latent_clusters must be >= 4, got {cfg.n_latent_clusters}")
    lo, hi = cfg.n_patch_range
    if lo < 1 or hi < lo:
        raise ConfigError(f"bad n_patch_range {cfg.n_patch_range}")

    out_dir = Path(out_dir)
    (out_dir / "bags").mkdir(parents=True, exist_ok=True)
    (out_dir / "genomic").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(cfg.seed)
    n_clusters = cfg.n_latent_clusters
    n_signal = max(1, round(0.2 * n_clusters))
    n_background = n_clusters - n_signal
    means = rng.normal(0.0, cfg.cluster_spread, size=(n_clusters, cfg.d))
    # signal clusters sit far outside the background cloud
    means[:n_signal] = rng.normal(0.0, cfg.signal_separation, size=(n_signal, cfg.d))
    genomic_map = rng.normal(0.0, 1.0, size=(cfg.d, n_signal))
    genomic_readout = rng.normal(0.0, 1.0, size=cfg.d)

    bags, genomics, occupancy_risk = [], [], []
    for i in range(cfg.n_patients):
        n_p = int(rng.integers(lo, hi + 1))
        # each signal cluster contributes at most one patch, present with
        # a shared per-patient frailty probability
        frailty = rng.uniform(0.1, 0.9)
        occ = (rng.random(n_signal) < frailty).astype(np.float64)
        occ_count = int(occ.sum())
        if occ_count >= n_p:
            occ[:] = 0.0
            occ_count = 0
        bg_probs = rng.dirichlet(np.ones(n_background))
        counts = rng.multinomial(n_p - occ_count, bg_probs)
        rows = [means[c:c + 1] + rng.normal(0.0, 1.0, size=(1, cfg.d))
                for c in range(n_signal) if occ[c] > 0]
        rows += [means[n_signal + c] + rng.normal(0.0, 1.0, size=(counts[c], cfg.d))
                 for c in range(n_background) if counts[c] > 0]
        patches = np.vstack(rows)[rng.permutation(n_p)]
        genomic = genomic_map @ occ + cfg.genomic_noise * rng.normal(0.0, 1.0, size=cfg.d)
        bags.append(patches)
        genomics.append(genomic)
        occupancy_risk.append(4.0 * occ.mean()
                              + 0.5 * float(genomic_readout @ genomic) / np.sqrt(cfg.d))

    risk = np.asarray(occupancy_risk)
    risk = (risk - risk.mean()) / max(risk.std(), 1e-12)

    entries = []
    planted = {}
    fold_perm = rng.permutation(cfg.n_patients)
    for i in range(cfg.n_patients):
        sid = f"P{i:04d}"
        event_time = cfg.base_time * np.exp(-cfg.time_signal * risk[i]
                                            + cfg.time_noise * rng.normal())
        censor_time = rng.uniform(*cfg.censor_range)
        censored = int(censor_time < event_time)
        observed = min(event_time, censor_time)
        bag_rel = f"bags/{sid}.mat"
        gen_rel = f"genomic/{sid}.mat"
        save_matrix(out_dir / bag_rel, bags[i])
        save_matrix(out_dir / gen_rel, genomics[i].reshape(1, -1))
        entries.append(ManifestEntry(sid, bag_rel, gen_rel, float(observed),
                                     censored, int(fold_perm[i]) % N_FOLDS))
        planted[sid] = float(risk[i])

    manifest = CohortManifest(d=cfg.d, entries=entries)
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest_path, manifest)
    risk_lines = ["sample_id\tplanted_risk"]
    risk_lines += [f"{sid}\t{planted[sid]!r}" for sid in sorted(planted)]
    (out_dir / "planted_risk.tsv").write_text("\n".join(risk_lines) + "\n")
    return GeneratedCohort(manifest_path, manifest, planted, n_signal)
