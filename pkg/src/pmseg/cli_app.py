"""Command-line entry point and experiment drivers.

Three commands share one plain-text key=value configuration format:
`sample` runs a chain and writes records plus confidence maps, `benchmark`
sweeps training-set sizes in both estimator modes and writes the timing
table, and `evaluate` scores every sample against a ground-truth mask.
Datasets come either from IDX image/label files or from the built-in
synthetic shape generator, so nothing is ever fetched over the network.

The commands run behind the HTTP service by default: the CLI posts the
request to an in-process application instance (or to --server-url) and
writes the returned files under --out, keeping results identical either
way.
"""

from __future__ import annotations

import argparse
import csv
import math
import struct
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .analysis import TimingRun, class_histogram, confidence_map, dice, timing_report
from .geometry import BinaryMask, GrayImage, mask_to_levelset
from .likelihood import LikelihoodParams
from .proposal import ProposalParams, build_smooth_covariance
from .sampler import SampleRecord, SamplerConfig, run_chain
from .shape_prior import TrainingSet, calibrate_bandwidth

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


# ---------------------------------------------------------------------------
# IDX image/label files


def load_idx_images(path: str) -> list[GrayImage]:
    """Parse an IDX image tensor file: big-endian magic 0x00000803, counts,
    then one unsigned byte per pixel, scaled to [0, 1] by /255."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise ValueError(f"IDX image file too short: {len(raw)} bytes")
    magic, count, rows, cols = struct.unpack(">iiii", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(
            f"bad IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise ValueError(f"IDX image file has {len(raw)} bytes, expected {expected}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows * cols)
    scale = pixels.astype(np.float64) / 255.0
    return [GrayImage(rows, cols, scale[i]) for i in range(count)]


def load_idx_labels(path: str) -> list[int]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"IDX label file too short: {len(raw)} bytes")
    magic, count = struct.unpack(">ii", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise ValueError(
            f"bad IDX label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    if len(raw) != 8 + count:
        raise ValueError(f"IDX label file has {len(raw)} bytes, expected {8 + count}")
    return [int(b) for b in raw[8:]]


def load_idx_pair(images_path: str, labels_path: str) -> tuple[list[GrayImage], list[int]]:
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise ValueError(
            f"IDX pairing mismatch: {len(images)} images but {len(labels)} labels"
        )
    return images, labels


def write_idx_images(path: str, images: np.ndarray) -> None:
    """Write an (n, rows, cols) uint8 tensor in IDX image format."""
    arr = np.asarray(images, dtype=np.uint8)
    if arr.ndim != 3:
        raise ValueError(f"expected (n, rows, cols) array, got shape {arr.shape}")
    n, rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(arr.tobytes())


def write_idx_labels(path: str, labels) -> None:
    arr = np.asarray(labels, dtype=np.uint8)
    if arr.ndim != 1:
        raise ValueError(f"expected 1-dim label array, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABELS_MAGIC, arr.size))
        fh.write(arr.tobytes())


# ---------------------------------------------------------------------------
# PGM output


def write_pgm(path: str, grid: np.ndarray) -> None:
    """Write a 2-dim array of values in [0, 1] as binary PGM, maxval 255."""
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-dim array, got shape {arr.shape}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("PGM values must lie in [0, 1]")
    bytes_ = np.round(arr * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(bytes_.tobytes())


def read_pgm(path: str) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    width, height = (int(t) for t in parts[1].split())
    if parts[2] != b"255":
        raise ValueError(f"unsupported PGM maxval {parts[2]!r}")
    data = np.frombuffer(parts[3], dtype=np.uint8)
    if data.size != width * height:
        raise ValueError("PGM payload length does not match header")
    return data.reshape(height, width)


# ---------------------------------------------------------------------------
# Configuration

_ESTIMATORS = ("subsampled", "full")
# the library also supports init="mask", but the config file has no way to
# carry a mask, so the CLI refuses it up front
_INITS = ("disk", "train")


@dataclass(frozen=True)
class RunConfig:
    """Flat key=value run configuration shared by all commands.

    Dataset sources and the output directory may be given here or as CLI
    flags; flags win. sigma, when set, is used for every class in place of
    leave-one-out bandwidth calibration.
    """

    n_samples: int
    burn_in: int = 200
    thin: int = 1
    m_hat: int = 10
    seed: int = 0
    estimator: str = "subsampled"
    init: str = "disk"
    gamma: float = 1.0
    perturb_scale: float = 1.0
    beta: float = 1.0
    blur_sigma: float = 2.0
    class_moves_per_sweep: int = 1
    shape_moves_per_sweep: int = 1
    sigma: float | None = None
    classes: tuple[int, ...] | None = None
    per_class: int | None = None
    binarize_threshold: float = 0.5
    test_index: int = 0
    benchmark_sizes: tuple[int, ...] = (1000, 5000, 10000)
    benchmark_repeats: int = 1
    mnist_images: str | None = None
    mnist_labels: str | None = None
    synthetic: str | None = None
    out: str | None = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.m_hat < 1:
            raise ValueError("m_hat must be >= 1")
        if self.estimator not in _ESTIMATORS:
            raise ValueError(f"estimator must be one of {_ESTIMATORS}, got {self.estimator!r}")
        if self.init not in _INITS:
            raise ValueError(f"init must be one of {_INITS}, got {self.init!r}")
        if self.gamma < 0 or self.perturb_scale < 0:
            raise ValueError("gamma and perturb_scale must be >= 0")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be >= 0")
        if self.class_moves_per_sweep < 0 or self.shape_moves_per_sweep < 0:
            raise ValueError("moves per sweep must be >= 0")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive when given")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError("binarize_threshold must lie strictly between 0 and 1")
        if self.per_class is not None and self.per_class < 1:
            raise ValueError("per_class must be >= 1 when given")
        if self.test_index < 0:
            raise ValueError("test_index must be >= 0")
        if not self.benchmark_sizes or any(s < 2 for s in self.benchmark_sizes):
            raise ValueError("benchmark_sizes must be >= 2 each")
        if self.benchmark_repeats < 1:
            raise ValueError("benchmark_repeats must be >= 1")

    def sampler_config(self, **overrides) -> SamplerConfig:
        kw = dict(
            n_samples=self.n_samples,
            burn_in=self.burn_in,
            thin=self.thin,
            m_hat=self.m_hat,
            seed=self.seed,
            class_moves_per_sweep=self.class_moves_per_sweep,
            shape_moves_per_sweep=self.shape_moves_per_sweep,
            proposal=ProposalParams(gamma=self.gamma, perturb_scale=self.perturb_scale),
            likelihood=LikelihoodParams(beta=self.beta),
            blur_sigma=self.blur_sigma,
            estimator=self.estimator,
            init=self.init,
        )
        kw.update(overrides)
        return SamplerConfig(**kw)


_INT_KEYS = {
    "n_samples", "burn_in", "thin", "m_hat", "seed", "per_class",
    "test_index", "benchmark_repeats", "class_moves_per_sweep",
    "shape_moves_per_sweep",
}
_FLOAT_KEYS = {"gamma", "perturb_scale", "beta", "blur_sigma", "sigma", "binarize_threshold"}
_STR_KEYS = {"estimator", "init", "mnist_images", "mnist_labels", "synthetic", "out"}
_INT_TUPLE_KEYS = {"classes", "benchmark_sizes"}
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _INT_TUPLE_KEYS


def _parse_value(key: str, text: str):
    try:
        if key in _INT_KEYS:
            return int(text)
        if key in _FLOAT_KEYS:
            return float(text)
        if key in _INT_TUPLE_KEYS:
            return tuple(int(t.strip()) for t in text.split(",") if t.strip())
    except ValueError:
        raise ValueError(f"configuration key {key}: cannot parse value {text!r}") from None
    return text


def parse_run_config(text: str) -> RunConfig:
    """Parse key=value lines; # comments and blank lines are skipped.

    Any unknown key, duplicate key, or out-of-range value is rejected here,
    before any dataset or chain work starts.
    """
    values: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw_line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _ALL_KEYS:
            raise ValueError(f"line {lineno}: unknown configuration key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate configuration key {key!r}")
        values[key] = _parse_value(key, value)
    if "n_samples" not in values:
        raise ValueError("missing required configuration key 'n_samples'")
    return RunConfig(**values)


def load_run_config(path: str) -> RunConfig:
    return parse_run_config(Path(path).read_text(encoding="utf-8"))


def render_run_config(cfg: RunConfig) -> str:
    """Canonical text form of the effective configuration, for the run echo.

    The output directory is omitted so two runs of the same experiment into
    different directories produce byte-identical echoes.
    """
    lines = []
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        if f.name == "out":
            continue
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = ",".join(str(t) for t in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Training sets from labeled images


def build_training_set(
    images: list[GrayImage],
    labels: list[int],
    classes,
    per_class: int | None,
    binarize_threshold: float,
    rng: np.random.Generator,
    sigma: float | None = None,
) -> TrainingSet:
    """Binarize, embed, and group labeled images into a TrainingSet.

    Selection within each class is a random draw without replacement, so
    the same pool and seed always produce the same training set. Bandwidths
    come from per-class leave-one-out calibration unless sigma overrides
    them.
    """
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} labels")
    if not images:
        raise ValueError("empty image pool")
    class_list = [int(c) for c in classes]
    if not class_list:
        raise ValueError("need at least one class")
    by_label: dict[int, list[int]] = {c: [] for c in class_list}
    for i, lab in enumerate(labels):
        if int(lab) in by_label:
            by_label[int(lab)].append(i)
    rows_per_class = []
    sigmas = []
    M, N = images[0].height, images[0].width
    for c in class_list:
        pool = by_label[c]
        want = len(pool) if per_class is None else per_class
        if len(pool) < want or not pool:
            raise ValueError(
                f"class {c} has {len(pool)} images, need {max(want, 1)}"
            )
        picked = [pool[i] for i in rng.permutation(len(pool))[:want]]
        rows = np.empty((len(picked), M * N))
        for r, idx in enumerate(picked):
            img = images[idx]
            if (img.height, img.width) != (M, N):
                raise ValueError("images in the pool have mixed dimensions")
            mask = BinaryMask(M, N, (img.data > binarize_threshold).astype(np.uint8))
            rows[r] = mask_to_levelset(mask).data
        rows_per_class.append(rows)
        if sigma is None:
            sigmas.append(calibrate_bandwidth(rows))
        else:
            sigmas.append(float(sigma))
    return TrainingSet(
        height=M,
        width=N,
        classes=tuple(rows_per_class),
        sigmas=tuple(sigmas),
        labels=tuple(class_list),
    )


# ---------------------------------------------------------------------------
# Synthetic shape datasets

_FAMILIES = ("disks", "squares")


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape-family counts plus rendering parameters for a synthetic dataset."""

    counts: dict[str, int]
    size: int = 16
    noise: float = 0.0
    test: str = "disk"

    def __post_init__(self):
        for family in self.counts:
            if family not in _FAMILIES:
                raise ValueError(
                    f"unknown shape family {family!r}, known: {_FAMILIES}"
                )
        if not any(v > 0 for v in self.counts.values()):
            raise ValueError("need at least one shape family with a positive count")
        if any(v < 0 for v in self.counts.values()):
            raise ValueError("family counts must be >= 0")
        if self.size < 8:
            raise ValueError("size must be >= 8")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.test not in ("disk", "square", "ambiguous"):
            raise ValueError(f"test shape must be disk, square, or ambiguous, got {self.test!r}")


def parse_synthetic_spec(text: str) -> SyntheticSpec:
    """Parse a spec string like 'disks=20,squares=20,size=16,noise=0.2'."""
    counts: dict[str, int] = {}
    kw: dict = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"synthetic spec entry {part!r} is not key=value")
        key, _, value = part.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "size":
            kw["size"] = int(value)
        elif key == "noise":
            kw["noise"] = float(value)
        elif key == "test":
            kw["test"] = value
        else:
            counts[key] = int(value)
    return SyntheticSpec(counts=counts, **kw)


@dataclass(frozen=True)
class SyntheticDataset:
    train: TrainingSet
    image: GrayImage
    truth: BinaryMask


def _render_disk(size: int, ci: float, cj: float, r: float) -> np.ndarray:
    ii, jj = np.mgrid[0:size, 0:size]
    return ((ii - ci) ** 2 + (jj - cj) ** 2 <= r * r).astype(np.uint8)


def _render_square(size: int, ci: float, cj: float, h: float) -> np.ndarray:
    ii, jj = np.mgrid[0:size, 0:size]
    return ((np.abs(ii - ci) <= h) & (np.abs(jj - cj) <= h)).astype(np.uint8)


def _render_superellipse(size: int, ci: float, cj: float, a: float, p: float) -> np.ndarray:
    # p = 2 is a disk, p -> infinity a square; p = 3 sits between the two
    ii, jj = np.mgrid[0:size, 0:size]
    return (
        (np.abs(ii - ci) / a) ** p + (np.abs(cj - jj) / a) ** p <= 1.0
    ).astype(np.uint8)


def make_synthetic_dataset(spec: SyntheticSpec | str, seed: int) -> SyntheticDataset:
    """Deterministic-under-seed dataset of binary shapes plus a test image.

    Both families are centered blobs of comparable area with jittered
    centers and radii. The test image renders the chosen shape (disk,
    square, or the in-between superellipse) at the exact image center with
    additive Gaussian noise, clipped back to [0, 1]; its noise-free mask is
    the ground truth.
    """
    if isinstance(spec, str):
        spec = parse_synthetic_spec(spec)
    rng = np.random.default_rng(seed)
    size = spec.size
    center = (size - 1) / 2.0
    base_r = size / 4.0
    rows_per_class = []
    labels = []
    for label, family in enumerate(_FAMILIES):
        count = spec.counts.get(family, 0)
        if count == 0:
            continue
        rows = np.empty((count, size * size))
        for k in range(count):
            ci = center + rng.uniform(-size / 10.0, size / 10.0)
            cj = center + rng.uniform(-size / 10.0, size / 10.0)
            scale = base_r * (1.0 + rng.uniform(-0.2, 0.2))
            if family == "disks":
                grid = _render_disk(size, ci, cj, scale)
            else:
                # match the disk family's area: half-side = r * sqrt(pi)/2
                grid = _render_square(size, ci, cj, scale * math.sqrt(math.pi) / 2.0)
            rows[k] = mask_to_levelset(BinaryMask(size, size, grid.ravel())).data
        rows_per_class.append(rows)
        labels.append(label)

    if spec.test == "disk":
        truth_grid = _render_disk(size, center, center, base_r)
    elif spec.test == "square":
        truth_grid = _render_square(size, center, center, base_r * math.sqrt(math.pi) / 2.0)
    else:
        truth_grid = _render_superellipse(size, center, center, base_r * 1.05, 3.0)
    truth = BinaryMask(size, size, truth_grid.ravel())
    clean = truth_grid.astype(np.float64).ravel()
    noisy = np.clip(clean + spec.noise * rng.standard_normal(clean.size), 0.0, 1.0)
    image = GrayImage(size, size, noisy)

    sigmas = tuple(calibrate_bandwidth(rows) for rows in rows_per_class)
    train = TrainingSet(
        height=size,
        width=size,
        classes=tuple(rows_per_class),
        sigmas=sigmas,
        labels=tuple(labels),
    )
    return SyntheticDataset(train=train, image=image, truth=truth)


# ---------------------------------------------------------------------------
# Experiment drivers


def _with_sigma_override(train: TrainingSet, sigma: float | None) -> TrainingSet:
    if sigma is None:
        return train
    return TrainingSet(
        height=train.height,
        width=train.width,
        classes=train.classes,
        sigmas=(float(sigma),) * train.n_classes,
        labels=train.labels,
    )


def _load_dataset(cfg: RunConfig) -> SyntheticDataset:
    """Resolve the configured dataset to (training set, test image, truth)."""
    if cfg.synthetic is not None and cfg.mnist_images is not None:
        raise ValueError("give either a synthetic spec or IDX paths, not both")
    if cfg.synthetic is not None:
        ds = make_synthetic_dataset(cfg.synthetic, cfg.seed)
        return SyntheticDataset(
            train=_with_sigma_override(ds.train, cfg.sigma),
            image=ds.image,
            truth=ds.truth,
        )
    if cfg.mnist_images is None or cfg.mnist_labels is None:
        raise ValueError("no dataset: set synthetic=... or both mnist_images/mnist_labels")
    images, labels = load_idx_pair(cfg.mnist_images, cfg.mnist_labels)
    class_list = cfg.classes if cfg.classes is not None else tuple(sorted(set(labels)))
    train = build_training_set(
        images,
        labels,
        class_list,
        cfg.per_class,
        cfg.binarize_threshold,
        np.random.default_rng(cfg.seed),
        sigma=cfg.sigma,
    )
    if cfg.test_index >= len(images):
        raise ValueError(
            f"test_index {cfg.test_index} out of range for {len(images)} images"
        )
    test = images[cfg.test_index]
    truth = BinaryMask(
        test.height,
        test.width,
        (test.data > cfg.binarize_threshold).astype(np.uint8),
    )
    return SyntheticDataset(train=train, image=test, truth=truth)


def _write_records_csv(path: Path, records: list[SampleRecord], dices=None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["sweep", "s", "accepted_class", "accepted_shape", "log_z", "log_lik"]
        if dices is not None:
            header.append("dice")
        writer.writerow(header)
        for i, r in enumerate(records):
            row = [
                r.sweep,
                r.s,
                int(r.accepted_class),
                int(r.accepted_shape),
                repr(float(r.log_z)),
                repr(float(r.log_likelihood)),
            ]
            if dices is not None:
                row.append(repr(float(dices[i])))
            writer.writerow(row)


def _write_histogram_csv(path: Path, records, train: TrainingSet) -> None:
    hist = class_histogram(records)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class_index", "label", "count"])
        for s, count in hist.items():
            label = train.labels[s] if train.labels is not None else s
            writer.writerow([s, label, count])


def _write_maps(out: Path, records, train: TrainingSet) -> None:
    cm_all = confidence_map(records)
    write_pgm(out / "map_all.pgm", cm_all.grid())
    for s in sorted(class_histogram(records)):
        label = train.labels[s] if train.labels is not None else s
        cm = confidence_map(records, class_filter=s)
        write_pgm(out / f"map_class_{label}.pgm", cm.grid())


def _write_timing_csv(path: Path, runs: list[TimingRun]) -> None:
    table = timing_report(runs)
    smallest: dict[str, tuple[int, float]] = {}
    for row in table.rows:
        if row.mode not in smallest or row.training_size < smallest[row.mode][0]:
            smallest[row.mode] = (row.training_size, row.mean_seconds)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["mode", "training_size", "mean_seconds", "std_seconds", "n_runs", "ratio_to_smallest"]
        )
        for row in table.rows:
            base_size, base_mean = smallest[row.mode]
            ratio = "" if row.training_size == base_size else repr(row.mean_seconds / base_mean)
            writer.writerow(
                [row.mode, row.training_size, repr(row.mean_seconds),
                 repr(row.std_seconds), row.n_runs, ratio]
            )


def _prepare_out(cfg: RunConfig) -> Path:
    if cfg.out is None:
        raise ValueError("no output directory: set out=... or pass --out")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(render_run_config(cfg), encoding="utf-8")
    return out


def cmd_sample(cfg: RunConfig) -> int:
    """Run one chain and write records, class histogram, and confidence maps."""
    out = _prepare_out(cfg)
    ds = _load_dataset(cfg)
    res = run_chain(ds.image, ds.train, cfg.sampler_config())
    _write_records_csv(out / "records.csv", res.records)
    _write_histogram_csv(out / "histogram.csv", res.records, ds.train)
    _write_maps(out, res.records, ds.train)
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    """Run one chain and score every sample against the ground-truth mask."""
    out = _prepare_out(cfg)
    ds = _load_dataset(cfg)
    res = run_chain(ds.image, ds.train, cfg.sampler_config())
    dices = [dice(r.mask, ds.truth) for r in res.records]
    _write_records_csv(out / "records.csv", res.records, dices=dices)
    _write_histogram_csv(out / "histogram.csv", res.records, ds.train)
    _write_maps(out, res.records, ds.train)
    arr = np.asarray(dices)
    with open(out / "evaluate.csv", "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["estimator", "mean_dice", "std_dice", "n_samples"])
        std = arr.std(ddof=1) if arr.size > 1 else 0.0
        writer.writerow([cfg.estimator, repr(float(arr.mean())), repr(float(std)), arr.size])
    return 0


def cmd_benchmark(cfg: RunConfig) -> int:
    """Time per-sample cost across training sizes in both estimator modes.

    Chains run sequentially for clean timings and share one perturbation
    covariance; bandwidth calibration is skipped (sigma is required) so the
    timed loop isolates the estimator cost the experiment is about.
    """
    if cfg.sigma is None:
        raise ValueError("benchmark requires an explicit sigma (skip calibration)")
    out = _prepare_out(cfg)
    if cfg.synthetic is not None:
        spec = parse_synthetic_spec(cfg.synthetic)
        active = [f for f, v in spec.counts.items() if v > 0]
        per_family_pool = -(-max(cfg.benchmark_sizes) // len(active))
        pool_spec = replace(spec, counts={f: per_family_pool for f in active})
        ds = make_synthetic_dataset(pool_spec, cfg.seed)
        pool_rows = ds.train.classes
        pool_labels = ds.train.labels
        image = ds.image
    else:
        base = _load_dataset(replace(cfg, per_class=None))
        pool_rows = base.train.classes
        pool_labels = base.train.labels
        image = base.image
    n_classes = len(pool_rows)
    cov = build_smooth_covariance(
        image.height,
        image.width,
        cfg.blur_sigma,
        np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0]),
    )
    runs = []
    for size in cfg.benchmark_sizes:
        want = size // n_classes
        for rows in pool_rows:
            if rows.shape[0] < want:
                raise ValueError(
                    f"training size {size} needs {want} shapes per class, "
                    f"pool has {rows.shape[0]}"
                )
        train = TrainingSet(
            height=image.height,
            width=image.width,
            classes=tuple(rows[:want] for rows in pool_rows),
            sigmas=(float(cfg.sigma),) * n_classes,
            labels=pool_labels,
        )
        for mode in _ESTIMATORS:
            for rep in range(cfg.benchmark_repeats):
                scfg = cfg.sampler_config(
                    estimator=mode,
                    burn_in=0,
                    seed=cfg.seed + rep,
                    m_hat=min(cfg.m_hat, want),
                )
                res = run_chain(image, train, scfg, cov=cov)
                runs.append(TimingRun(size, mode, res.seconds_per_sample))
    _write_timing_csv(out / "timing.csv", runs)
    return 0


# ---------------------------------------------------------------------------
# CLI entry point (thin client over the in-process or remote service)


def _apply_flag_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.mnist_images is not None:
        updates["mnist_images"] = args.mnist_images
    if args.mnist_labels is not None:
        updates["mnist_labels"] = args.mnist_labels
    if args.synthetic is not None:
        updates["synthetic"] = args.synthetic
    if args.out is not None:
        updates["out"] = args.out
    return replace(cfg, **updates) if updates else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmseg",
        description="Posterior sampling for image segmentation with kernel shape priors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("sample", "run a chain and write records plus confidence maps"),
        ("benchmark", "time per-sample cost across training sizes"),
        ("evaluate", "score samples against the ground-truth mask"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="key=value configuration file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--mnist-images", dest="mnist_images", default=None,
                       help="IDX image file")
        p.add_argument("--mnist-labels", dest="mnist_labels", default=None,
                       help="IDX label file")
        p.add_argument("--synthetic", default=None,
                       help="synthetic dataset spec, e.g. disks=20,squares=20,size=16")
        p.add_argument("--server-url", dest="server_url", default=None,
                       help="send the run to a remote service instead of in-process")
    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _run_via_service(command: str, cfg: RunConfig, server_url: str | None) -> int:
    import httpx

    from .service import run_request_payload, write_response_files

    payload = run_request_payload(cfg)
    if server_url is None:
        import asyncio

        from .service import app

        async def _post():
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://pmseg.internal"
            ) as client:
                return await client.post(f"/{command}", json=payload, timeout=None)

        resp = asyncio.run(_post())
    else:
        with httpx.Client(base_url=server_url) as client:
            resp = client.post(f"/{command}", json=payload, timeout=None)
    if resp.status_code != 200:
        print(f"error: service returned HTTP {resp.status_code}: {resp.text}", file=sys.stderr)
        return 2
    body = resp.json()
    if body["exit_code"] != 0:
        print(f"error: {body['log']}", file=sys.stderr)
        return int(body["exit_code"])
    write_response_files(body["files"], Path(cfg.out))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("pmseg.service:app", host=args.host, port=args.port)
        return 0
    try:
        cfg = _apply_flag_overrides(load_run_config(args.config), args)
        if cfg.out is None:
            raise ValueError("no output directory: set out=... or pass --out")
        return _run_via_service(args.command, cfg, args.server_url)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
