"""Pseudo-marginal Metropolis-Hastings-within-Gibbs chain over (s, x, z).

The chain state carries the class s, the level set x, and log z, the log of
an unbiased subsampled estimate of p(x|s). Each sweep runs a class move
(propose s' uniformly, draw a fresh estimate z' at the same x, accept with
min{1, z'/z} under the uniform class prior) followed by a shape move
(gradient-shifted Gaussian proposal, fresh z' at the proposed x'). The
retained state's z is never recomputed while (s, x) is unchanged: replacing
it on rejection looks harmless but silently changes the invariant
distribution, which is why the biased variant exists behind a flag only so
a regression test can demonstrate the failure.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import BinaryMask, GrayImage, LevelSet, mask_to_levelset
from .likelihood import ChanVeseLikelihood, LikelihoodParams
from .proposal import (
    DEFAULT_DENSE_CAP,
    ProposalParams,
    SmoothCovariance,
    build_smooth_covariance,
    drift_mean,
)
from .shape_prior import TrainingSet, log_prior_full, log_prior_subsampled

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ChainState:
    s: int
    x: LevelSet
    log_z: float


@dataclass(frozen=True)
class SamplerConfig:
    """Run parameters; estimator picks the subsampled or the full-KDE z."""

    n_samples: int
    burn_in: int = 200
    thin: int = 1
    m_hat: int = 10
    seed: int = 0
    class_moves_per_sweep: int = 1
    shape_moves_per_sweep: int = 1
    proposal: ProposalParams = ProposalParams()
    likelihood: LikelihoodParams = LikelihoodParams()
    blur_sigma: float = 2.0
    estimator: str = "subsampled"
    init: str = "disk"
    init_mask: BinaryMask | None = None
    dense_cap: int = DEFAULT_DENSE_CAP
    # Biased variant that redraws z for the retained state on rejection.
    # Exists solely so the exactness regression test can show it fail.
    refresh_retained_z: bool = False

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.m_hat < 1:
            raise ValueError("m_hat must be >= 1")
        if self.class_moves_per_sweep < 0 or self.shape_moves_per_sweep < 0:
            raise ValueError("moves per sweep must be >= 0")
        if self.estimator not in ("subsampled", "full"):
            raise ValueError(f"estimator must be 'subsampled' or 'full', got {self.estimator!r}")
        if self.init not in ("disk", "mask", "train"):
            raise ValueError(f"init must be 'disk', 'mask', or 'train', got {self.init!r}")
        if self.init == "mask" and self.init_mask is None:
            raise ValueError("init='mask' requires init_mask")

    def validate_for(self, train: TrainingSet) -> None:
        if self.estimator == "subsampled":
            m_min = min(train.class_size(s) for s in range(train.n_classes))
            if self.m_hat > m_min:
                raise ValueError(
                    f"m_hat={self.m_hat} exceeds the smallest class size {m_min}"
                )


@dataclass(frozen=True)
class SampleRecord:
    sweep: int
    s: int
    mask: BinaryMask
    log_z: float
    log_likelihood: float
    accepted_class: bool
    accepted_shape: bool


@dataclass
class ChainResult:
    records: list[SampleRecord]
    final_state: ChainState
    n_sweeps: int
    seconds_total: float
    seconds_per_sample: float
    acceptance_class: float
    acceptance_shape: float


@dataclass
class Checkpoint:
    version: int
    sweep: int
    s: int
    x: np.ndarray
    log_z: float
    rng_state: dict


def save_checkpoint(path: str, cp: Checkpoint) -> None:
    blob = {
        "version": cp.version,
        "sweep": cp.sweep,
        "s": cp.s,
        "x": np.asarray(cp.x, dtype=np.float64).tolist(),
        "log_z": cp.log_z,
        "rng_state": cp.rng_state,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
    return Checkpoint(
        version=blob["version"],
        sweep=blob["sweep"],
        s=blob["s"],
        x=np.asarray(blob["x"], dtype=np.float64),
        log_z=blob["log_z"],
        rng_state=blob["rng_state"],
    )


def class_acceptance_log_ratio(
    log_prior_s: float, log_prior_sp: float, log_z: float, log_z_p: float
) -> float:
    """Eq.-style acceptance log ratio for the class move, general priors.

    Grouped as (prior difference) + (estimate difference) so that a uniform
    class prior cancels to exactly 0.0 and the result equals log z' - log z
    bit for bit, not merely to rounding.
    """
    return (log_prior_sp - log_prior_s) + (log_z_p - log_z)


def _estimate_log_z(
    x_vec: np.ndarray, s: int, train: TrainingSet, config: SamplerConfig, rng: np.random.Generator
) -> float:
    if config.estimator == "full":
        return log_prior_full(x_vec, s, train)
    return log_prior_subsampled(x_vec, s, train, config.m_hat, rng).log_value


def _disk_mask(M: int, N: int, area_fraction: float = 0.25) -> BinaryMask:
    r2 = area_fraction * M * N / math.pi
    ii, jj = np.mgrid[0:M, 0:N]
    grid = (ii - (M - 1) / 2.0) ** 2 + (jj - (N - 1) / 2.0) ** 2 <= r2
    return BinaryMask(M, N, grid.astype(np.uint8).ravel())


def init_chain(
    y: GrayImage, train: TrainingSet, config: SamplerConfig, rng: np.random.Generator
) -> ChainState:
    config.validate_for(train)
    if (y.height, y.width) != (train.height, train.width):
        raise ValueError("image and training set dimensions differ")
    s = int(rng.integers(train.n_classes))
    if config.init == "disk":
        x = mask_to_levelset(_disk_mask(train.height, train.width))
    elif config.init == "mask":
        mask = config.init_mask
        if (mask.height, mask.width) != (train.height, train.width):
            raise ValueError("init mask dimensions differ from the training set")
        x = mask_to_levelset(mask)
    else:  # random training shape
        row = int(rng.integers(train.class_size(s)))
        x = LevelSet(train.height, train.width, train.classes[s][row].copy())
    log_z = _estimate_log_z(x.data, s, train, config, rng)
    return ChainState(s=s, x=x, log_z=log_z)


def _class_step(
    s: int,
    x_vec: np.ndarray,
    log_z: float,
    train: TrainingSet,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> tuple[int, float, bool]:
    n = train.n_classes
    sp = int(rng.integers(n))
    log_zp = _estimate_log_z(x_vec, sp, train, config, rng)
    log_prior = -math.log(n)  # p(s) uniform
    delta = class_acceptance_log_ratio(log_prior, log_prior, log_z, log_zp)
    if delta >= 0.0 or math.log(rng.random()) < delta:
        return sp, log_zp, True
    if config.refresh_retained_z:
        log_z = _estimate_log_z(x_vec, s, train, config, rng)
    return s, log_z, False


def _shape_step(
    s: int,
    x_vec: np.ndarray,
    log_z: float,
    log_lik: float,
    train: TrainingSet,
    config: SamplerConfig,
    cov: SmoothCovariance,
    like,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float, float, bool]:
    params = config.proposal
    j = int(rng.integers(train.class_size(s)))
    mu_fwd = drift_mean(x_vec, j, s, train, like, params.gamma)
    ps = params.perturb_scale
    if ps == 0.0:
        xp = mu_fwd
        log_q = 0.0
    else:
        xp = mu_fwd + ps * (cov.factor @ rng.standard_normal(cov.dim))
    log_zp = _estimate_log_z(xp, s, train, config, rng)
    llp = like.log_density(xp)
    if ps != 0.0:
        mu_rev = drift_mean(xp, j, s, train, like, params.gamma)
        r_fwd = cov.whiten(xp - mu_fwd)
        r_rev = cov.whiten(x_vec - mu_rev)
        inv2 = 1.0 / (ps * ps)
        log_q = 0.5 * inv2 * float(r_fwd @ r_fwd) - 0.5 * inv2 * float(r_rev @ r_rev)
    delta = (log_zp + llp) - (log_z + log_lik) + log_q
    if delta >= 0.0 or math.log(rng.random()) < delta:
        return xp, log_zp, llp, True
    if config.refresh_retained_z:
        log_z = _estimate_log_z(x_vec, s, train, config, rng)
    return x_vec, log_z, log_lik, False


def class_move(
    state: ChainState,
    y: GrayImage,
    train: TrainingSet,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> ChainState:
    """One Metropolis update of (s, z) at fixed x; y enters only through x."""
    config.validate_for(train)
    s, log_z, _ = _class_step(state.s, state.x.data, state.log_z, train, config, rng)
    return ChainState(s=s, x=state.x, log_z=log_z)


def shape_move(
    state: ChainState,
    y: GrayImage,
    train: TrainingSet,
    config: SamplerConfig,
    cov: SmoothCovariance,
    rng: np.random.Generator,
    likelihood=None,
) -> ChainState:
    """One Metropolis update of (x, z) at fixed s."""
    config.validate_for(train)
    like = likelihood if likelihood is not None else ChanVeseLikelihood(y, config.likelihood)
    log_lik = like.log_density(state.x.data)
    x_vec, log_z, _, _ = _shape_step(
        state.s, state.x.data, state.log_z, log_lik, train, config, cov, like, rng
    )
    return ChainState(s=state.s, x=LevelSet(state.x.height, state.x.width, x_vec), log_z=log_z)


def run_chain(
    y: GrayImage,
    train: TrainingSet,
    config: SamplerConfig,
    *,
    likelihood=None,
    cov: SmoothCovariance | None = None,
    sink: Callable[[SampleRecord], None] | None = None,
    resume_from: str | Checkpoint | None = None,
    checkpoint_path: str | None = None,
    checkpoint_every: int = 0,
) -> ChainResult:
    """Run the full chain: per sweep one class move then one shape move.

    Records are kept after burn_in at the configured thinning; when a sink
    is given each record is handed to it instead of being retained (a
    million-sweep chain should not hold a million records). The covariance
    is built from a seed stream split off the config seed, so resuming from
    a checkpoint rebuilds it identically without serializing the matrix.
    """
    config.validate_for(train)
    if (y.height, y.width) != (train.height, train.width):
        raise ValueError("image and training set dimensions differ")
    M, N = train.height, train.width
    root = np.random.SeedSequence(config.seed)
    cov_ss, chain_ss = root.spawn(2)
    if cov is None:
        cov = build_smooth_covariance(
            M, N, config.blur_sigma, np.random.default_rng(cov_ss), config.dense_cap
        )
    like = likelihood if likelihood is not None else ChanVeseLikelihood(y, config.likelihood)
    rng = np.random.default_rng(chain_ss)

    if resume_from is not None:
        cp = resume_from if isinstance(resume_from, Checkpoint) else load_checkpoint(resume_from)
        s, x_vec, log_z = cp.s, cp.x, cp.log_z
        rng.bit_generator.state = cp.rng_state
        start = cp.sweep
    else:
        state0 = init_chain(y, train, config, rng)
        s, x_vec, log_z = state0.s, state0.x.data, state0.log_z
        start = 0

    log_lik = like.log_density(x_vec)
    total = config.burn_in + config.n_samples * config.thin
    records: list[SampleRecord] = []
    class_acc = class_att = shape_acc = shape_att = 0
    t0 = time.perf_counter()
    for sweep in range(start, total):
        accepted_class = False
        for _ in range(config.class_moves_per_sweep):
            s, log_z, acc = _class_step(s, x_vec, log_z, train, config, rng)
            accepted_class |= acc
            class_acc += acc
            class_att += 1
        accepted_shape = False
        for _ in range(config.shape_moves_per_sweep):
            x_vec, log_z, log_lik, acc = _shape_step(
                s, x_vec, log_z, log_lik, train, config, cov, like, rng
            )
            accepted_shape |= acc
            shape_acc += acc
            shape_att += 1
        if sweep >= config.burn_in and (sweep - config.burn_in) % config.thin == 0:
            rec = SampleRecord(
                sweep=sweep,
                s=s,
                mask=BinaryMask(M, N, (x_vec > 0).astype(np.uint8)),
                log_z=log_z,
                log_likelihood=log_lik,
                accepted_class=accepted_class,
                accepted_shape=accepted_shape,
            )
            if sink is None:
                records.append(rec)
            else:
                sink(rec)
        if checkpoint_path and checkpoint_every and (sweep + 1) % checkpoint_every == 0:
            save_checkpoint(
                checkpoint_path,
                Checkpoint(
                    version=CHECKPOINT_VERSION,
                    sweep=sweep + 1,
                    s=s,
                    x=x_vec,
                    log_z=log_z,
                    rng_state=rng.bit_generator.state,
                ),
            )
    elapsed = time.perf_counter() - t0
    return ChainResult(
        records=records,
        final_state=ChainState(s=s, x=LevelSet(M, N, x_vec), log_z=log_z),
        n_sweeps=total - start,
        seconds_total=elapsed,
        seconds_per_sample=elapsed / config.n_samples,
        acceptance_class=class_acc / class_att if class_att else 0.0,
        acceptance_shape=shape_acc / shape_att if shape_att else 0.0,
    )
