from __future__ import annotations

import math

import numpy as np
import pytest

from pmseg.geometry import BinaryMask, GrayImage, LevelSet, levelset_to_mask, mask_to_levelset
from pmseg.likelihood import IsotropicGaussianLikelihood, LikelihoodParams
from pmseg.proposal import ProposalParams, SmoothCovariance
from pmseg.sampler import (
    ChainState,
    SampleRecord,
    SamplerConfig,
    class_acceptance_log_ratio,
    class_move,
    init_chain,
    load_checkpoint,
    run_chain,
    save_checkpoint,
    shape_move,
)
from pmseg.shape_prior import TrainingSet, log_prior_full


def toy_train_1d(centers_by_class, sigmas):
    return TrainingSet(
        height=1,
        width=1,
        classes=tuple(np.asarray(c, dtype=np.float64).reshape(-1, 1) for c in centers_by_class),
        sigmas=tuple(sigmas),
    )


def flat_image(M, N, value=0.5):
    return GrayImage(M, N, np.full(M * N, value))


def disk_mask(M, N, frac=0.25):
    r2 = frac * M * N / math.pi
    ii, jj = np.mgrid[0:M, 0:N]
    return ((ii - (M - 1) / 2) ** 2 + (jj - (N - 1) / 2) ** 2 <= r2).astype(np.uint8).ravel()


class TestInitChain:
    def test_seeded_determinism(self):
        train = toy_train_1d([[0.0, 1.0], [2.0, 3.0]], [1.0, 1.0])
        cfg = SamplerConfig(n_samples=1, m_hat=1, seed=5)
        y = flat_image(1, 1)
        a = init_chain(y, train, cfg, np.random.default_rng(5))
        b = init_chain(y, train, cfg, np.random.default_rng(5))
        assert a.s == b.s and a.log_z == b.log_z
        np.testing.assert_array_equal(a.x.data, b.x.data)

    def test_disk_init_area_28x28(self):
        rng = np.random.default_rng(0)
        train = TrainingSet(
            height=28, width=28, classes=(rng.normal(size=(2, 784)),), sigmas=(1.0,)
        )
        cfg = SamplerConfig(n_samples=1, m_hat=1, seed=0)
        state = init_chain(flat_image(28, 28), train, cfg, rng)
        n_ones = int(levelset_to_mask(state.x).data.sum())
        assert 0.2 * 784 <= n_ones <= 0.3 * 784

    def test_mask_init_beats_disk_init_on_two_region_image(self):
        M = N = 12
        gt = np.zeros(M * N, dtype=np.uint8)
        gt.reshape(M, N)[3:9, 2:7] = 1
        y = GrayImage(M, N, gt.astype(np.float64))
        rng = np.random.default_rng(2)
        train = TrainingSet(height=M, width=N, classes=(rng.normal(size=(2, M * N)),), sigmas=(1.0,))
        from pmseg.likelihood import log_likelihood

        cfg_mask = SamplerConfig(n_samples=1, m_hat=1, init="mask", init_mask=BinaryMask(M, N, gt))
        cfg_disk = SamplerConfig(n_samples=1, m_hat=1, init="disk")
        s_mask = init_chain(y, train, cfg_mask, np.random.default_rng(1))
        s_disk = init_chain(y, train, cfg_disk, np.random.default_rng(1))
        lm = log_likelihood(y, s_mask.x, LikelihoodParams())
        ld = log_likelihood(y, s_disk.x, LikelihoodParams())
        assert lm >= ld

    def test_train_init_uses_training_shape(self):
        train = toy_train_1d([[4.0]], [1.0])
        cfg = SamplerConfig(n_samples=1, m_hat=1, init="train")
        state = init_chain(flat_image(1, 1), train, cfg, np.random.default_rng(3))
        assert state.x.data[0] == 4.0


class TestMoves:
    def test_class_move_unit_acceptance_when_z_unchanged(self):
        # single class, full estimator: z' always equals z, so accept always
        train = toy_train_1d([[0.0, 1.0]], [1.0])
        cfg = SamplerConfig(n_samples=1, m_hat=2, estimator="full")
        y = flat_image(1, 1)
        state = init_chain(y, train, cfg, np.random.default_rng(4))
        out = class_move(state, y, train, cfg, np.random.default_rng(0))
        assert out.s == 0
        assert out.log_z == state.log_z

    def test_uniform_class_cancellation_is_exact(self):
        n = 5
        logp = -math.log(n)
        for logz, logzp in [(-3.2, -1.1), (0.0, 0.0), (-50.0, 2.0)]:
            full = class_acceptance_log_ratio(logp, logp, logz, logzp)
            assert full == logzp - logz

    def test_shape_move_degenerate_proposal_keeps_x(self):
        train = toy_train_1d([[0.0], [5.0]], [1.0, 1.0])
        cfg = SamplerConfig(
            n_samples=1,
            m_hat=1,
            proposal=ProposalParams(gamma=0.0, perturb_scale=0.0),
        )
        y = flat_image(1, 1)
        cov = SmoothCovariance(dim=1, factor=np.eye(1), blur_sigma=0.0, jitter=0.0)
        state = init_chain(y, train, cfg, np.random.default_rng(8))
        for seed in range(5):
            out = shape_move(state, y, train, cfg, cov, np.random.default_rng(seed))
            np.testing.assert_array_equal(out.x.data, state.x.data)

    def test_huge_log_ratios_stay_finite(self):
        # tiny bandwidth makes |log z' - log z| enormous; the move must not
        # overflow because the ratio never leaves the log domain
        train = toy_train_1d([[0.0, 100.0]], [1e-3])
        cfg = SamplerConfig(n_samples=1, m_hat=1)
        y = flat_image(1, 1)
        state = ChainState(s=0, x=LevelSet(1, 1, np.array([50.0])), log_z=-1e7)
        out = class_move(state, y, train, cfg, np.random.default_rng(0))
        assert np.isfinite(out.log_z)


class TestRunChainBookkeeping:
    def _config(self, **kw):
        base = dict(
            n_samples=50,
            burn_in=0,
            thin=1,
            m_hat=2,
            seed=123,
            proposal=ProposalParams(gamma=0.3, perturb_scale=0.8),
            blur_sigma=0.0,
        )
        base.update(kw)
        return SamplerConfig(**base)

    def _toy(self):
        train = toy_train_1d([[-1.0, 0.5, 2.0], [-2.0, 1.0, 3.0]], [0.7, 0.7])
        y = flat_image(1, 1)
        like = IsotropicGaussianLikelihood(np.array([0.4]), precision=1.0)
        return train, y, like

    def test_exact_record_count(self):
        train, y, like = self._toy()
        res = run_chain(y, train, self._config(n_samples=1000), likelihood=like)
        assert len(res.records) == 1000
        assert all(isinstance(r, SampleRecord) for r in res.records)

    def test_burn_in_and_thinning(self):
        train, y, like = self._toy()
        res = run_chain(y, train, self._config(n_samples=10, burn_in=7, thin=3), likelihood=like)
        assert [r.sweep for r in res.records] == [7 + 3 * k for k in range(10)]

    def test_same_seed_bit_identical(self):
        train, y, like = self._toy()
        r1 = run_chain(y, train, self._config(), likelihood=like)
        r2 = run_chain(y, train, self._config(), likelihood=like)
        assert len(r1.records) == len(r2.records)
        for a, b in zip(r1.records, r2.records):
            assert (a.sweep, a.s, a.log_z, a.log_likelihood) == (b.sweep, b.s, b.log_z, b.log_likelihood)
            assert (a.accepted_class, a.accepted_shape) == (b.accepted_class, b.accepted_shape)
            np.testing.assert_array_equal(a.mask, b.mask)

    def test_sink_receives_records_and_none_retained(self):
        train, y, like = self._toy()
        got = []
        res = run_chain(y, train, self._config(), likelihood=like, sink=got.append)
        assert res.records == []
        assert len(got) == 50

    def test_z_retained_between_acceptances(self):
        train, y, like = self._toy()
        res = run_chain(y, train, self._config(n_samples=300), likelihood=like)
        violations = 0
        for prev, cur in zip(res.records, res.records[1:]):
            if not cur.accepted_class and not cur.accepted_shape:
                if cur.log_z != prev.log_z:
                    violations += 1
        assert violations == 0

    def test_broken_variant_refreshes_z(self):
        train, y, like = self._toy()
        cfg = self._config(n_samples=300, refresh_retained_z=True)
        res = run_chain(y, train, cfg, likelihood=like)
        changed = sum(
            1
            for prev, cur in zip(res.records, res.records[1:])
            if not cur.accepted_class and not cur.accepted_shape and cur.log_z != prev.log_z
        )
        assert changed > 0

    def test_acceptance_rates_reported(self):
        train, y, like = self._toy()
        res = run_chain(y, train, self._config(), likelihood=like)
        assert 0.0 <= res.acceptance_class <= 1.0
        assert 0.0 <= res.acceptance_shape <= 1.0
        assert res.seconds_per_sample > 0

    def test_full_estimator_carries_exact_prior(self):
        train, y, like = self._toy()
        res = run_chain(y, train, self._config(estimator="full"), likelihood=like)
        state = res.final_state
        assert state.log_z == log_prior_full(state.x.data, state.s, train)


class TestCheckpointResume:
    def test_bit_exact_resume(self, tmp_path):
        train = toy_train_1d([[-1.0, 0.5, 2.0], [-2.0, 1.0, 3.0]], [0.7, 0.7])
        y = flat_image(1, 1)
        like = IsotropicGaussianLikelihood(np.array([0.4]), precision=1.0)
        cfg = SamplerConfig(
            n_samples=60, burn_in=0, thin=1, m_hat=2, seed=77,
            proposal=ProposalParams(gamma=0.3, perturb_scale=0.8), blur_sigma=0.0,
        )
        ckpt = tmp_path / "chain.ckpt"
        full = run_chain(y, train, cfg, likelihood=like, checkpoint_path=str(ckpt), checkpoint_every=30)
        assert ckpt.exists()
        cp = load_checkpoint(str(ckpt))
        assert cp.sweep == 60  # final checkpoint written at the end of the run

        # rewrite a mid-run checkpoint by rerunning half and resuming
        half_cfg = SamplerConfig(
            n_samples=30, burn_in=0, thin=1, m_hat=2, seed=77,
            proposal=ProposalParams(gamma=0.3, perturb_scale=0.8), blur_sigma=0.0,
        )
        half_ckpt = tmp_path / "half.ckpt"
        run_chain(y, train, half_cfg, likelihood=like, checkpoint_path=str(half_ckpt), checkpoint_every=30)
        resumed = run_chain(y, train, cfg, likelihood=like, resume_from=str(half_ckpt))
        suffix = full.records[30:]
        assert len(resumed.records) == 30
        for a, b in zip(suffix, resumed.records):
            assert (a.sweep, a.s, a.log_z, a.log_likelihood) == (b.sweep, b.s, b.log_z, b.log_likelihood)
            np.testing.assert_array_equal(a.mask, b.mask)

    def test_checkpoint_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        from pmseg.sampler import Checkpoint

        cp = Checkpoint(
            version=1,
            sweep=12,
            s=1,
            x=rng.normal(size=4),
            log_z=-3.25,
            rng_state=np.random.default_rng(9).bit_generator.state,
        )
        path = tmp_path / "c.ckpt"
        save_checkpoint(str(path), cp)
        back = load_checkpoint(str(path))
        assert back.version == 1 and back.sweep == 12 and back.s == 1
        assert back.log_z == -3.25
        np.testing.assert_array_equal(back.x, cp.x)
        assert back.rng_state == cp.rng_state


class TestClassFrequencies:
    def test_two_class_frequencies_match_exact_conditional(self):
        # x is pinned (no shape moves); with m_hat = 1 the class move must
        # still target p(s|x) thanks to the pseudo-marginal construction
        train = toy_train_1d([[-2.0, -1.0, 1.5, 2.5], [-3.0, 0.0, 0.5, 3.0]], [0.6, 0.8])
        y = flat_image(1, 1)
        like = IsotropicGaussianLikelihood(np.array([0.3]), precision=1.0)
        cfg = SamplerConfig(
            n_samples=100_000, burn_in=0, thin=1, m_hat=1, seed=2024,
            shape_moves_per_sweep=0, init="train", blur_sigma=0.0,
        )
        res = run_chain(y, train, cfg, likelihood=like)
        x0 = res.final_state.x.data
        lp = np.array([log_prior_full(x0, s, train) for s in range(2)])
        p1 = 1.0 / (1.0 + math.exp(lp[0] - lp[1]))
        ind = np.array([r.s for r in res.records], dtype=np.float64)
        freq = ind.mean()
        nb = 100
        batches = ind[: nb * (len(ind) // nb)].reshape(nb, -1).mean(axis=1)
        se = batches.std(ddof=1) / math.sqrt(nb)
        assert abs(freq - p1) <= 3 * se + 1e-12


class TestConfigValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(ValueError):
            SamplerConfig(n_samples=0)
        with pytest.raises(ValueError):
            SamplerConfig(n_samples=1, thin=0)
        with pytest.raises(ValueError):
            SamplerConfig(n_samples=1, estimator="bogus")
        with pytest.raises(ValueError):
            SamplerConfig(n_samples=1, init="bogus")

    def test_m_hat_checked_against_training_set(self):
        train = toy_train_1d([[0.0, 1.0]], [1.0])
        cfg = SamplerConfig(n_samples=1, m_hat=5)
        with pytest.raises(ValueError):
            run_chain(flat_image(1, 1), train, cfg)
