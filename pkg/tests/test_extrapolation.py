"""
Tests for conditional extrapolation from a partial channel.

These tests verify:
1. MASKS: preset parsing and exact observed counts
2. CONDITIONS: masked planes, the null condition and training draws
3. SAMPLING: observed entries are kept and guidance weight 0 skips the null branch
"""

import numpy as np
import pytest
import torch

from channel_diffusion.core.errors import ShapeMismatchError
from channel_diffusion.schemas.base import CheckpointKind
from channel_diffusion.schemas.diffusion import SamplerConfig, ScoreNetConfig, TrainConfig
from channel_diffusion.services.baselines import nmse, nmse_linear
from channel_diffusion.services.channel_data import generate_dataset
from channel_diffusion.services.diffusion_core import Checkpoint, build_score_model, make_sde
from channel_diffusion.services.extrapolation import (
    CONDITION_CHANNELS,
    ConditionError,
    MaskSpecError,
    extrapolate,
    make_condition,
    make_mask,
    null_condition,
    parse_mask_spec,
    sample_training_conditions,
    train_conditional,
)

from .conftest import complex_gaussian


# =============================================================================
# FIXTURES
# =============================================================================


@pytest.fixture
def channel() -> np.ndarray:
    return complex_gaussian(np.random.default_rng(0), (4, 8))


@pytest.fixture
def conditional_checkpoint(ve_sde, tiny_net) -> Checkpoint:
    """Untrained conditional network on 4x8 channels."""
    net_config = tiny_net.model_copy(update={"cond_channels": CONDITION_CHANNELS})
    model = build_score_model(net_config, ve_sde, seed=1).eval()
    return Checkpoint(
        model=model,
        kind=CheckpointKind.SCORE,
        data_shape=(2, 4, 8),
        sde_config=ve_sde,
        extra={"conditional": True},
    )


@pytest.fixture
def fast_sampler() -> SamplerConfig:
    return SamplerConfig(n_predictor_steps=8, n_corrector_steps_per=1, n_samples=2)


# =============================================================================
# MASKS
# =============================================================================


class TestMaskSpecs:
    """random:<f>, block-rows:<k>, block-cols:<k>."""

    def test_parse_valid_specs(self):
        """Valid presets parse to (kind, value)."""
        assert parse_mask_spec("random:0.5") == ("random", 0.5)
        assert parse_mask_spec("block-rows:4") == ("block-rows", 4.0)
        assert parse_mask_spec(" block-cols:2 ") == ("block-cols", 2.0)

    @pytest.mark.parametrize(
        "spec", ["random:0", "random:1.5", "block-rows:0", "block-cols:2.5", "checker:2", ""]
    )
    def test_invalid_specs_rejected(self, spec):
        """Malformed or out-of-range presets raise MaskSpecError."""
        with pytest.raises(MaskSpecError):
            parse_mask_spec(spec)

    def test_random_mask_has_exact_count(self):
        """random:f observes round(f * Nr * Nt) entries."""
        mask = make_mask("random:0.25", (4, 8), np.random.default_rng(1))
        assert mask.sum() == 8

    def test_block_masks(self):
        """block-rows / block-cols observe the leading rows / columns."""
        rows = make_mask("block-rows:2", (4, 8))
        cols = make_mask("block-cols:3", (4, 8))
        assert rows[:2].all() and not rows[2:].any()
        assert cols[:, :3].all() and not cols[:, 3:].any()

    def test_block_larger_than_array_rejected(self):
        """Blocks cannot exceed the array."""
        with pytest.raises(MaskSpecError):
            make_mask("block-rows:5", (4, 8))

    def test_random_mask_needs_rng(self):
        """Random masks are only drawn from an explicit generator."""
        with pytest.raises(MaskSpecError):
            make_mask("random:0.5", (4, 8))


# =============================================================================
# CONDITIONS
# =============================================================================


class TestConditions:
    """Condition planes: masked Re, masked Im, mask."""

    def test_masked_entries_are_zero(self, channel):
        """Unobserved positions carry zeros; observed ones carry H."""
        mask = make_mask("block-cols:3", (4, 8))
        cond = make_condition(channel, mask)
        assert cond.planes.shape == (3, 4, 8)
        assert np.all(cond.planes[:2, :, 3:] == 0)
        np.testing.assert_allclose(cond.observed[mask], channel[mask], rtol=1e-6)
        assert cond.observed_fraction == pytest.approx(3 / 8)

    def test_empty_mask_rejected(self, channel):
        """A mask that observes nothing is not a condition."""
        with pytest.raises(ConditionError):
            make_condition(channel, np.zeros((4, 8), dtype=bool))

    def test_shape_mismatch_rejected(self, channel):
        """H and mask must share a shape."""
        with pytest.raises(ShapeMismatchError):
            make_condition(channel, np.ones((4, 4), dtype=bool))

    def test_null_condition_is_all_zero(self):
        """The null condition has zero planes and an all-false mask."""
        cond = null_condition((4, 8))
        assert cond.null
        assert np.all(cond.planes == 0)
        assert make_condition(None, np.ones((4, 8)), null=True).null

    def test_training_conditions_respect_masks(self):
        """Observed planes equal batch * mask; null rows carry nothing."""
        generator = torch.Generator().manual_seed(0)
        batch = torch.randn((64, 2, 4, 8), generator=generator)
        cond, null = sample_training_conditions(batch, p_drop=0.2, generator=generator)
        mask = cond[:, 2:3]
        torch.testing.assert_close(cond[:, :2], batch * mask)
        assert torch.all(cond[null] == 0)

    def test_null_rate_matches_p_drop(self):
        """The null fraction is p_drop within three standard deviations."""
        generator = torch.Generator().manual_seed(1)
        batch = torch.zeros((10_000, 2, 2, 2))
        _, null = sample_training_conditions(batch, p_drop=0.1, generator=generator)
        rate = float(null.float().mean())
        assert abs(rate - 0.1) < 3 * np.sqrt(0.1 * 0.9 / 10_000)

    def test_full_dropout_gives_only_null(self):
        """p_drop = 1 trains the unconditional score only."""
        _, null = sample_training_conditions(torch.zeros((32, 2, 2, 2)), p_drop=1.0)
        assert null.all()


# =============================================================================
# TRAINING AND SAMPLING
# =============================================================================


class TestConditionalTraining:
    """Shared-weight conditional / null training."""

    def test_requires_condition_channels(self, ve_sde, tiny_net, short_train):
        """An unconditional network cannot be trained conditionally."""
        model = build_score_model(tiny_net, ve_sde)
        with pytest.raises(ShapeMismatchError):
            train_conditional(model, torch.zeros((8, 2, 4, 8)), make_sde(ve_sde), short_train)

    def test_invalid_p_drop_rejected(self, ve_sde, tiny_net, short_train):
        """p_drop outside [0, 1] is rejected."""
        net = tiny_net.model_copy(update={"cond_channels": CONDITION_CHANNELS})
        with pytest.raises(ConditionError):
            train_conditional(
                build_score_model(net, ve_sde), torch.zeros((8, 2, 4, 8)),
                make_sde(ve_sde), short_train, p_drop=1.5,
            )

    def test_short_run_records_conditioning(self, ve_sde, tiny_net):
        """The checkpoint records that it was trained with conditions."""
        net = tiny_net.model_copy(update={"cond_channels": CONDITION_CHANNELS})
        data = torch.randn((16, 2, 4, 8), generator=torch.Generator().manual_seed(0))
        ckpt = train_conditional(
            build_score_model(net, ve_sde), data, make_sde(ve_sde),
            TrainConfig(steps=2, batch_size=4), p_drop=0.1,
        )
        assert ckpt.extra == {"conditional": True, "p_drop": 0.1}
        assert len(ckpt.history) == 2


class TestExtrapolate:
    """Conditional sampling of the full array."""

    def test_null_evaluation_equals_unconditional(self, conditional_checkpoint):
        """s(x, t, null) is the same computation as s(x, t)."""
        model = conditional_checkpoint.model
        x = torch.randn((3, 2, 4, 8))
        t = torch.full((3,), 0.4)
        with torch.no_grad():
            torch.testing.assert_close(
                model(x, t), model(x, t, torch.zeros((3, 3, 4, 8))), rtol=0, atol=0
            )

    def test_observed_entries_are_kept(self, conditional_checkpoint, channel, fast_sampler):
        """Every sample and the mean agree with H on observed entries."""
        mask = make_mask("random:0.5", (4, 8), np.random.default_rng(3))
        cond = make_condition(channel, mask)
        estimate = extrapolate(
            conditional_checkpoint, cond, fast_sampler, torch.Generator().manual_seed(0)
        )
        assert estimate.mean.shape == (4, 8)
        for sample in estimate.samples:
            np.testing.assert_allclose(sample[mask], channel[mask], rtol=1e-6)

    def test_full_mask_reproduces_channel(self, conditional_checkpoint, channel, fast_sampler):
        """Observing everything returns H up to float32 precision."""
        cond = make_condition(channel, np.ones((4, 8), dtype=bool))
        estimate = extrapolate(
            conditional_checkpoint, cond, fast_sampler, torch.Generator().manual_seed(0)
        )
        assert nmse(estimate.mean, channel) == -100.0

    def test_guidance_weight_changes_samples(self, conditional_checkpoint, channel, fast_sampler):
        """w = 0 is deterministic per seed and differs from w = 2."""
        cond = make_condition(channel, make_mask("block-rows:2", (4, 8)))
        runs = [
            extrapolate(
                conditional_checkpoint, cond,
                fast_sampler.model_copy(update={"cfg_weight": w}),
                torch.Generator().manual_seed(7),
            ).mean
            for w in (0.0, 0.0, 2.0)
        ]
        np.testing.assert_array_equal(runs[0], runs[1])
        assert not np.allclose(runs[0], runs[2])

    def test_null_condition_rejected(self, conditional_checkpoint, fast_sampler):
        """Extrapolation needs something observed."""
        with pytest.raises(ConditionError):
            extrapolate(conditional_checkpoint, null_condition((4, 8)), fast_sampler)

    def test_shape_mismatch_rejected(self, conditional_checkpoint, fast_sampler):
        """The condition must match the checkpoint's array."""
        cond = make_condition(np.ones((4, 4), dtype=complex), np.ones((4, 4), dtype=bool))
        with pytest.raises(ShapeMismatchError):
            extrapolate(conditional_checkpoint, cond, fast_sampler)


@pytest.mark.slow
class TestExtrapolationQuality:
    """A trained conditional model improves as more of the array is observed."""

    def test_error_decreases_with_observed_fraction(self, small_scene, ve_sde):
        """Mean NMSE over 200 channels strictly drops for fractions 0.25, 0.5, 0.75."""
        train_set = generate_dataset(small_scene, 2000, seed=0)
        test_set = generate_dataset(small_scene, 200, seed=1)
        net = ScoreNetConfig(features=32, groups=8, n_blocks=3, cond_channels=CONDITION_CHANNELS)
        ckpt = train_conditional(
            build_score_model(net, ve_sde), train_set, make_sde(ve_sde),
            TrainConfig(steps=3000, batch_size=64, learning_rate=5e-4), p_drop=0.1,
        )
        cfg = SamplerConfig(n_predictor_steps=100, n_corrector_steps_per=1, n_samples=4)
        means = []
        for fraction in (0.25, 0.5, 0.75):
            errors = []
            for index, H in enumerate(test_set.samples.astype(np.complex128)):
                mask = make_mask(f"random:{fraction}", H.shape, np.random.default_rng(index))
                estimate = extrapolate(
                    ckpt, make_condition(H, mask), cfg, torch.Generator().manual_seed(index)
                )
                errors.append(nmse_linear(estimate.mean, H))
            means.append(np.mean(errors))
        assert means[0] > means[1] > means[2]
