import colorsys

import numpy as np
import pytest

import oracles
from aqisense.errors import InputError
from aqisense.features import (
    ColorAttenuationParams,
    FeatureConfig,
    FeatureStack,
    PatchSpec,
    chroma,
    dark_channel,
    extract_stack,
    hue_disparity,
    max_local_contrast,
    max_local_saturation,
    min_local_color_attenuation,
    refined_dark_channel,
    semi_inverse,
)
from aqisense.imaging import AtmosphericLight, GrayMap, HazeImage, WHITE_LIGHT, guided_filter
from conftest import constant_image, random_image

SPEC3 = PatchSpec(3, 3)


class TestSpecs:
    def test_patch_must_be_odd(self):
        with pytest.raises(InputError):
            PatchSpec(4, 3)

    def test_patch_ordering(self):
        with pytest.raises(InputError):
            PatchSpec(3, 5)

    def test_sigma_nonnegative(self):
        with pytest.raises(InputError):
            ColorAttenuationParams(sigma=-0.1)

    def test_config_scaling(self):
        cfg = FeatureConfig.for_size(128)
        assert cfg.patch_spec == PatchSpec(15, 5)
        assert cfg.gf_radius == 40
        small = FeatureConfig.for_size(32)
        assert small.patch_spec.patch % 2 == 1
        assert small.gf_radius == 10


class TestDarkChannel:
    def test_constant_white(self):
        out = dark_channel(constant_image(1.0), WHITE_LIGHT, SPEC3)
        assert np.abs(out.values - 1.0).max() < 1e-12

    def test_zero_channel_everywhere(self, rng):
        pixels = rng.random((6, 6, 3))
        pixels[..., 1] = 0.0
        out = dark_channel(HazeImage(pixels), WHITE_LIGHT, SPEC3)
        assert np.abs(out.values).max() == 0.0

    def test_matches_loop_oracle(self, rng):
        img = random_image(rng, 5, 5)
        light = AtmosphericLight(0.9, 0.8, 1.0)
        got = dark_channel(img, light, SPEC3)
        want = oracles.dark_channel(img.pixels, light.as_array(), 3)
        assert np.abs(got.values - want).max() < 1e-9


class TestRefinedDarkChannel:
    def test_constant_image_unchanged(self):
        img = constant_image(0.6)
        base = dark_channel(img, WHITE_LIGHT, SPEC3)
        refined = refined_dark_channel(img, WHITE_LIGHT, SPEC3, gf_radius=2)
        assert np.abs(refined.values - base.values).max() < 1e-9

    def test_composition_oracle(self, rng):
        img = random_image(rng, 9, 9)
        got = refined_dark_channel(img, WHITE_LIGHT, SPEC3, gf_radius=2, gf_epsilon=1e-3)
        dark = oracles.dark_channel(img.pixels, np.ones(3), 3)
        guide = 0.299 * img.pixels[..., 0] + 0.587 * img.pixels[..., 1] + 0.114 * img.pixels[..., 2]
        want = np.clip(1.0 - oracles.guided_filter(guide, 1.0 - dark, 2, 1e-3), 0.0, 1.0)
        assert np.abs(got.values - want).max() < 1e-6

    def test_tracks_synthetic_haze_profile(self, rng):
        # hazed = clean * t + (1 - t) with a spatially varying transmission:
        # the refined dark channel should correlate strongly with 1 - t
        spec = PatchSpec(5, 3)
        for trial in range(20):
            clean = rng.random((24, 24, 3)) * 0.7
            gx = np.linspace(0.0, 1.0, 24)
            profile = 0.25 + 0.65 * (0.5 + 0.5 * np.sin(2 * np.pi * (gx + trial / 7.0)))
            t = np.tile(profile, (24, 1))
            hazed = HazeImage(np.clip(clean * t[..., None] + (1 - t[..., None]), 0, 1))
            refined = refined_dark_channel(hazed, WHITE_LIGHT, spec, gf_radius=4)
            corr = oracles.pearson(refined.values.ravel(), (1 - t).ravel())
            assert corr >= 0.8


class TestMaxLocalContrast:
    def test_constant_zero(self):
        out = max_local_contrast(constant_image(0.42), SPEC3)
        assert np.abs(out.values).max() < 1e-12

    def test_single_bright_pixel_oracle(self):
        pixels = np.zeros((5, 5, 3))
        pixels[2, 2] = 1.0
        got = max_local_contrast(HazeImage(pixels), SPEC3)
        want = oracles.max_local_contrast(pixels, 3, 3)
        assert np.abs(got.values - want).max() < 1e-9

    def test_inversion_symmetry(self, rng):
        img = random_image(rng, 6, 6)
        inverted = HazeImage(1.0 - img.pixels)
        a = max_local_contrast(img, SPEC3)
        b = max_local_contrast(inverted, SPEC3)
        assert np.abs(a.values - b.values).max() < 1e-12

    def test_matches_loop_oracle(self, rng):
        img = random_image(rng, 7, 6)
        spec = PatchSpec(5, 3)
        got = max_local_contrast(img, spec)
        want = oracles.max_local_contrast(img.pixels, 5, 3)
        assert np.abs(got.values - want).max() < 1e-9


class TestMaxLocalSaturation:
    def test_gray_zero(self):
        out = max_local_saturation(constant_image(0.5), SPEC3)
        assert np.abs(out.values).max() == 0.0

    def test_pure_red_everywhere(self, rng):
        pixels = rng.random((6, 6, 3)) * 0.5
        pixels[::2, ::2] = [1.0, 0.0, 0.0]  # a saturated primary in every 3x3 patch
        out = max_local_saturation(HazeImage(pixels), SPEC3)
        assert np.abs(out.values - 1.0).max() < 1e-12

    def test_matches_loop_oracle(self, rng):
        img = random_image(rng, 5, 5)
        got = max_local_saturation(img, SPEC3)
        want = oracles.max_local_saturation(img.pixels, 3)
        assert np.abs(got.values - want).max() < 1e-9


class TestMinLocalColorAttenuation:
    def test_constant(self):
        params = ColorAttenuationParams()
        img = constant_image(0.6)
        out = min_local_color_attenuation(img, params, SPEC3)
        # achromatic: v = 0.6, s = 0
        assert np.abs(out.values - (params.theta0 + params.theta1 * 0.6)).max() < 1e-12

    def test_brightness_isolation(self, rng):
        img = random_image(rng, 5, 5)
        params = ColorAttenuationParams(0.0, 1.0, 0.0)
        got = min_local_color_attenuation(img, params, SPEC3)
        from scipy.ndimage import minimum_filter

        want = minimum_filter(img.pixels.max(axis=2), size=3, mode="nearest")
        assert np.abs(got.values - want).max() < 1e-12

    def test_matches_loop_oracle(self, rng):
        img = random_image(rng, 5, 5)
        params = ColorAttenuationParams()
        got = min_local_color_attenuation(img, params, SPEC3)
        want = oracles.min_local_color_attenuation(
            img.pixels, params.theta0, params.theta1, params.theta2, 3
        )
        assert np.abs(got.values - want).max() < 1e-9


class TestHueDisparity:
    def test_semi_inverse_values(self):
        img = HazeImage(np.array([[[0.3, 0.7, 0.5]]]))
        si = semi_inverse(img)
        assert si.pixels[0, 0] == pytest.approx([0.7, 0.7, 0.5])

    def test_bright_pixels_fixed_point(self, rng):
        pixels = 0.5 + rng.random((4, 4, 3)) * 0.5
        out = hue_disparity(HazeImage(pixels))
        assert np.abs(out.values).max() < 1e-12

    def test_hand_converted_pixel(self):
        r, g, b = 0.2, 0.4, 0.8
        img = HazeImage(np.array([[[r, g, b]]]))
        out = hue_disparity(img)
        h1 = colorsys.rgb_to_hsv(r, g, b)[0]
        h2 = colorsys.rgb_to_hsv(0.8, 0.6, 0.8)[0]
        want = min(abs(h2 - h1), 1 - abs(h2 - h1))
        assert out.values[0, 0] == pytest.approx(want, abs=1e-12)

    def test_matches_loop_oracle(self, rng):
        img = random_image(rng, 6, 5)
        got = hue_disparity(img)
        want = oracles.hue_disparity(img.pixels)
        assert np.abs(got.values - want).max() < 1e-9


class TestChroma:
    def test_gray_is_low(self, rng):
        img = constant_image(0.7, 4, 4)
        assert chroma(img).values.max() < 0.5

    def test_saturation_monotone(self):
        saturated = chroma(HazeImage(np.array([[[1.0, 0.0, 0.0]]]))).values[0, 0]
        washed = chroma(HazeImage(np.array([[[0.6, 0.4, 0.4]]]))).values[0, 0]
        assert saturated > washed

    def test_matches_reference(self):
        got = chroma(HazeImage(np.array([[[1.0, 0.0, 0.0]]]))).values[0, 0]
        want = oracles.chroma(np.array([[[1.0, 0.0, 0.0]]]))[0, 0]
        assert got == pytest.approx(want, abs=1e-9)

    def test_matches_loop_oracle(self, rng):
        img = random_image(rng, 5, 5)
        got = chroma(img)
        want = oracles.chroma(img.pixels)
        assert np.abs(got.values - want).max() < 1e-9


class TestExtractStack:
    def test_constant_gray_layers(self):
        stack = extract_stack(constant_image(0.5, 32, 32), FeatureConfig.for_size(32))
        # contrast, saturation and hue disparity are identically zero
        assert np.abs(stack.layers[..., 1]).max() == 0.0
        assert np.abs(stack.layers[..., 2]).max() == 0.0
        assert np.abs(stack.layers[..., 4]).max() == 0.0

    def test_shape_contract(self, rng):
        for h, w in ((40, 60), (128, 128), (300, 200)):
            stack = extract_stack(random_image(rng, h, w))
            assert stack.layers.shape == (128, 128, 6)
            assert stack.layers.min() >= 0.0 and stack.layers.max() <= 1.0

    def test_invalid_stack_rejected(self):
        with pytest.raises(InputError):
            FeatureStack(np.zeros((4, 4, 5)))

    def test_haze_monotonicity(self, rng):
        # raw feature response to uniform synthetic haze: the refined dark
        # channel mean rises and the contrast mean falls as t drops
        clean = rng.random((32, 32, 3)) * 0.8
        spec = PatchSpec(7, 3)
        dark_means, contrast_means = [], []
        for t in (0.9, 0.6, 0.3):
            hazed = HazeImage(np.clip(clean * t + (1 - t), 0, 1))
            dark_means.append(
                refined_dark_channel(hazed, WHITE_LIGHT, spec, gf_radius=8).values.mean()
            )
            contrast_means.append(max_local_contrast(hazed, spec).values.mean())
        assert dark_means[0] < dark_means[1] < dark_means[2]
        assert contrast_means[0] > contrast_means[1] > contrast_means[2]

    def test_heavy_haze_raises_dark_channel(self, rng):
        clean = HazeImage(rng.random((40, 40, 3)) * 0.8)
        cfg = FeatureConfig.for_size(32)
        hazed = HazeImage(np.clip(clean.pixels * 0.3 + 0.7, 0, 1))
        spec = cfg.patch_spec
        base_mean = refined_dark_channel(
            _resized(clean, 32), WHITE_LIGHT, spec, cfg.gf_radius
        ).values.mean()
        hazy_mean = refined_dark_channel(
            _resized(hazed, 32), WHITE_LIGHT, spec, cfg.gf_radius
        ).values.mean()
        assert hazy_mean > base_mean


def _resized(img, size):
    from aqisense.imaging import resize_bilinear

    return resize_bilinear(img, size, size)
