import numpy as np
import pytest

from tmvos.augmentation import (
    AugmentationParams,
    generate_initial_set,
    inpaint_background,
    random_affine_blur,
)


def square_scene(h=48, w=64, size=16, at=(16, 24), seed=0):
    rng = np.random.default_rng(seed)
    image = rng.integers(0, 100, size=(h, w, 3)).astype(np.uint8)
    mask = np.zeros((h, w), bool)
    y0, x0 = at
    image[y0:y0 + size, x0:x0 + size] = (230, 30, 40)
    mask[y0:y0 + size, x0:x0 + size] = True
    return image, mask


def identity_params(**overrides):
    base = dict(n_augmented=1, max_rotation=0.0, scale_range=(1.0, 1.0),
                max_translation=0.0, blur_sigma_range=(0.0, 0.0), rng_seed=0)
    base.update(overrides)
    return AugmentationParams(**base)


def mask_centroid(mask):
    ys, xs = np.nonzero(mask)
    return ys.mean(), xs.mean()


class TestInpaint:
    def test_empty_mask_unchanged(self):
        image, _ = square_scene()
        out = inpaint_background(image, np.zeros(image.shape[:2], bool))
        np.testing.assert_array_equal(out, image)

    def test_constant_image_fixed_point(self):
        image = np.full((20, 20, 3), 77, np.uint8)
        mask = np.zeros((20, 20), bool)
        mask[5:15, 5:15] = True
        out = inpaint_background(image, mask)
        np.testing.assert_array_equal(out, image)

    def test_maximum_principle(self):
        # hole between two constant regions: filled values stay within the
        # boundary value range
        image = np.zeros((20, 30, 3), np.float32)
        image[:, :15] = 10.0
        image[:, 15:] = 250.0
        mask = np.zeros((20, 30), bool)
        mask[6:14, 10:20] = True
        out = inpaint_background(image, mask)
        assert out[mask].min() >= 10.0 - 1e-5
        assert out[mask].max() <= 250.0 + 1e-5
        np.testing.assert_array_equal(out[~mask], image[~mask])

    def test_full_mask_rejected(self):
        image, _ = square_scene()
        with pytest.raises(ValueError):
            inpaint_background(image, np.ones(image.shape[:2], bool))

    def test_pixels_outside_mask_untouched(self):
        image, mask = square_scene()
        out = inpaint_background(image, mask)
        np.testing.assert_array_equal(out[~mask], image[~mask])


class TestRandomAffineBlur:
    def test_identity_transform_is_exact_paste(self):
        image, mask = square_scene()
        rng = np.random.default_rng(1)
        out_img, out_mask = random_affine_blur(image, mask, identity_params(), rng)
        np.testing.assert_array_equal(out_mask, mask)
        # target pixels survive the paste; background comes from the inpaint
        np.testing.assert_array_equal(out_img[mask], image[mask])
        np.testing.assert_array_equal(out_img[~mask], image[~mask])

    def test_pure_translation_moves_centroid(self):
        from tmvos.augmentation import _warp
        image, mask = square_scene()
        _, out_mask = _warp(image, mask, angle=0.0, scale=1.0, translation=(0.0, 10.0))
        dy = mask_centroid(out_mask)[0] - mask_centroid(mask)[0]
        dx = mask_centroid(out_mask)[1] - mask_centroid(mask)[1]
        assert dy == pytest.approx(0.0, abs=0.5)
        assert dx == pytest.approx(10.0, abs=0.5)
        assert out_mask.sum() == mask.sum()

    def test_sampled_translation_within_bounds(self):
        image, mask = square_scene()
        params = identity_params(max_translation=10 / 64)
        rng = np.random.default_rng(3)
        _, out_mask = random_affine_blur(image, mask, params, rng)
        dy = mask_centroid(out_mask)[0] - mask_centroid(mask)[0]
        dx = mask_centroid(out_mask)[1] - mask_centroid(mask)[1]
        assert abs(dy) <= params.max_translation * image.shape[0] + 0.5
        assert abs(dx) <= params.max_translation * image.shape[1] + 0.5

    def test_scale_grows_area(self):
        # large square so rasterization stays inside the 5% tolerance
        image, mask = square_scene(h=96, w=128, size=32, at=(32, 48))
        params = identity_params(scale_range=(1.2, 1.2))
        rng = np.random.default_rng(5)
        _, out_mask = random_affine_blur(image, mask, params, rng)
        ratio = out_mask.sum() / mask.sum()
        assert ratio == pytest.approx(1.44, rel=0.05)

    def test_empty_mask_warns_and_passes_through(self):
        image, _ = square_scene()
        empty = np.zeros(image.shape[:2], bool)
        rng = np.random.default_rng(7)
        with pytest.warns(UserWarning):
            out_img, out_mask = random_affine_blur(image, empty, identity_params(), rng)
        np.testing.assert_array_equal(out_img, image)
        assert not out_mask.any()

    def test_mask_stays_binary_bool(self):
        image, mask = square_scene()
        params = AugmentationParams(rng_seed=0)
        rng = np.random.default_rng(11)
        _, out_mask = random_affine_blur(image, mask, params, rng)
        assert out_mask.dtype == np.bool_


class TestGenerateInitialSet:
    def test_count_and_first_element(self):
        image, mask = square_scene()
        pairs = generate_initial_set(image, mask, AugmentationParams(n_augmented=4, rng_seed=1))
        assert len(pairs) == 5
        np.testing.assert_array_equal(pairs[0][0], image)
        np.testing.assert_array_equal(pairs[0][1], mask)

    def test_zero_augmented(self):
        image, mask = square_scene()
        pairs = generate_initial_set(image, mask, AugmentationParams(n_augmented=0))
        assert len(pairs) == 1

    def test_deterministic_under_seed(self):
        image, mask = square_scene()
        params = AugmentationParams(n_augmented=3, rng_seed=42)
        a = generate_initial_set(image, mask, params)
        b = generate_initial_set(image, mask, params)
        for (ia, ma), (ib, mb) in zip(a, b):
            np.testing.assert_array_equal(ia, ib)
            np.testing.assert_array_equal(ma, mb)

    def test_different_seed_differs(self):
        image, mask = square_scene()
        a = generate_initial_set(image, mask, AugmentationParams(n_augmented=2, rng_seed=1))
        b = generate_initial_set(image, mask, AugmentationParams(n_augmented=2, rng_seed=2))
        assert any(not np.array_equal(ma, mb) or not np.array_equal(ia, ib)
                   for (ia, ma), (ib, mb) in zip(a[1:], b[1:]))

    @pytest.mark.parametrize("seed", range(100))
    def test_masks_binary_and_nonempty(self, seed):
        image, mask = square_scene(seed=seed % 7)
        pairs = generate_initial_set(image, mask, AugmentationParams(n_augmented=1, rng_seed=seed))
        for _, m in pairs:
            assert m.dtype == np.bool_
            assert m.any()

    def test_far_background_identical(self):
        from scipy import ndimage
        image, mask = square_scene()
        params = AugmentationParams(n_augmented=4, rng_seed=3)
        pairs = generate_initial_set(image, mask, params)
        dilated = ndimage.binary_dilation(mask, iterations=8)
        for img, m in pairs[1:]:
            untouched = ~dilated & ~m
            np.testing.assert_array_equal(img[untouched], image[untouched])
