import numpy as np
import pytest

from polypseg.core.exceptions import ShapeError, ValidationError
from polypseg.services.ensemble import (
    clean_mask, minority_votes, remove_small_regions, vote_masks,
)


def _square(size=16, box=(4, 10, 4, 10)):
    mask = np.zeros((size, size))
    r0, r1, c0, c1 = box
    mask[r0:r1, c0:c1] = 1.0
    return mask


class TestVoting:
    def test_default_is_largest_minority(self):
        assert [minority_votes(k) for k in (1, 2, 3, 5, 15)] == [1, 1, 1, 2, 7]

    def test_vote_counts(self):
        probs = [np.array([[0.9, 0.9, 0.1]]), np.array([[0.8, 0.2, 0.1]]),
                 np.array([[0.7, 0.1, 0.6]])]
        np.testing.assert_array_equal(vote_masks(probs, 1), [[1.0, 1.0, 1.0]])
        np.testing.assert_array_equal(vote_masks(probs, 2), [[1.0, 0.0, 0.0]])
        np.testing.assert_array_equal(vote_masks(probs, 3), [[1.0, 0.0, 0.0]])

    def test_threshold_is_strict(self):
        np.testing.assert_array_equal(vote_masks([np.array([[0.5, 0.51]])], 1), [[0.0, 1.0]])

    def test_more_votes_never_add_pixels(self, rng):
        probs = [rng.uniform(size=(16, 16)) for _ in range(5)]
        masks = [vote_masks(probs, k) for k in range(1, 6)]
        for loose, strict in zip(masks, masks[1:]):
            assert np.all(strict <= loose)

    def test_bad_vote_count(self):
        with pytest.raises(ValidationError):
            vote_masks([np.zeros((4, 4))] * 2, 3)
        with pytest.raises(ValidationError):
            vote_masks([])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            vote_masks([np.zeros((4, 4)), np.zeros((4, 5))], 1)


class TestCleanup:
    def test_small_regions_dropped(self):
        mask = _square() + _square(box=(13, 15, 13, 15))
        cleaned = remove_small_regions(mask, min_area=5)
        np.testing.assert_array_equal(cleaned, _square())

    def test_diagonal_pixels_form_one_region(self):
        mask = np.zeros((6, 6))
        mask[1, 1] = mask[2, 2] = mask[3, 3] = 1.0
        np.testing.assert_array_equal(remove_small_regions(mask, min_area=3), mask)

    def test_opening_removes_speckle(self):
        mask = _square()
        mask[0, 15] = 1.0
        mask[10, 4] = 1.0
        np.testing.assert_array_equal(clean_mask(mask, opening=3), _square())

    def test_noop_settings(self):
        mask = _square()
        mask[0, 0] = 1.0
        np.testing.assert_array_equal(clean_mask(mask, opening=1, min_area=0), mask)

    def test_voted_speckle_is_cleaned(self, rng):
        truth = _square(size=32, box=(8, 24, 8, 24))
        probs = []
        for i in range(5):
            noisy = truth * 0.9 + 0.05
            flips = rng.uniform(size=truth.shape) < 0.02
            noisy = np.where(flips, 1.0 - noisy, noisy)
            if i < 2:
                noisy[2, 2] = noisy[28, 3] = 0.95
            probs.append(noisy)
        voted = vote_masks(probs, 2)
        assert voted[2, 2] == voted[28, 3] == 1.0
        np.testing.assert_array_equal(clean_mask(voted, opening=3, min_area=20), truth)
