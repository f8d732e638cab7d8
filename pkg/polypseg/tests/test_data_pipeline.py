import numpy as np
import pytest
import torch

from polypseg.core.exceptions import DataError, ValidationError
from polypseg.schemas.training import DataConfig
from polypseg.services.data_pipeline import (
    SegmentationDataset, available_manifests, binarize, kfold_splits, load_manifest,
    make_sample, manifest_for, read_manifest, rescale_batch, rotate_eval, save_manifest,
    scaled_size, synth_dataset, train_val_split,
)
from polypseg.utils.image_io import read_mask, write_gray_png, write_rgb_png


def _write_pair(root, dataset, stem, size=(40, 48), image_dir="images", mask_dir="masks"):
    rgb = np.zeros((*size, 3), dtype=np.uint8)
    mask = np.zeros(size)
    mask[10:20, 12:30] = 1.0
    write_rgb_png(rgb, root / dataset / image_dir / f"{stem}.png")
    write_gray_png(mask, root / dataset / mask_dir / f"{stem}.png")


class TestManifest:
    def test_pairs_by_stem(self, tmp_path):
        for stem in ("b", "a", "c"):
            _write_pair(tmp_path, "set", stem)
        manifest = load_manifest(tmp_path, "set")
        assert [p.stem for p in manifest.pairs] == ["a", "b", "c"]
        assert manifest.split == "test"

    def test_singular_directory_names(self, tmp_path):
        _write_pair(tmp_path, "set", "a", image_dir="image", mask_dir="mask")
        assert len(load_manifest(tmp_path, "set")) == 1

    def test_unmatched_files(self, tmp_path):
        _write_pair(tmp_path, "set", "a")
        write_gray_png(np.zeros((4, 4)), tmp_path / "set" / "masks" / "orphan.png")
        with pytest.raises(DataError) as exc:
            load_manifest(tmp_path, "set")
        assert any("orphan" in f for f in exc.value.details["files"])

    def test_missing_dataset(self, tmp_path):
        with pytest.raises(DataError):
            load_manifest(tmp_path, "nowhere")

    def test_empty_dataset(self, tmp_path):
        (tmp_path / "empty" / "images").mkdir(parents=True)
        assert len(load_manifest(tmp_path, "empty")) == 0

    def test_cache(self, tmp_path, synthetic):
        path = save_manifest(synthetic, tmp_path / "cache" / "synthetic.json")
        assert read_manifest(path) == synthetic

    def test_available_skips_missing(self, tmp_path, synthetic):
        data = DataConfig(root=tmp_path / "data")
        found = available_manifests(data, ["synthetic", "Kvasir"])
        assert [m.name for m in found] == ["synthetic"]

    def test_no_root(self, monkeypatch):
        from polypseg.core.config import settings
        monkeypatch.setattr(settings, "DATA_ROOT", None)
        with pytest.raises(DataError):
            manifest_for(DataConfig(), "Kvasir")
        assert available_manifests(DataConfig(), ["Kvasir"]) == []


class TestSamples:
    def test_scaled_sizes(self):
        assert scaled_size(352, 0.75) == 256
        assert scaled_size(352, 1.0) == 352
        assert scaled_size(352, 1.25) == 448
        assert scaled_size(64, 0.25) == 32

    def test_make_sample(self, tmp_path):
        _write_pair(tmp_path, "set", "a")
        pair = load_manifest(tmp_path, "set").pairs[0]
        sample = make_sample(pair, cfg=DataConfig(image_size=64))
        assert sample.image.shape == (3, 64, 64)
        assert sample.mask.shape == (1, 64, 64)
        assert sample.original_size == (40, 48)
        assert set(sample.mask.unique().tolist()) == {0.0, 1.0}
        # black image normalizes to -mean/std
        torch.testing.assert_close(sample.image[0, 0, 0], torch.tensor(-0.485 / 0.229))

    def test_training_scale(self, tmp_path):
        _write_pair(tmp_path, "set", "a")
        pair = load_manifest(tmp_path, "set").pairs[0]
        sample = make_sample(pair, train=True, scale=1.5, cfg=DataConfig(image_size=64))
        assert sample.image.shape[-1] == 96
        with pytest.raises(ValidationError):
            make_sample(pair, train=False, scale=1.25)

    def test_size_mismatch(self, tmp_path):
        _write_pair(tmp_path, "set", "a")
        write_gray_png(np.zeros((10, 10)), tmp_path / "set" / "masks" / "a.png")
        pair = load_manifest(tmp_path, "set").pairs[0]
        with pytest.raises(DataError):
            make_sample(pair)

    def test_binarize(self):
        mask = torch.tensor([[0.0, 0.2, 0.5, 0.6]])
        torch.testing.assert_close(binarize(mask), torch.tensor([[0.0, 0.0, 1.0, 1.0]]))
        torch.testing.assert_close(binarize(torch.zeros(2, 2)), torch.zeros(2, 2))

    def test_rescale_batch(self):
        images = torch.randn(2, 3, 64, 64)
        masks = (torch.rand(2, 1, 64, 64) > 0.5).float()
        im, ms = rescale_batch(images, masks, 96)
        assert im.shape == (2, 3, 96, 96)
        assert set(ms.unique().tolist()) <= {0.0, 1.0}

    def test_dataset(self, synthetic):
        ds = SegmentationDataset(synthetic, DataConfig(image_size=64))
        image, mask = ds[3]
        assert len(ds) == 8
        assert image.shape == (3, 64, 64) and mask.shape == (1, 64, 64)


class TestRotation:
    @pytest.fixture
    def sample(self, synthetic):
        return make_sample(synthetic.pairs[0], cfg=DataConfig(image_size=64))

    @pytest.mark.parametrize("degrees", [0, 360, -720])
    def test_full_turns_are_identity(self, sample, degrees):
        assert rotate_eval(sample, degrees) is sample

    def test_rotation_changes_mask(self, sample):
        rotated = rotate_eval(sample, 15)
        assert rotated.mask.shape == sample.mask.shape
        assert set(rotated.mask.unique().tolist()) <= {0.0, 1.0}
        assert not torch.equal(rotated.mask, sample.mask)
        # corners come from outside the frame
        assert torch.all(rotated.image[:, 0, 0] == 0)


class TestSplits:
    def test_holdout(self, synthetic):
        train, val = train_val_split(synthetic, 0.1, seed=3)
        assert len(train) == 7 and len(val) == 1
        assert not {p.stem for p in train.pairs} & {p.stem for p in val.pairs}
        assert train_val_split(synthetic, 0.1, seed=3)[1].pairs == val.pairs

    def test_zero_fraction_reuses_train(self, synthetic):
        train, val = train_val_split(synthetic, 0.0)
        assert train.pairs == val.pairs == synthetic.pairs

    def test_bad_fraction(self, synthetic):
        with pytest.raises(ValidationError):
            train_val_split(synthetic, 1.0)

    def test_kfold_partition(self, synthetic):
        folds = kfold_splits(synthetic, k=4, seed=1)
        assert len(folds) == 4
        held_out = [p.stem for _, val in folds for p in val.pairs]
        assert sorted(held_out) == sorted(p.stem for p in synthetic.pairs)
        for train, val in folds:
            assert len(train) + len(val) == 8

    def test_kfold_bounds(self, synthetic):
        with pytest.raises(ValidationError):
            kfold_splits(synthetic, k=9)


class TestSynthetic:
    def test_deterministic(self, tmp_path):
        a = synth_dataset(3, seed=5, root=tmp_path / "a", size=32)
        b = synth_dataset(3, seed=5, root=tmp_path / "b", size=32)
        for pa, pb in zip(a.pairs, b.pairs):
            assert pa.image.read_bytes() == pb.image.read_bytes()
            assert pa.mask.read_bytes() == pb.mask.read_bytes()

    def test_masks_are_binary_blobs(self, synthetic):
        mask = read_mask(synthetic.pairs[0].mask)
        assert mask.shape == (64, 64)
        assert 0 < mask.mean() < 0.5

    def test_round_trip_through_loader(self, tmp_path, synthetic):
        manifest = load_manifest(tmp_path / "data", "synthetic")
        assert [p.stem for p in manifest.pairs] == [p.stem for p in synthetic.pairs]
