"""Pair loading, caching, and seeded epoch batching."""

import pytest
import torch

from avground.config import Config
from avground.dataset import PairDataset, epoch_batches, epoch_permutation, split_records
from avground.encoders import build_encoders
from avground.errors import InputError
from avground.synthdata import make_dataset


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    cfg = Config()
    cfg.data.root = str(root)
    cfg.data.train_matched = 6
    cfg.data.test_matched = 3
    cfg.data.test_silent = 2
    cfg.data.test_mismatched = 2
    cfg.data.test_interactive_groups = 2
    cfg.data.test_mixtures = 1
    records = make_dataset(cfg.data)
    return cfg, root, records, build_encoders(cfg.encoder)


class TestSplitRecords:
    def test_filters_compose(self, corpus):
        _, _, records, _ = corpus
        train = split_records(records, "train")
        assert len(train) == 6 and all(r["split"] == "train" for r in train)
        silent = split_records(records, "test", "silent")
        assert len(silent) == 2 and all(r["variant"] == "silent" for r in silent)
        assert split_records(records) == records

    def test_unknown_variant_yields_empty(self, corpus):
        _, _, records, _ = corpus
        assert split_records(records, "test", "nope") == []


class TestPairDataset:
    def test_load_shapes_and_dtypes(self, corpus):
        cfg, root, records, bank = corpus
        ds = PairDataset(root, split_records(records, "train"), bank)
        pair = ds.load(0)
        assert pair.image.shape == (3, 96, 96) and pair.image.dtype == torch.float64
        assert pair.frames.shape[1] == cfg.encoder.d_a and pair.frames.dtype == torch.float64

    def test_batch_stacks_in_index_order(self, corpus):
        _, root, records, bank = corpus
        ds = PairDataset(root, split_records(records, "train"), bank)
        images, frames, recs = ds.batch([2, 0])
        assert images.shape[0] == frames.shape[0] == len(recs) == 2
        assert recs[0] == ds.records[2] and recs[1] == ds.records[0]
        assert torch.equal(images[1], ds.load(0).image)

    def test_cache_returns_same_tensor_object(self, corpus):
        _, root, records, bank = corpus
        ds = PairDataset(root, split_records(records, "train"), bank)
        assert ds.load(1).image is ds.load(1).image
        assert ds.load(1).frames is ds.load(1).frames

    def test_interactive_pairings_share_cached_image(self, corpus):
        _, root, records, bank = corpus
        ds = PairDataset(root, split_records(records, "test", "interactive"), bank)
        by_group = {}
        for i, r in enumerate(ds.records):
            by_group.setdefault(r["group_id"], []).append(i)
        for a, b in by_group.values():
            assert ds.load(a).image is ds.load(b).image
            assert not torch.equal(ds.load(a).frames, ds.load(b).frames)

    def test_gt_mask_shape_and_missing_class(self, corpus):
        _, root, records, bank = corpus
        ds = PairDataset(root, split_records(records, "test", "matched"), bank)
        record = ds.records[0]
        mask = ds.gt_mask(record, record["target_classes"][0])
        assert mask.shape == (96, 96) and mask.dtype == bool and mask.any()
        with pytest.raises(InputError):
            ds.gt_mask(record, 99)

    def test_empty_record_list_rejected(self, corpus):
        _, root, _, bank = corpus
        with pytest.raises(InputError):
            PairDataset(root, [], bank)


class TestEpochBatching:
    def test_permutation_is_seeded_and_epoch_dependent(self):
        assert epoch_permutation(10, 0, 3) == epoch_permutation(10, 0, 3)
        assert epoch_permutation(10, 0, 3) != epoch_permutation(10, 0, 4)
        assert epoch_permutation(10, 1, 3) != epoch_permutation(10, 0, 3)
        assert sorted(epoch_permutation(10, 0, 3)) == list(range(10))

    def test_batches_cover_permutation_and_drop_remainder(self):
        batches = epoch_batches(10, 4, seed=0, epoch=0)
        assert [len(b) for b in batches] == [4, 4]
        flat = [i for b in batches for i in b]
        assert flat == epoch_permutation(10, 0, 0)[:8]

    def test_exact_multiple_keeps_every_index(self):
        batches = epoch_batches(8, 4, seed=2, epoch=1)
        assert sorted(i for b in batches for i in b) == list(range(8))
