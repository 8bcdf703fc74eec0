import numpy as np
import pytest

from tain.data import (
    AugmentConfig,
    Triplet,
    TripletDataset,
    apply_occluder,
    augment,
    load_image,
    paste_moving_patch,
    rng_for,
    save_image,
)
from tain.errors import ConfigError, DataError


def make_triplet(rng, h=80, w=90, source_id="t"):
    return Triplet(
        i0=rng.uniform(0, 1, (h, w, 3)).astype(np.float32),
        it=rng.uniform(0, 1, (h, w, 3)).astype(np.float32),
        i1=rng.uniform(0, 1, (h, w, 3)).astype(np.float32),
        source_id=source_id,
    )


class TestRngFor:
    def test_same_coordinates_same_stream(self):
        a = rng_for(3, "batch", 7).random(5)
        b = rng_for(3, "batch", 7).random(5)
        assert np.array_equal(a, b)

    def test_different_tags_different_streams(self):
        a = rng_for(3, "batch", 7).random(5)
        b = rng_for(3, "batch", 8).random(5)
        c = rng_for(3, "aug", 7).random(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestImageIO:
    def test_round_half_up_quantization(self, tmp_path):
        arr = np.zeros((2, 2, 3), dtype=np.float32)
        arr[0, 0] = 0.5  # 127.5 rounds up to 128
        arr[0, 1] = 0.1  # 25.5 rounds up to 26
        arr[1, 0] = 1.0
        arr[1, 1] = -0.3  # clamped to 0
        p = tmp_path / "img.png"
        save_image(p, arr)
        back = load_image(p)
        assert back.dtype == np.float32
        assert back[0, 0, 0] == pytest.approx(128 / 255)
        assert back[0, 1, 0] == pytest.approx(26 / 255)
        assert back[1, 0, 0] == pytest.approx(1.0)
        assert back[1, 1, 0] == 0.0

    def test_save_load_round_trip_of_quantized_values(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = (rng.integers(0, 256, size=(6, 5, 3)) / 255.0).astype(np.float32)
        p = tmp_path / "img.png"
        save_image(p, arr)
        assert np.allclose(load_image(p), arr, atol=1e-7)

    def test_unreadable_file_raises(self, tmp_path):
        p = tmp_path / "broken.png"
        p.write_bytes(b"this is not a png")
        with pytest.raises(DataError, match="cannot read"):
            load_image(p)

    def test_bad_shape_rejected_on_save(self, tmp_path):
        with pytest.raises(DataError):
            save_image(tmp_path / "x.png", np.zeros((4, 4)))


def write_triplet_dir(d, shapes=((8, 8),) * 3, names=("frame0.png", "frame1.png", "frame2.png")):
    d.mkdir(parents=True)
    rng = np.random.default_rng(0)
    for name, (h, w) in zip(names, shapes):
        save_image(d / name, rng.uniform(0, 1, (h, w, 3)))


class TestTripletDataset:
    def test_flat_layout_counts_and_loads(self, tmp_path):
        for name in ("b_trip", "a_trip", "c_trip"):
            write_triplet_dir(tmp_path / name)
        ds = TripletDataset(tmp_path)
        assert len(ds) == 3
        # lexicographic order by path
        assert [e[0] for e in ds.entries] == ["a_trip", "b_trip", "c_trip"]
        t = ds.load(0)
        t.validate()
        assert t.source_id == "a_trip"
        assert t.i0.shape == (8, 8, 3)

    def test_nested_sequences_layout(self, tmp_path):
        write_triplet_dir(
            tmp_path / "sequences" / "00001" / "0001",
            names=("im1.png", "im2.png", "im3.png"),
        )
        write_triplet_dir(
            tmp_path / "sequences" / "00001" / "0002",
            names=("im1.png", "im2.png", "im3.png"),
        )
        ds = TripletDataset(tmp_path)
        assert len(ds) == 2
        trip = ds.load(0)
        # im2 is the middle frame
        assert np.array_equal(trip.it, load_image(tmp_path / "sequences/00001/0001/im2.png"))

    def test_incomplete_folder_not_counted(self, tmp_path):
        write_triplet_dir(tmp_path / "good")
        partial = tmp_path / "partial"
        partial.mkdir()
        save_image(partial / "frame0.png", np.zeros((4, 4, 3)))
        ds = TripletDataset(tmp_path)
        assert len(ds) == 1

    def test_empty_root_raises(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(DataError, match="no triplets"):
            TripletDataset(tmp_path / "empty")
        with pytest.raises(DataError):
            TripletDataset(tmp_path / "missing")

    def test_mismatched_sizes_skipped_with_count(self, tmp_path):
        write_triplet_dir(tmp_path / "good")
        write_triplet_dir(tmp_path / "bad", shapes=((8, 8), (6, 8), (8, 8)))
        ds = TripletDataset(tmp_path)
        assert len(ds) == 2
        with pytest.warns(UserWarning, match="skipping"):
            loaded = list(ds)
        assert len(loaded) == 1
        assert ds.skipped == 1

    def test_unreadable_image_skipped_with_count(self, tmp_path):
        write_triplet_dir(tmp_path / "good")
        write_triplet_dir(tmp_path / "corrupt")
        (tmp_path / "corrupt" / "frame1.png").write_bytes(b"junk")
        ds = TripletDataset(tmp_path)
        with pytest.warns(UserWarning):
            loaded = list(ds)
        assert [t.source_id for t in loaded] == ["good"]
        assert ds.skipped == 1


class TestPasteMovingPatch:
    def test_zero_motion_keeps_patch_in_place(self):
        t = make_triplet(np.random.default_rng(1))
        patch = np.full((21, 21, 3), 0.25, dtype=np.float32)
        out = paste_moving_patch(t, patch, (10, 10), (10, 10))
        for f in out.frames:
            assert np.array_equal(f[10:31, 10:31], patch)

    def test_midpoint_of_linear_motion(self):
        t = make_triplet(np.random.default_rng(2))
        patch = np.full((5, 5, 3), 0.8, dtype=np.float32)
        out = paste_moving_patch(t, patch, (0, 0), (20, 40))
        assert np.array_equal(out.i0[0:5, 0:5], patch)
        assert np.array_equal(out.it[10:15, 20:25], patch)  # midpoint (10, 20)
        assert np.array_equal(out.i1[20:25, 40:45], patch)

    def test_midpoint_rounds_half_up(self):
        t = make_triplet(np.random.default_rng(3))
        patch = np.full((3, 3, 3), 0.9, dtype=np.float32)
        out = paste_moving_patch(t, patch, (0, 1), (1, 2))  # midpoints 0.5 -> 1, 1.5 -> 2
        assert np.array_equal(out.it[1:4, 2:5], patch)

    def test_source_frames_untouched(self):
        t = make_triplet(np.random.default_rng(4))
        before = t.i0.copy()
        paste_moving_patch(t, np.zeros((4, 4, 3), dtype=np.float32), (0, 0), (2, 2))
        assert np.array_equal(t.i0, before)

    def test_out_of_bounds_rejected(self):
        t = make_triplet(np.random.default_rng(5), h=30, w=30)
        patch = np.zeros((21, 21, 3), dtype=np.float32)
        with pytest.raises(DataError, match="leaves"):
            paste_moving_patch(t, patch, (0, 0), (15, 0))


class TestApplyOccluder:
    def test_replayed_rng_predicts_placement(self):
        rng = np.random.default_rng(0)
        t = make_triplet(rng, source_id="target")
        donor = make_triplet(rng, source_id="donor")
        out = apply_occluder(t, donor, rng_for(9, "occ"))

        replay = rng_for(9, "occ")
        k = int(replay.integers(21, 62))
        sy = int(replay.integers(0, donor.i0.shape[0] - k + 1))
        sx = int(replay.integers(0, donor.i0.shape[1] - k + 1))
        patch = donor.i0[sy:sy + k, sx:sx + k]
        p0 = (int(replay.integers(0, 80 - k + 1)), int(replay.integers(0, 90 - k + 1)))
        p1 = (int(replay.integers(0, 80 - k + 1)), int(replay.integers(0, 90 - k + 1)))
        pt = ((p0[0] + p1[0] + 1) // 2, (p0[1] + p1[1] + 1) // 2)
        assert np.array_equal(out.i0[p0[0]:p0[0] + k, p0[1]:p0[1] + k], patch)
        assert np.array_equal(out.it[pt[0]:pt[0] + k, pt[1]:pt[1] + k], patch)
        assert np.array_equal(out.i1[p1[0]:p1[0] + k, p1[1]:p1[1] + k], patch)

    @pytest.mark.parametrize("seed", range(8))
    def test_sizes_and_midpoint_law_hold(self, seed):
        rng_data = np.random.default_rng(seed)
        t = make_triplet(rng_data)
        donor = make_triplet(rng_data)
        rng = rng_for(seed, "occ-law")
        replay = rng_for(seed, "occ-law")
        out = apply_occluder(t, donor, rng)
        k = int(replay.integers(21, 62))
        assert 21 <= k <= 61
        _ = replay.integers(0, donor.i0.shape[0] - k + 1)
        _ = replay.integers(0, donor.i0.shape[1] - k + 1)
        p0 = (int(replay.integers(0, 80 - k + 1)), int(replay.integers(0, 90 - k + 1)))
        p1 = (int(replay.integers(0, 80 - k + 1)), int(replay.integers(0, 90 - k + 1)))
        pt = ((p0[0] + p1[0] + 1) // 2, (p0[1] + p1[1] + 1) // 2)
        assert 0 <= pt[0] <= 80 - k and 0 <= pt[1] <= 90 - k
        assert np.array_equal(
            out.it[pt[0]:pt[0] + k, pt[1]:pt[1] + k],
            out.i0[p0[0]:p0[0] + k, p0[1]:p0[1] + k],
        )

    def test_small_frames_skipped_with_warning(self):
        rng = np.random.default_rng(0)
        t = make_triplet(rng, h=40, w=40)
        donor = make_triplet(rng, h=40, w=40)
        with pytest.warns(UserWarning, match="too small"):
            out = apply_occluder(t, donor, rng_for(0))
        assert np.array_equal(out.i0, t.i0)


class TestAugment:
    def identity_config(self):
        return AugmentConfig(
            flip_h=0.0, flip_v=0.0, crop_size=None,
            brightness=0.0, contrast=0.0, saturation=0.0,
            occluder_enabled=False,
        )

    def test_identity_config_is_bit_exact(self):
        t = make_triplet(np.random.default_rng(0))
        out = augment(t, self.identity_config(), t, rng_for(1))
        for a, b in zip(out.frames, t.frames):
            assert a.dtype == np.float32
            assert np.array_equal(a, b)

    def test_horizontal_flip_is_involution(self):
        t = make_triplet(np.random.default_rng(1))
        cfg = self.identity_config()
        cfg.flip_h = 1.0
        out = augment(t, cfg, t, rng_for(2))
        assert np.array_equal(out.i0[:, ::-1, :], t.i0)
        assert np.array_equal(out.it[:, ::-1, :], t.it)

    def test_fixed_seed_reproduces_bit_identically(self):
        rng_data = np.random.default_rng(2)
        t = make_triplet(rng_data)
        donor = make_triplet(rng_data)
        cfg = AugmentConfig(
            flip_h=0.5, flip_v=0.5, crop_size=(64, 64),
            brightness=0.1, contrast=0.1, saturation=0.2,
            occluder_enabled=True, occluder_probability=1.0, seed=0,
        )
        a = augment(t, cfg, donor, rng_for(7, "aug", 3, 0))
        b = augment(t, cfg, donor, rng_for(7, "aug", 3, 0))
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa, fb)

    def test_temporal_consistency_on_identical_frames(self):
        base = np.random.default_rng(3).uniform(0, 1, (70, 75, 3)).astype(np.float32)
        t = Triplet(i0=base.copy(), it=base.copy(), i1=base.copy(), source_id="same")
        cfg = AugmentConfig(flip_h=0.5, flip_v=0.5, crop_size=(48, 48), occluder_enabled=False)
        for trial in range(5):
            out = augment(t, cfg, t, rng_for(trial, "consistency"))
            assert np.array_equal(out.i0, out.it)
            assert np.array_equal(out.it, out.i1)

    def test_crop_shapes_and_bounds(self):
        t = make_triplet(np.random.default_rng(4))
        cfg = self.identity_config()
        cfg.crop_size = (32, 48)
        out = augment(t, cfg, t, rng_for(0))
        assert out.i0.shape == (32, 48, 3)
        cfg.crop_size = (100, 48)
        with pytest.raises(DataError, match="crop"):
            augment(t, cfg, t, rng_for(0))

    def test_jitter_keeps_values_in_range(self):
        t = make_triplet(np.random.default_rng(5))
        cfg = AugmentConfig(
            flip_h=0.0, flip_v=0.0, brightness=0.8, contrast=0.8, saturation=0.9,
            occluder_enabled=False,
        )
        for trial in range(10):
            out = augment(t, cfg, t, rng_for(trial, "range"))
            for f in out.frames:
                assert f.min() >= 0.0 and f.max() <= 1.0

    def test_jitter_applies_same_params_to_all_frames(self):
        base = np.random.default_rng(6).uniform(0.2, 0.8, (20, 20, 3)).astype(np.float32)
        t = Triplet(i0=base.copy(), it=base.copy(), i1=base.copy())
        cfg = AugmentConfig(flip_h=0.0, brightness=0.3, contrast=0.3, saturation=0.4,
                            occluder_enabled=False)
        out = augment(t, cfg, t, rng_for(8))
        assert np.array_equal(out.i0, out.it)
        assert np.array_equal(out.it, out.i1)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            AugmentConfig(flip_h=1.5).validate()
        with pytest.raises(ConfigError):
            AugmentConfig(brightness=-0.1).validate()
        with pytest.raises(ConfigError):
            AugmentConfig(occluder_enabled=True, occluder_min_size=5).validate()
        with pytest.raises(ConfigError):
            AugmentConfig(occluder_enabled=True, occluder_max_size=80).validate()
        AugmentConfig(occluder_enabled=False, occluder_min_size=5)  # fine when disabled

    def test_config_dict_round_trip(self):
        cfg = AugmentConfig(crop_size=(64, 64), occluder_enabled=True, seed=5)
        again = AugmentConfig.from_dict(cfg.to_dict())
        assert again == cfg
        with pytest.raises(ConfigError):
            AugmentConfig.from_dict({"nope": 1})
