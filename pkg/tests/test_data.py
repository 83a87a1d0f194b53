import numpy as np
import pytest

from sdl import data
from sdl.data import (FrameGroup, MovingObject, SynthConfig,
                      enumerate_t_distribution, generate_group, load_ppm,
                      render_frame, sample, save_ppm)


class TestPpm:
    def test_round_trip_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (3, 7, 5)).astype(np.float32)
        p1 = tmp_path / "a.ppm"
        p2 = tmp_path / "b.ppm"
        save_ppm(img, p1)
        save_ppm(load_ppm(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_quantization_error_bounded(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (3, 8, 8)).astype(np.float32)
        path = tmp_path / "q.ppm"
        save_ppm(img, path)
        assert float(np.max(np.abs(load_ppm(path) - img))) <= 0.5 / 255.0 + 1e-7

    def test_single_white_pixel(self, tmp_path):
        path = tmp_path / "w.ppm"
        path.write_bytes(b"P6\n1 1\n255\n\xff\xff\xff")
        np.testing.assert_array_equal(load_ppm(path), np.ones((3, 1, 1), np.float32))

    def test_comments_in_header(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# a comment\n1 1\n255\n\x00\x00\x00")
        assert load_ppm(path).shape == (3, 1, 1)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(ValueError, match="P6"):
            load_ppm(path)

    def test_unsupported_maxval(self, tmp_path):
        path = tmp_path / "m.ppm"
        path.write_bytes(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00")
        with pytest.raises(ValueError, match="maxval"):
            load_ppm(path)

    def test_truncated_payload_names_offset(self, tmp_path):
        path = tmp_path / "t.ppm"
        path.write_bytes(b"P6\n2 2\n255\n\x00\x00\x00")
        with pytest.raises(ValueError, match="truncated.*byte"):
            load_ppm(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_ppm(tmp_path / "nope.ppm")


class TestFrameGroup:
    def test_too_few_frames(self):
        f = np.zeros((3, 8, 8), np.float32)
        with pytest.raises(ValueError, match=">= 3"):
            FrameGroup([f, f], "g")

    def test_mixed_shapes(self):
        a = np.zeros((3, 8, 8), np.float32)
        b = np.zeros((3, 8, 9), np.float32)
        with pytest.raises(ValueError, match="shape"):
            FrameGroup([a, a, b], "g")


class TestSyntheticGenerator:
    def test_deterministic(self):
        cfg = SynthConfig(canvas=(32, 32), seed=7, frames_per_group=4)
        g1 = generate_group(cfg, "g0003")
        g2 = generate_group(cfg, "g0003")
        for f1, f2 in zip(g1.frames, g2.frames):
            np.testing.assert_array_equal(f1, f2)

    def test_group_id_changes_content(self):
        cfg = SynthConfig(canvas=(32, 32), seed=7, frames_per_group=4)
        g1 = generate_group(cfg, "g0001")
        g2 = generate_group(cfg, "g0002")
        assert any(np.any(a != b) for a, b in zip(g1.frames, g2.frames))

    def test_frame_count_and_range(self):
        cfg = SynthConfig(canvas=(24, 24), seed=3, frames_per_group=5)
        g = generate_group(cfg)
        assert len(g) == 5
        for f in g.frames:
            assert f.shape == (3, 24, 24)
            assert f.min() >= 0.0 and f.max() <= 1.0

    def test_centroid_moves_at_constant_velocity(self):
        # single bright rectangle on a black background; the intensity
        # centroid must advance by the configured velocity each frame
        obj = MovingObject("rectangle", (20.0, 10.0), (0.0, 2.0), (4.0, 4.0),
                           (1.0, 1.0, 1.0))
        bg = np.zeros((3, 48 * data.SUPERSAMPLE, 48 * data.SUPERSAMPLE))
        frames = [render_frame(bg, [obj], i, (48, 48)) for i in range(6)]
        xs = []
        for f in frames:
            mass = f.sum(axis=0)
            xs.append(float((mass * np.arange(48)[None, :]).sum() / mass.sum()))
        steps = np.diff(xs)
        np.testing.assert_allclose(steps, 2.0, atol=0.1)

    def test_shifted_object_reproduces_later_frame(self):
        # frame k of an object at c equals frame 0 of the object at c + k*v
        obj = MovingObject("disk", (12.0, 8.0), (0.5, 1.5), (3.0, 3.0),
                           (0.2, 0.9, 0.4))
        shifted = MovingObject("disk", (12.0 + 3 * 0.5, 8.0 + 3 * 1.5),
                               (0.5, 1.5), (3.0, 3.0), (0.2, 0.9, 0.4))
        bg = np.full((3, 32 * data.SUPERSAMPLE, 32 * data.SUPERSAMPLE), 0.5)
        a = render_frame(bg, [obj], 3, (32, 32))
        b = render_frame(bg, [shifted], 0, (32, 32))
        assert float(np.max(np.abs(a - b))) < 2.0 / 255.0

    def test_impossible_placement_raises(self):
        # objects faster than the canvas can contain must fail loudly
        cfg = SynthConfig(canvas=(16, 16), velocity_range=(50.0, 60.0),
                          frames_per_group=12, seed=0, max_retries=20)
        with pytest.raises(RuntimeError, match="retries"):
            generate_group(cfg)


class TestSampler:
    @staticmethod
    def ramp_group(n=6, size=32):
        # every frame identical: pixel value encodes its (x, y) coordinate,
        # so equality across i0/it/i1 proves the augmentation was shared
        y, x = np.mgrid[0:size, 0:size]
        tag = ((x + size * y) / (size * size)).astype(np.float32)
        f = np.stack([tag, tag, tag])
        return FrameGroup([f.copy() for _ in range(n)], "ramp")

    def test_t_strictly_interior(self):
        g = generate_group(SynthConfig(canvas=(32, 32), seed=1, frames_per_group=12))
        rng = np.random.default_rng(0)
        for _ in range(500):
            s = sample(g, rng, crop=16)
            assert 0.0 < s.t < 1.0

    def test_crop_shapes(self):
        g = generate_group(SynthConfig(canvas=(32, 32), seed=2, frames_per_group=5))
        s = sample(g, np.random.default_rng(1), crop=16)
        assert s.i0.shape == s.i1.shape == s.it_gt.shape == (3, 16, 16)

    def test_crop_larger_than_frame(self):
        g = generate_group(SynthConfig(canvas=(16, 16), seed=3, frames_per_group=4))
        with pytest.raises(ValueError, match="crop"):
            sample(g, np.random.default_rng(0), crop=64)

    def test_augmentation_is_shared(self):
        g = self.ramp_group()
        rng = np.random.default_rng(4)
        for _ in range(50):
            s = sample(g, rng, crop=16)
            np.testing.assert_array_equal(s.i0, s.it_gt)
            np.testing.assert_array_equal(s.i0, s.i1)

    def test_no_crop_returns_full_frames(self):
        g = self.ramp_group()
        s = sample(g, np.random.default_rng(5), crop=None, flip=False)
        assert s.i0.shape == (3, 32, 32)

    def test_enumerated_distribution_properties(self):
        dist = enumerate_t_distribution(12)
        assert abs(sum(dist.values()) - 1.0) < 1e-12
        # keys mirror sampler float arithmetic exactly, so near-duplicates
        # like 2/3 vs 1.0-1/3 coexist; aggregate before checking symmetry
        merged: dict[float, float] = {}
        for t, w in dist.items():
            merged[round(t, 9)] = merged.get(round(t, 9), 0.0) + w
        for t, w in merged.items():
            assert merged[round(1.0 - t, 9)] == pytest.approx(w, abs=1e-12)
        assert 5 / 11 in dist and 6 / 11 in dist
        assert all(0.0 < t < 1.0 for t in dist)


class TestDatasetLayout:
    def test_write_load_round_trip(self, tmp_path):
        cfg = SynthConfig(canvas=(16, 16), seed=5, frames_per_group=3)
        groups = [generate_group(cfg, f"g{i:04d}") for i in range(2)]
        data.write_dataset(tmp_path / "ds", groups)
        assert (tmp_path / "ds" / "groups.txt").read_text() == "g0000\ng0001\n"
        loaded = data.load_dataset(tmp_path / "ds")
        assert [g.group_id for g in loaded] == ["g0000", "g0001"]
        for orig, back in zip(groups, loaded):
            for f1, f2 in zip(orig.frames, back.frames):
                assert float(np.max(np.abs(f1 - f2))) <= 0.5 / 255.0 + 1e-7

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="groups.txt"):
            data.load_dataset(tmp_path)

    def test_group_dir_mixed_sizes_rejected(self, tmp_path):
        gdir = tmp_path / "g0000"
        gdir.mkdir()
        save_ppm(np.zeros((3, 8, 8), np.float32), gdir / "00.ppm")
        save_ppm(np.zeros((3, 8, 8), np.float32), gdir / "01.ppm")
        save_ppm(np.zeros((3, 8, 9), np.float32), gdir / "02.ppm")
        with pytest.raises(ValueError, match="differs"):
            data.load_group_dir(gdir)


class TestResize:
    def test_shorter_side_hits_target(self):
        img = np.random.default_rng(0).uniform(0, 1, (3, 20, 30)).astype(np.float32)
        out = data.resize_shorter_side(img, target=10)
        assert out.shape == (3, 10, 15)

    def test_constant_image_unchanged(self):
        img = np.full((3, 12, 20), 0.25, np.float32)
        out = data.resize_shorter_side(img, target=6)
        np.testing.assert_allclose(out, 0.25, atol=1e-6)
