import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from textfuse import ColorImage, GrayImage, HeatMap, InstanceMap, InterestMask
from textfuse.imagery import merge_ycbcr, split_ycbcr, to_luminance, upscale_nearest
from textfuse import imgio

from oracles import mirror_index


class TestGrayImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            GrayImage(np.array([[0.0, 1.5]]))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            GrayImage(np.array([[0.0, np.nan]]))

    def test_immutable(self):
        img = GrayImage(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            img.data[0, 0] = 1.0

    def test_extent(self):
        img = GrayImage(np.zeros((3, 5)))
        assert (img.height, img.width) == (3, 5)


class TestLoadGray:
    def test_pgm_8bit_scaling(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5 2 2 255\n" + bytes([0, 255, 128, 64]))
        img = imgio.load_gray(p)
        assert img.data.ravel().tolist() == [0.0, 1.0, 128 / 255, 64 / 255]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="not found"):
            imgio.load_gray(tmp_path / "missing.png")

    def test_16bit_full_scale(self, tmp_path):
        p = tmp_path / "t16.png"
        Image.fromarray(np.array([[65535, 0]], dtype=np.uint16)).save(p)
        img = imgio.load_gray(p)
        assert img.data[0, 0] == 1.0
        assert img.data[0, 1] == 0.0

    def test_color_rejected(self, tmp_path):
        p = tmp_path / "c.png"
        Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(p)
        with pytest.raises(imgio.ImageFormatError, match="load_color"):
            imgio.load_gray(p)

    def test_corrupt_data(self, tmp_path):
        p = tmp_path / "bad.png"
        p.write_bytes(b"\x89PNG\r\n\x1a\nnot really a png")
        with pytest.raises(imgio.ImageFormatError, match="bad.png"):
            imgio.load_gray(p)

    def test_roundtrip_within_8bit_step(self, tmp_path):
        rng = np.random.default_rng(7)
        img = GrayImage(rng.uniform(0, 1, (9, 13)))
        p = tmp_path / "rt.png"
        imgio.save_gray(img, p)
        back = imgio.load_gray(p)
        assert np.max(np.abs(back.data - img.data)) <= 1.0 / 255.0
        imgio.save_gray(back, p)
        again = imgio.load_gray(p)
        assert np.array_equal(again.data, back.data)


class TestLuminance:
    def test_white(self):
        img = ColorImage(np.ones((1, 1, 3)))
        assert to_luminance(img).data[0, 0] == pytest.approx(1.0)

    def test_black(self):
        img = ColorImage(np.zeros((1, 1, 3)))
        assert to_luminance(img).data[0, 0] == 0.0

    def test_pure_red_bt601(self):
        img = ColorImage(np.array([[[1.0, 0.0, 0.0]]]))
        assert to_luminance(img).data[0, 0] == pytest.approx(0.299, abs=1e-12)

    def test_range_for_random_inputs(self):
        rng = np.random.default_rng(3)
        img = ColorImage(rng.uniform(0, 1, (8, 8, 3)))
        y = to_luminance(img).data
        assert y.min() >= 0.0 and y.max() <= 1.0

    def test_ycbcr_roundtrip(self):
        rng = np.random.default_rng(4)
        img = ColorImage(rng.uniform(0.1, 0.9, (6, 6, 3)))
        y, cb, cr = split_ycbcr(img)
        back = merge_ycbcr(y, cb, cr)
        assert np.allclose(back.data, img.data, atol=1e-12)


class TestUpscaleNearest:
    def test_one_to_four(self):
        m = upscale_nearest(HeatMap(np.array([[0.7]])), width=4, height=4)
        assert np.all(m.data == 0.7)

    def test_two_to_four_replication(self):
        src = HeatMap(np.array([[0.1, 0.2], [0.3, 0.4]]))
        m = upscale_nearest(src, width=4, height=4)
        expected = np.repeat(np.repeat(src.data, 2, axis=0), 2, axis=1)
        assert np.array_equal(m.data, expected)

    def test_non_integer_multiple_matches_index_rule(self):
        src = HeatMap(np.array([[0.1, 0.2], [0.3, 0.4]]))
        m = upscale_nearest(src, width=3, height=3)
        expected = np.zeros((3, 3))
        for y in range(3):
            for x in range(3):
                expected[y, x] = src.data[(y * 2) // 3, (x * 2) // 3]
        assert np.array_equal(m.data, expected)

    def test_zero_target_rejected(self):
        with pytest.raises(ValueError, match="zero-sized"):
            upscale_nearest(HeatMap(np.array([[0.5]])), width=0, height=4)

    @settings(max_examples=50, deadline=None)
    @given(
        st.integers(1, 4),
        st.integers(1, 4),
        st.integers(1, 9),
        st.integers(1, 9),
        st.integers(0, 10_000),
    )
    def test_never_introduces_new_values(self, sh, sw, th, tw, seed):
        rng = np.random.default_rng(seed)
        src = HeatMap(rng.uniform(0, 1, (sh, sw)))
        out = upscale_nearest(src, width=tw, height=th)
        assert set(out.data.ravel()) <= set(src.data.ravel())


class TestMasksAndInstances:
    def test_mask_rejects_non_binary(self):
        with pytest.raises(ValueError, match="binary"):
            InterestMask(np.array([[0, 2]]))

    def test_mask_png_roundtrip(self, tmp_path):
        mask = InterestMask(np.array([[1, 0], [0, 1]], dtype=np.uint8))
        p = tmp_path / "m.png"
        imgio.save_mask(mask, p)
        assert np.array_equal(imgio.load_mask(p).data, mask.data)
        raw = np.asarray(Image.open(p))
        assert set(raw.ravel()) <= {0, 255}

    def test_instance_map_requires_class_names(self):
        with pytest.raises(ValueError, match="without a class"):
            InstanceMap(np.array([[0, 3]]), {1: "car"})

    def test_instance_map_roundtrip(self, tmp_path):
        m = InstanceMap(np.array([[0, 1], [2, 2]]), {1: "car", 2: "person"})
        p = tmp_path / "inst.png"
        imgio.save_instance_map(m, p)
        back = imgio.load_instance_map(p)
        assert np.array_equal(back.labels, m.labels)
        assert dict(back.classes) == dict(m.classes)

    def test_instance_map_missing_sidecar(self, tmp_path):
        p = tmp_path / "inst.png"
        Image.fromarray(np.zeros((2, 2), dtype=np.uint16)).save(p)
        with pytest.raises(FileNotFoundError, match="sidecar"):
            imgio.load_instance_map(p)

    def test_support_of(self):
        m = InstanceMap(np.array([[1, 1], [0, 2]]), {1: "car", 2: "tree"})
        assert m.support_of(1).support == 2
        assert m.support_of(2).support == 1
        assert m.instance_ids() == [1, 2]


class TestFloatFormats:
    def test_pfm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        grid = rng.uniform(0, 1, (5, 7)).astype(np.float32).astype(np.float64)
        p = tmp_path / "h.pfm"
        imgio.write_pfm(grid, p)
        back, word = imgio.read_pfm(p)
        assert word is None
        assert np.allclose(back, grid, atol=1e-7)

    def test_heatmap_pfm_with_word(self, tmp_path):
        m = HeatMap(np.array([[0.25, 0.5]]), word="car")
        p = tmp_path / "car.ir.pfm"
        imgio.save_heatmap(m, p)
        back = imgio.load_heatmap(p)
        assert back.word == "car"
        assert np.allclose(back.data, m.data, atol=1e-7)

    def test_raw_grid_roundtrip(self, tmp_path):
        rng = np.random.default_rng(12)
        grid = rng.uniform(-2, 2, (3, 4, 5)).astype(np.float32).astype(np.float64)
        p = tmp_path / "fs.raw"
        imgio.save_raw_grid(grid, p)
        back, meta = imgio.load_raw_grid(p)
        assert meta["channels"] == 3
        assert np.allclose(back, grid, atol=1e-7)

    def test_raw_grid_size_mismatch(self, tmp_path):
        p = tmp_path / "g.raw"
        imgio.save_raw_grid(np.zeros((2, 2)), p)
        p.write_bytes(b"\x00" * 12)
        with pytest.raises(imgio.ImageFormatError, match="payload"):
            imgio.load_raw_grid(p)

    def test_heatmap_dir_scanning(self, tmp_path):
        imgio.save_heatmap(HeatMap(np.array([[0.9]]), word="car"), tmp_path / "car.ir.pfm")
        imgio.save_heatmap(HeatMap(np.array([[0.4]]), word="car"), tmp_path / "car.vis.pfm")
        imgio.save_heatmap(HeatMap(np.array([[0.2]]), word="tree"), tmp_path / "tree.ir.raw")
        found = imgio.load_heatmap_dir(tmp_path)
        assert set(found) == {"car", "tree"}
        assert set(found["car"]) == {"ir", "vis"}
        assert found["tree"]["ir"].data[0, 0] == pytest.approx(0.2, abs=1e-7)


def test_mirror_index_oracle_agrees_with_scipy_reflect():
    # anchor for every reflect-padded oracle below
    from scipy import ndimage

    rng = np.random.default_rng(5)
    grid = rng.uniform(0, 1, (6, 6))
    kernel = rng.uniform(-1, 1, (3, 3))
    ours = ndimage.correlate(grid, kernel, mode="reflect")
    h, w = grid.shape
    manual = np.zeros_like(grid)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(3):
                for dx in range(3):
                    acc += kernel[dy, dx] * grid[mirror_index(y + dy - 1, h), mirror_index(x + dx - 1, w)]
            manual[y, x] = acc
    assert np.allclose(ours, manual, atol=1e-12)
