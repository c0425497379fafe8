import struct
import zlib

import numpy as np
import pytest
from PIL import Image as PILImage

from radsmith.core.errors import ArgumentError, DecodeError
from radsmith.services.imagecore import Image, load_image, resample, resize_matrix, save_image, to_bytes, to_luma


class TestImage:
    def test_rejects_bad_shapes(self):
        with pytest.raises(ArgumentError):
            Image(np.zeros((2, 4, 4)))
        with pytest.raises(ArgumentError):
            Image(np.zeros((4, 4)))

    def test_rejects_out_of_range_and_nan(self):
        with pytest.raises(ArgumentError):
            Image(np.full((1, 2, 2), 1.5))
        with pytest.raises(ArgumentError):
            Image(np.full((1, 2, 2), np.nan))

    def test_data_is_read_only_copy(self):
        source = np.zeros((1, 3, 3))
        img = Image(source)
        source[0, 0, 0] = 1.0
        assert img.data[0, 0, 0] == 0.0
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 0.5

    def test_from_array_clamps(self):
        img = Image.from_array(np.array([[-0.5, 0.5], [1.0, 2.0]]), clamp=True)
        assert img.data.shape == (1, 2, 2)
        np.testing.assert_array_equal(img.plane, [[0.0, 0.5], [1.0, 1.0]])

    def test_center_crop_to_multiple(self):
        img = Image(np.arange(70, dtype=float).reshape(1, 10, 7) / 70.0)
        cropped = img.center_crop_to_multiple(4)
        assert (cropped.height, cropped.width) == (8, 4)
        np.testing.assert_array_equal(cropped.data, img.data[:, 1:9, 1:5])

    def test_crop_out_of_bounds(self):
        with pytest.raises(ArgumentError):
            Image(np.zeros((1, 4, 4))).crop(2, 2, 3, 3)


class TestCodec:
    def test_eight_bit_png_round_trip_is_exact(self, tmp_path, rng):
        img = Image(to_bytes(Image(rng.random((1, 9, 7)))) / 255.0)
        save_image(img, tmp_path / "a.png")
        loaded = load_image(tmp_path / "a.png")
        np.testing.assert_array_equal(loaded.data, img.data)

    def test_sixteen_bit_png(self, tmp_path):
        samples = np.array([[0, 1000], [40000, 65535]], dtype=np.uint16)
        PILImage.fromarray(samples).save(tmp_path / "deep.png")
        loaded = load_image(tmp_path / "deep.png")
        np.testing.assert_allclose(loaded.plane, samples / 65535.0)

    def test_binary_pgm(self, tmp_path):
        pixels = bytes([0, 64, 128, 255, 10, 20])
        (tmp_path / "a.pgm").write_bytes(b"P5\n3 2\n255\n" + pixels)
        loaded = load_image(tmp_path / "a.pgm")
        assert loaded.data.shape == (1, 2, 3)
        np.testing.assert_allclose(loaded.plane.ravel(), np.frombuffer(pixels, dtype=np.uint8) / 255.0)

    def test_rgb_png_keeps_three_channels(self, tmp_path):
        rgb = np.zeros((2, 2, 3), dtype=np.uint8)
        rgb[0, 0] = (255, 255, 255)
        PILImage.fromarray(rgb).save(tmp_path / "rgb.png")
        loaded = load_image(tmp_path / "rgb.png")
        assert loaded.channels == 3
        luma = to_luma(loaded)
        assert luma.channels == 1
        assert luma.plane[0, 0] == pytest.approx(235.0 / 255.0)
        assert luma.plane[1, 1] == pytest.approx(16.0 / 255.0)

    @pytest.mark.parametrize("depth,color_type,row", [
        (16, 2, bytes(12)),  # 16-bit RGB, two pixels per row
        (2, 0, bytes(1)),  # 2-bit grayscale
    ])
    def test_unsupported_png_layouts(self, tmp_path, depth, color_type, row):
        def chunk(kind, body):
            return struct.pack(">I", len(body)) + kind + body + struct.pack(">I", zlib.crc32(kind + body))

        header = struct.pack(">IIBBBBB", 2, 2, depth, color_type, 0, 0, 0)
        pixels = zlib.compress((b"\x00" + row) * 2)
        png = b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", pixels) + chunk(b"IEND", b"")
        (tmp_path / "odd.png").write_bytes(png)
        with pytest.raises(DecodeError, match="bit depth"):
            load_image(tmp_path / "odd.png")

    def test_garbage_file_is_decode_error(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"not an image at all")
        with pytest.raises(DecodeError):
            load_image(tmp_path / "bad.png")

    def test_unsupported_format(self, tmp_path):
        PILImage.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(tmp_path / "a.bmp")
        with pytest.raises(DecodeError):
            load_image(tmp_path / "a.bmp")

    def test_to_bytes_rounds_to_nearest(self):
        img = Image(np.array([[[0.0, 0.4 / 255.0, 0.6 / 255.0, 1.0]]]))
        np.testing.assert_array_equal(to_bytes(img), [[[0, 0, 1, 255]]])


class TestResampling:
    @pytest.mark.parametrize("in_size,out_size", [(8, 16), (16, 8), (12, 3), (5, 20)])
    def test_rows_sum_to_one(self, in_size, out_size):
        matrix = resize_matrix(in_size, out_size)
        assert matrix.shape == (out_size, in_size)
        np.testing.assert_allclose(matrix.sum(axis=1), 1.0)

    def test_constant_is_preserved(self):
        out = resample(np.full((1, 6, 10), 0.3), 12, 20)
        np.testing.assert_allclose(out, 0.3)

    def test_invalid_sizes(self):
        with pytest.raises(ArgumentError):
            resize_matrix(0, 4)
