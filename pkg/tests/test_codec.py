import struct
import tempfile
import unittest
from pathlib import Path

import numpy as np

from waveplanes.codec import (
    BACKEND_NAMES,
    Backend,
    SparseCoeffMap,
    bench_codec,
    compress_model,
    decompress_model,
    dense_size,
    from_sparse,
    load_model,
    models_identical,
    read_header,
    save_checkpoint,
    threshold_coeffs,
    to_sparse,
)
from waveplanes.config import ModelConfig, RenderSettings
from waveplanes.decoder import ColorBasisDecoder
from waveplanes.errors import CodecError, CorruptModelError
from waveplanes.field import PlaneId, TIME_PLANES, WaveletField
from waveplanes.render import Camera, look_at, render_image
from waveplanes.wavelets import CoefficientPyramid, PyramidShape


def trained_like_model(seed: int = 0, static_mode: bool = False):
    """Random coefficients at several magnitudes, like a partly trained field"""
    config = ModelConfig(features=4, levels=2, spatial_res=(16, 16), time_res=8, decoder_width=16, static_mode=static_mode)
    rng = np.random.default_rng(seed)
    field = WaveletField.zeros(config).map_coefficients(
        lambda a: (rng.normal(0.0, 0.1, size=a.shape) * (rng.random(a.shape) < 0.5)).astype(np.float32)
    )
    decoder = ColorBasisDecoder.initialize(config.fused_length, layers=3, width=16, seed=seed)
    return field, decoder


class TestThreshold(unittest.TestCase):
    def test_keeps_values_at_threshold(self) -> None:
        field, _ = trained_like_model()
        plane = field.planes[PlaneId.XY]
        plane.father[0, 0, 0] = 0.1
        plane.father[0, 0, 1] = -0.0999
        out = threshold_coeffs(field, 0.1)
        self.assertEqual(out.planes[PlaneId.XY].father[0, 0, 0], np.float32(0.1))
        self.assertEqual(out.planes[PlaneId.XY].father[0, 0, 1], 0.0)

    def test_does_not_modify_input(self) -> None:
        field, _ = trained_like_model()
        before = field.copy()
        threshold_coeffs(field, 1.0)
        for (_, a), (_, b) in zip(field.named_parameters(), before.named_parameters()):
            np.testing.assert_array_equal(a, b)

    def test_negative_threshold(self) -> None:
        field, _ = trained_like_model()
        with self.assertRaises(ValueError):
            threshold_coeffs(field, -0.1)


class TestSparseMaps(unittest.TestCase):
    def test_round_trip(self) -> None:
        shape = PyramidShape(2, 8, 8, 2)
        flat = np.zeros(128, dtype=np.float32)
        flat[[0, 5, 77, 127]] = [1.0, -2.0, 0.5, 3.0]
        pyr = CoefficientPyramid.from_flat(flat, shape)
        sparse = to_sparse(pyr)
        self.assertEqual(sparse.indices.tolist(), [0, 5, 77, 127])
        self.assertEqual(sparse.as_dict(), {0: 1.0, 5: -2.0, 77: 0.5, 127: 3.0})
        np.testing.assert_array_equal(from_sparse(sparse, shape).flatten(), flat)

    def test_empty_map_is_zero_pyramid(self) -> None:
        shape = PyramidShape(1, 8, 8, 1)
        pyr = from_sparse(SparseCoeffMap(indices=[], values=[], total=64), shape)
        self.assertTrue(np.all(pyr.flatten() == 0))

    def test_invalid_maps(self) -> None:
        with self.assertRaises(CorruptModelError):
            SparseCoeffMap(indices=[3, 1], values=[1.0, 2.0], total=8)
        with self.assertRaises(CorruptModelError):
            SparseCoeffMap(indices=[8], values=[1.0], total=8)
        with self.assertRaises(CorruptModelError):
            SparseCoeffMap(indices=[1], values=[0.0], total=8)
        with self.assertRaises(CorruptModelError):
            from_sparse(SparseCoeffMap(indices=[1], values=[1.0], total=32), PyramidShape(1, 8, 8, 1))


class TestCompression(unittest.TestCase):
    def setUp(self) -> None:
        self.field, self.decoder = trained_like_model()

    def test_round_trip_is_bit_exact(self) -> None:
        for tau in (0.0, 0.01, 0.1):
            for backend in BACKEND_NAMES:
                first = decompress_model(compress_model(self.field, self.decoder, tau, backend).data)
                second = decompress_model(compress_model(first.field, first.decoder, tau, backend).data)
                self.assertTrue(models_identical(first, second), f"tau={tau} {backend}")
                expected = threshold_coeffs(self.field, tau)
                for (name, a), (_, b) in zip(first.field.named_parameters(), expected.named_parameters()):
                    np.testing.assert_array_equal(a, b, err_msg=f"{name} tau={tau} {backend}")

    def test_lossless_at_zero_threshold(self) -> None:
        model = decompress_model(compress_model(self.field, self.decoder, 0.0, "raw").data)
        for (_, a), (_, b) in zip(model.field.named_parameters(), self.field.named_parameters()):
            np.testing.assert_array_equal(a, b)
        for (_, a), (_, b) in zip(model.decoder.named_parameters(), self.decoder.named_parameters()):
            np.testing.assert_array_equal(a, b)
        self.assertEqual(model.config, self.field.config)

    def test_render_survives_round_trip(self) -> None:
        settings = RenderSettings(samples_per_ray=8)
        compressed = compress_model(self.field, self.decoder, 0.01, "lzma", settings)
        model = decompress_model(compressed.data)
        self.assertEqual(model.settings, settings)
        reference = threshold_coeffs(self.field, 0.01)
        cam = Camera.from_fov(look_at((0.0, -4.0, 1.0)), 0.6, 8, 8)
        a, _ = render_image(reference, None, self.decoder, cam, 0.4, settings, workers=1)
        b, _ = render_image(model.field, None, model.decoder, cam, 0.4, settings, workers=1)
        np.testing.assert_array_equal(a, b)

    def test_static_model(self) -> None:
        field, decoder = trained_like_model(static_mode=True)
        model = decompress_model(compress_model(field, decoder, 0.0).data)
        self.assertTrue(model.config.static_mode)
        self.assertEqual(set(model.field.planes), set(field.planes))

    def test_report(self) -> None:
        compressed = compress_model(self.field, self.decoder, 0.05, "gzip")
        report = compressed.report
        self.assertEqual([p.plane for p in report.planes], ["xy", "xz", "yz", "xt", "yt", "zt"])
        thresholded = threshold_coeffs(self.field, 0.05)
        for plane_report in report.planes:
            pyr = thresholded.planes[PlaneId(plane_report.plane)]
            self.assertEqual(plane_report.total, pyr.size)
            self.assertEqual(plane_report.entries, int(np.count_nonzero(pyr.flatten())))
            self.assertEqual(plane_report.father_entries, int(np.count_nonzero(pyr.father)))
            self.assertEqual(plane_report.father_total, pyr.father.size)
        self.assertEqual(report.compressed_bytes, len(compressed.data))
        self.assertEqual(report.to_dict()["backend"], "gzip")

    def test_header(self) -> None:
        data = compress_model(self.field, self.decoder, 0.1, "bzip2").data
        header = read_header(data)
        self.assertEqual(header["backend"], "bzip2")
        self.assertEqual(header["threshold"], 0.1)
        self.assertEqual(header["planes"], ["xy", "xz", "yz", "xt", "yt", "zt"])
        self.assertEqual(header["model"]["features"], 4)
        self.assertEqual(header["file_bytes"], len(data))

    def test_unknown_backend(self) -> None:
        with self.assertRaises(CodecError):
            compress_model(self.field, self.decoder, 0.1, "zip")
        self.assertIs(Backend.parse("LZMA"), Backend.LZMA)
        self.assertIs(Backend.parse(1), Backend.GZIP)


class TestCorruptInput(unittest.TestCase):
    def setUp(self) -> None:
        self.field, decoder = trained_like_model()
        self.raw = compress_model(self.field, decoder, 0.05, "raw").data
        self.lzma = compress_model(self.field, decoder, 0.05, "lzma").data

    def test_bad_magic(self) -> None:
        with self.assertRaises(CorruptModelError):
            decompress_model(b"NOPE" + self.raw[4:])
        with self.assertRaises(CorruptModelError):
            decompress_model(b"")

    def test_unknown_backend_id(self) -> None:
        with self.assertRaises(CorruptModelError):
            decompress_model(self.raw[:4] + bytes([9]) + self.raw[5:])

    def test_truncated(self) -> None:
        for cut in (6, 20, len(self.raw) // 2, len(self.raw) - 1):
            with self.assertRaises(CorruptModelError, msg=f"cut={cut}"):
                decompress_model(self.raw[:cut])
        with self.assertRaises(CorruptModelError):
            decompress_model(self.lzma[: len(self.lzma) // 2])

    def test_trailing_bytes(self) -> None:
        with self.assertRaises(CorruptModelError):
            decompress_model(self.raw + b"\x00")

    def test_corrupt_header(self) -> None:
        data = bytearray(self.raw)
        data[11] = 0xFF
        with self.assertRaises(CorruptModelError):
            decompress_model(bytes(data))

    def decoder_offset(self) -> int:
        (header_length,) = struct.unpack("<I", self.raw[7:11])
        return 11 + header_length

    def test_decoder_array_name_not_utf8(self) -> None:
        data = bytearray(self.raw)
        name_start = self.decoder_offset() + 4
        self.assertEqual(bytes(data[name_start:name_start + 2]), b"w0")
        data[name_start:name_start + 2] = b"\xff\xfe"
        with self.assertRaises(CorruptModelError):
            decompress_model(bytes(data))

    def test_decoder_without_weight_matrices(self) -> None:
        features = self.field.config.fused_length
        payload = (
            self.raw[5:self.decoder_offset()]
            + struct.pack("<H", 1)
            + struct.pack("<H", len(b"density_basis")) + b"density_basis"
            + struct.pack("<BI", 1, features)
            + np.zeros(features, dtype="<f4").tobytes()
            + struct.pack("<B", 0)
        )
        with self.assertRaises(CorruptModelError):
            decompress_model(self.raw[:5] + payload)


class TestCheckpointsAndBench(unittest.TestCase):
    def setUp(self) -> None:
        self.field, self.decoder = trained_like_model()

    def test_checkpoint_round_trip(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(Path(tmp) / "nested" / "model.wvck", self.field, self.decoder)
            model = load_model(path)
            self.assertEqual(read_header(path.read_bytes())["backend"], "raw")
        for (_, a), (_, b) in zip(model.field.named_parameters(), self.field.named_parameters()):
            np.testing.assert_array_equal(a, b)

    def test_load_missing_file(self) -> None:
        with self.assertRaises(CodecError):
            load_model("/nonexistent/model.wvck")

    def test_bench(self) -> None:
        rows = bench_codec(self.field, self.decoder, 0.1)
        self.assertEqual([row.backend for row in rows], list(BACKEND_NAMES))
        sizes = {row.backend: row.bytes for row in rows}
        self.assertEqual(rows[0].ratio, 1.0)
        self.assertLessEqual(sizes["lzma"], sizes["gzip"] * 1.05)
        with self.assertRaises(CodecError):
            bench_codec(self.field, self.decoder, 0.1, backends=[])

    def test_sparse_field_compresses_well(self) -> None:
        config = ModelConfig(features=8, levels=2, spatial_res=(32, 32), time_res=16, decoder_width=8)
        rng = np.random.default_rng(1)
        field = WaveletField.zeros(config).map_coefficients(
            lambda a: (rng.normal(0.0, 1.0, size=a.shape) * (rng.random(a.shape) < 0.02)).astype(np.float32)
        )
        field = field.map_coefficients(np.zeros_like, planes=TIME_PLANES)
        decoder = ColorBasisDecoder.initialize(config.fused_length, layers=3, width=8)
        compressed = compress_model(field, decoder, 0.0, "lzma")
        self.assertGreaterEqual(dense_size(field, decoder) / len(compressed.data), 5.0)


if __name__ == "__main__":
    unittest.main()
