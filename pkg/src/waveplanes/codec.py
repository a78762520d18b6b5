"""
Model compression and checkpoints

Hard-thresholds wavelet coefficients, stores each plane as a sorted sparse map
of (linear index, float32 value) entries and wraps the serialized container in
a lossless stream backend. Dense checkpoints (.wvck) use the same container
with the raw backend and threshold 0.

Container (all integers little-endian):
    b"WVPL" | backend id (u8) | backend-wrapped payload

Payload:
    version (u16) | header JSON length (u32) | header JSON
    | decoder array count (u16), per array: name length (u16), name,
      ndim (u8), dims (u32 each), float32 data
    | plane count (u8), per plane: name length (u8), name, total coefficient
      count (u32), entry count (u32), entries as (u32 index, f32 value) pairs
      sorted by index

Linear indices are channel-major over [father, mother1 H|V|D, ..., motherN H|V|D].
"""

import bz2
import gzip
import json
import logging
import lzma
import struct
from dataclasses import dataclass, field as dataclass_field
from enum import IntEnum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ModelConfig, RenderSettings
from .decoder import ColorBasisDecoder
from .errors import CodecError, CorruptModelError
from .field import PlaneId, WaveletField, active_planes, pyramid_shape
from .parallel import ordered_map
from .wavelets import CoefficientPyramid, PyramidShape, pyramid_size

logger = logging.getLogger(__name__)

MAGIC = b"WVPL"
FORMAT_VERSION = 1
DEFAULT_THRESHOLD = 0.1
ENTRY_DTYPE = np.dtype([("index", "<u4"), ("value", "<f4")])

COMPRESSED_SUFFIX = ".wvpl"
CHECKPOINT_SUFFIX = ".wvck"


class Backend(IntEnum):
    RAW = 0
    GZIP = 1
    BZIP2 = 2
    LZMA = 3

    @classmethod
    def parse(cls, value: Union[str, int, "Backend"]) -> "Backend":
        if isinstance(value, Backend):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise CodecError(f"Unknown backend '{value}', expected one of {BACKEND_NAMES}") from None
        try:
            return cls(value)
        except ValueError:
            raise CodecError(f"Unknown backend id {value}") from None


BACKEND_NAMES = tuple(b.name.lower() for b in Backend)


def _wrap(payload: bytes, backend: Backend) -> bytes:
    try:
        if backend is Backend.RAW:
            return payload
        if backend is Backend.GZIP:
            return gzip.compress(payload, compresslevel=9, mtime=0)
        if backend is Backend.BZIP2:
            return bz2.compress(payload, compresslevel=9)
        return lzma.compress(payload, preset=9)
    except (OSError, lzma.LZMAError, ValueError) as e:
        raise CodecError(f"{backend.name.lower()} compression failed: {e}") from e


def _unwrap(data: bytes, backend: Backend) -> bytes:
    try:
        if backend is Backend.RAW:
            return data
        if backend is Backend.GZIP:
            return gzip.decompress(data)
        if backend is Backend.BZIP2:
            return bz2.decompress(data)
        return lzma.decompress(data)
    except (OSError, EOFError, lzma.LZMAError, ValueError) as e:
        raise CorruptModelError(f"{backend.name.lower()} stream is corrupt: {e}") from e


@dataclass
class SparseCoeffMap:
    """Non-zero coefficients of one plane as sorted (index, value) arrays"""
    indices: np.ndarray
    values: np.ndarray
    total: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.uint32)
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise CorruptModelError("Sparse map index/value arrays differ in shape")
        if len(self.indices):
            if int(self.indices.max()) >= self.total:
                raise CorruptModelError(f"Sparse index {int(self.indices.max())} out of range for {self.total} coefficients")
            if np.any(np.diff(self.indices.astype(np.int64)) <= 0):
                raise CorruptModelError("Sparse indices are not strictly increasing")
        if np.any(self.values == 0):
            raise CorruptModelError("Sparse map stores a zero value")

    def __len__(self) -> int:
        return len(self.indices)

    def as_dict(self) -> Dict[int, float]:
        """Index -> value hash map"""
        return dict(zip(self.indices.tolist(), self.values.tolist()))

    def entries(self) -> np.ndarray:
        packed = np.empty(len(self), dtype=ENTRY_DTYPE)
        packed["index"] = self.indices
        packed["value"] = self.values
        return packed


def threshold_coeffs(field: WaveletField, tau: float) -> WaveletField:
    """
    Zero every coefficient with |v| < tau; values with |v| >= tau are kept unchanged

    Raises:
        ValueError: If tau is negative or not finite
    """
    if not np.isfinite(tau) or tau < 0:
        raise ValueError(f"Threshold must be finite and >= 0, got {tau}")

    def apply(array: np.ndarray) -> np.ndarray:
        drop = (np.abs(array) < tau) | (array == 0)
        return np.where(drop, np.zeros((), dtype=array.dtype), array).astype(array.dtype)

    return field.map_coefficients(apply)


def to_sparse(pyramid: CoefficientPyramid) -> SparseCoeffMap:
    flat = pyramid.flatten().astype(np.float32)
    indices = np.flatnonzero(flat)
    return SparseCoeffMap(indices=indices, values=flat[indices], total=flat.size)


def from_sparse(sparse: SparseCoeffMap, shape: PyramidShape, family: str = "haar") -> CoefficientPyramid:
    """
    Dense pyramid with unmentioned indices set to 0

    Raises:
        CorruptModelError: If the map's size or indices do not fit `shape`
    """
    total = pyramid_size(shape)
    if sparse.total != total:
        raise CorruptModelError(f"Sparse map covers {sparse.total} coefficients, shape needs {total}")
    if len(sparse) and int(sparse.indices.max()) >= total:
        raise CorruptModelError(f"Sparse index {int(sparse.indices.max())} out of range for {total} coefficients")
    flat = np.zeros(total, dtype=np.float32)
    flat[sparse.indices] = sparse.values
    return CoefficientPyramid.from_flat(flat, shape, family)


@dataclass
class PlaneReport:
    plane: str
    total: int
    entries: int
    father_total: int
    father_entries: int

    @property
    def mother_total(self) -> int:
        return self.total - self.father_total

    @property
    def mother_entries(self) -> int:
        return self.entries - self.father_entries

    @property
    def sparsity(self) -> float:
        """Fraction of zero coefficients"""
        return 1.0 - self.entries / self.total if self.total else 0.0

    def to_dict(self) -> Dict:
        return {
            "plane": self.plane,
            "total": self.total,
            "entries": self.entries,
            "father_entries": self.father_entries,
            "father_total": self.father_total,
            "mother_entries": self.mother_entries,
            "mother_total": self.mother_total,
            "sparsity": round(self.sparsity, 6),
        }


@dataclass
class CompressionReport:
    backend: str
    threshold: float
    payload_bytes: int
    compressed_bytes: int
    planes: List[PlaneReport] = dataclass_field(default_factory=list)

    @property
    def entries(self) -> int:
        return sum(p.entries for p in self.planes)

    def to_dict(self) -> Dict:
        return {
            "backend": self.backend,
            "threshold": self.threshold,
            "payload_bytes": self.payload_bytes,
            "compressed_bytes": self.compressed_bytes,
            "planes": [p.to_dict() for p in self.planes],
        }


@dataclass
class CompressedModel:
    data: bytes
    report: CompressionReport


class DecodedModel(NamedTuple):
    field: WaveletField
    decoder: ColorBasisDecoder
    config: ModelConfig
    settings: RenderSettings


def _plane_report(plane: PlaneId, sparse: SparseCoeffMap, shape: PyramidShape) -> PlaneReport:
    fh, fw = shape.father_shape()
    per_channel = sparse.total // shape.channels
    father_entries = int(np.count_nonzero(sparse.indices.astype(np.int64) % per_channel < fh * fw))
    return PlaneReport(
        plane=plane.value,
        total=sparse.total,
        entries=len(sparse),
        father_total=shape.channels * fh * fw,
        father_entries=father_entries,
    )


def _header(config: ModelConfig, settings: RenderSettings, tau: float) -> bytes:
    header = {
        "model": config.model_dump(mode="json"),
        "render": settings.model_dump(mode="json"),
        "threshold": tau,
        "planes": [p.value for p in active_planes(config)],
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _serialize(
    header: bytes,
    decoder: ColorBasisDecoder,
    planes: Sequence[Tuple[PlaneId, SparseCoeffMap]],
) -> bytes:
    parts = [struct.pack("<HI", FORMAT_VERSION, len(header)), header]

    arrays = list(decoder.named_parameters())
    parts.append(struct.pack("<H", len(arrays)))
    for name, array in arrays:
        encoded = name.split(".", 1)[1].encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())

    parts.append(struct.pack("<B", len(planes)))
    for plane, sparse in planes:
        encoded = plane.value.encode("utf-8")
        parts.append(struct.pack("<B", len(encoded)) + encoded)
        parts.append(struct.pack("<II", sparse.total, len(sparse)))
        parts.append(sparse.entries().tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, count: int) -> bytes:
        end = self.offset + count
        if end > len(self.data):
            raise CorruptModelError(f"Model payload truncated at byte {self.offset} (needed {count} more)")
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def compress_model(
    field: WaveletField,
    decoder: ColorBasisDecoder,
    tau: float = DEFAULT_THRESHOLD,
    backend: Union[str, Backend] = "lzma",
    settings: Optional[RenderSettings] = None,
    workers: int = 1,
) -> CompressedModel:
    """
    Threshold, sparsify and serialize a model

    Args:
        tau: Hard threshold (0 keeps every non-zero coefficient)
        backend: raw, gzip, bzip2 or lzma
        settings: Render settings stored in the header (defaults if None)
        workers: Planes sparsified in parallel; output order is fixed

    Raises:
        CodecError: On unknown backend or backend failure
    """
    backend = Backend.parse(backend)
    settings = settings or RenderSettings()
    config = field.config
    thresholded = threshold_coeffs(field, tau)
    planes = list(active_planes(config))
    sparse_maps = ordered_map(lambda p: to_sparse(thresholded.planes[p]), planes, workers)

    payload = _serialize(_header(config, settings, tau), decoder, list(zip(planes, sparse_maps)))
    data = MAGIC + struct.pack("<B", int(backend)) + _wrap(payload, backend)

    report = CompressionReport(
        backend=backend.name.lower(),
        threshold=tau,
        payload_bytes=len(payload),
        compressed_bytes=len(data),
        planes=[_plane_report(p, s, pyramid_shape(config, p)) for p, s in zip(planes, sparse_maps)],
    )
    logger.info(
        f"Compressed model: {report.entries} entries, {len(payload)} payload bytes -> "
        f"{len(data)} bytes ({report.backend}, tau={tau})"
    )
    return CompressedModel(data=data, report=report)


def _open_container(data: bytes) -> Tuple[Backend, _Reader, int]:
    if len(data) < len(MAGIC) + 1 or data[:len(MAGIC)] != MAGIC:
        raise CorruptModelError("Not a WavePlanes model (bad magic)")
    try:
        backend = Backend(data[len(MAGIC)])
    except ValueError:
        raise CorruptModelError(f"Unknown backend id {data[len(MAGIC)]}") from None
    reader = _Reader(_unwrap(data[len(MAGIC) + 1:], backend))
    version, header_length = reader.unpack("<HI")
    if version != FORMAT_VERSION:
        raise CorruptModelError(f"Unsupported format version {version}")
    return backend, reader, header_length


def _parse_header(reader: _Reader, header_length: int) -> Dict:
    try:
        return json.loads(reader.take(header_length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptModelError(f"Model header is not valid JSON: {e}") from e


def read_header(data: bytes) -> Dict:
    """Header JSON plus container facts (backend, version, sizes)"""
    backend, reader, header_length = _open_container(data)
    header = _parse_header(reader, header_length)
    header["backend"] = backend.name.lower()
    header["format_version"] = FORMAT_VERSION
    header["file_bytes"] = len(data)
    header["payload_bytes"] = len(reader.data)
    return header


def decompress_model(data: bytes) -> DecodedModel:
    """
    Rebuild the thresholded model

    Raises:
        CorruptModelError: On bad magic, unknown version, truncation or inconsistent content
    """
    _, reader, header_length = _open_container(data)
    header = _parse_header(reader, header_length)
    try:
        config = ModelConfig.model_validate(header["model"])
        settings = RenderSettings.model_validate(header["render"])
    except (KeyError, ValueError) as e:
        raise CorruptModelError(f"Model header is incomplete or invalid: {e}") from e

    (array_count,) = reader.unpack("<H")
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(array_count):
        (name_length,) = reader.unpack("<H")
        try:
            name = reader.take(name_length).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptModelError(f"Decoder array name is not valid UTF-8: {e}") from e
        (ndim,) = reader.unpack("<B")
        dims = reader.unpack(f"<{ndim}I")
        count = int(np.prod(dims)) if dims else 1
        arrays[name] = np.frombuffer(reader.take(4 * count), dtype="<f4").astype(np.float32).reshape(dims)

    layers = sum(1 for name in arrays if name.startswith("w"))
    try:
        decoder = ColorBasisDecoder(
            weights=[arrays[f"w{i}"] for i in range(layers)],
            biases=[arrays[f"b{i}"] for i in range(layers)],
            density_basis=arrays["density_basis"],
        )
    except (KeyError, ValueError) as e:
        raise CorruptModelError(f"Decoder parameters are incomplete: {e}") from e
    if decoder.feature_dim != config.fused_length:
        raise CorruptModelError(f"Decoder feature length {decoder.feature_dim} != model's {config.fused_length}")

    (plane_count,) = reader.unpack("<B")
    planes: Dict[PlaneId, CoefficientPyramid] = {}
    for _ in range(plane_count):
        (name_length,) = reader.unpack("<B")
        try:
            plane = PlaneId(reader.take(name_length).decode("utf-8"))
        except ValueError as e:
            raise CorruptModelError(f"Unknown plane in model: {e}") from e
        total, entry_count = reader.unpack("<II")
        entries = np.frombuffer(reader.take(entry_count * ENTRY_DTYPE.itemsize), dtype=ENTRY_DTYPE)
        sparse = SparseCoeffMap(indices=entries["index"], values=entries["value"], total=total)
        planes[plane] = from_sparse(sparse, pyramid_shape(config, plane), config.family)

    if reader.offset != len(reader.data):
        raise CorruptModelError(f"{len(reader.data) - reader.offset} trailing bytes after model payload")
    try:
        field = WaveletField(config=config, planes=planes)
    except ValueError as e:
        raise CorruptModelError(f"Model planes do not match its config: {e}") from e
    return DecodedModel(field=field, decoder=decoder, config=config, settings=settings)


def dense_size(field: WaveletField, decoder: ColorBasisDecoder) -> int:
    """Bytes of all parameters stored as dense float32"""
    return 4 * (field.coefficient_count + sum(a.size for _, a in decoder.named_parameters()))


def save_checkpoint(
    path: Union[str, Path],
    field: WaveletField,
    decoder: ColorBasisDecoder,
    settings: Optional[RenderSettings] = None,
) -> Path:
    """Write a lossless checkpoint (raw backend, threshold 0)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    model = compress_model(field, decoder, 0.0, Backend.RAW, settings)
    path.write_bytes(model.data)
    return path


def load_model(path: Union[str, Path]) -> DecodedModel:
    """Load a .wvck checkpoint or .wvpl compressed model"""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CodecError(f"Cannot read model file {path}: {e}") from e
    return decompress_model(data)


@dataclass
class BenchRow:
    backend: str
    bytes: int
    ratio: float

    def to_dict(self) -> Dict:
        return {"backend": self.backend, "bytes": self.bytes, "ratio": round(self.ratio, 3)}


def models_identical(a: DecodedModel, b: DecodedModel) -> bool:
    """True when both models hold bit-identical parameters and the same config"""
    if a.config != b.config:
        return False
    left = list(a.field.named_parameters()) + list(a.decoder.named_parameters())
    right = list(b.field.named_parameters()) + list(b.decoder.named_parameters())
    if [n for n, _ in left] != [n for n, _ in right]:
        return False
    return all(x.dtype == y.dtype and x.tobytes() == y.tobytes() for (_, x), (_, y) in zip(left, right))


def bench_codec(
    field: WaveletField,
    decoder: ColorBasisDecoder,
    tau: float = DEFAULT_THRESHOLD,
    backends: Sequence[Union[str, Backend]] = BACKEND_NAMES,
    settings: Optional[RenderSettings] = None,
) -> List[BenchRow]:
    """
    Compressed size per backend and its ratio to the raw container

    Raises:
        CodecError: If no backend is given or backends decode to different models
    """
    if not backends:
        raise CodecError("bench_codec needs at least one backend")
    raw = compress_model(field, decoder, tau, Backend.RAW, settings)
    reference = decompress_model(raw.data)
    rows = []
    for backend in backends:
        backend = Backend.parse(backend)
        model = raw if backend is Backend.RAW else compress_model(field, decoder, tau, backend, settings)
        if not models_identical(reference, decompress_model(model.data)):
            raise CodecError(f"Backend {backend.name.lower()} did not round-trip the model")
        rows.append(BenchRow(backend=backend.name.lower(), bytes=len(model.data), ratio=len(raw.data) / len(model.data)))
    return rows
