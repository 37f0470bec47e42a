"""IDX datasets, model files and PGM image grids."""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import CpaBasis, build_crossed_tessellation
from .class_model import ClassModel
from .prior import PriorConfig

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MAX_IDX_BYTES = 1 << 40
MODEL_FORMAT_VERSION = 1


class IdxFormatError(ValueError):
    """Malformed IDX file."""


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxDimensionError(IdxFormatError):
    pass


class ModelFileError(ValueError):
    """Malformed or truncated model file."""


class ModelVersionError(ModelFileError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        images = np.asarray(self.images, dtype=float)
        labels = np.asarray(self.labels).astype(np.int64)
        if images.ndim != 3 or images.shape[1] == 0 or images.shape[2] == 0:
            raise ValueError(f"images must have shape (N, H, W) with H, W > 0, got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ValueError(f"expected {images.shape[0]} labels, got shape {labels.shape}")
        if np.any(labels < 0):
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.images[index], self.labels[index])


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _resolve(path) -> Path:
    path = Path(path)
    if not path.exists() and Path(f"{path}.gz").exists():
        return Path(f"{path}.gz")
    return path


def _parse_idx(raw: bytes, magic: int, ndim: int) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise IdxTruncatedError("file too short for an IDX magic number")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxMagicError(f"expected magic 0x{magic:08x}, found 0x{found:08x}")
    if len(raw) < header:
        raise IdxTruncatedError("file too short for the IDX dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    total = 1
    for n in dims:
        total *= n
    if total > MAX_IDX_BYTES:
        raise IdxDimensionError(f"declared dimensions {dims} exceed {MAX_IDX_BYTES} bytes")
    payload = raw[header:]
    if len(payload) < total:
        raise IdxTruncatedError(f"payload has {len(payload)} bytes, dimensions {dims} need {total}")
    if len(payload) > total:
        raise IdxFormatError(f"{len(payload) - total} trailing bytes after the payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """Read a 3-D unsigned-byte IDX file as float intensities in [0, 1]."""
    return _parse_idx(_read_bytes(_resolve(path)), IDX_IMAGES_MAGIC, 3) / 255.0


def read_idx_labels(path) -> np.ndarray:
    return _parse_idx(_read_bytes(_resolve(path)), IDX_LABELS_MAGIC, 1).astype(np.int64)


def read_dataset(images_path, labels_path) -> LabeledDataset:
    return LabeledDataset(read_idx_images(images_path), read_idx_labels(labels_path))


def quantize(images) -> np.ndarray:
    images = np.asarray(images, dtype=float)
    if np.any(images < 0.0) or np.any(images > 1.0):
        raise ValueError("intensities must lie in [0, 1]")
    return np.round(images * 255.0).astype(np.uint8)


def write_idx_images(images, path) -> None:
    images = getattr(images, "images", images)
    data = quantize(images)
    if data.ndim != 3:
        raise ValueError(f"images must have shape (N, H, W), got {data.shape}")
    Path(path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, *data.shape) + data.tobytes())


def write_idx_labels(labels, path) -> None:
    labels = np.asarray(getattr(labels, "labels", labels))
    if labels.ndim != 1 or np.any(labels < 0) or np.any(labels > 255):
        raise ValueError("labels must be a 1-D array of values in [0, 255]")
    data = labels.astype(np.uint8)
    Path(path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, len(data)) + data.tobytes())


@dataclass
class ModelState:
    """Everything needed to sample augmentations from a fitted run."""

    basis: CpaBasis
    prior_config: PriorConfig
    class_models: dict[int, ClassModel]
    config: dict = field(default_factory=dict)
    base_seed: int = 0
    version: int = MODEL_FORMAT_VERSION
    graph_indices: dict[int, np.ndarray] = field(default_factory=dict)


def write_model(state: ModelState, path) -> None:
    """Length-prefixed JSON header followed by little-endian float64 payloads.

    The header lists every array by name and shape, in payload order.
    """
    arrays = [("basis", state.basis.B)]
    classes = []
    for label in sorted(state.class_models):
        m = state.class_models[label]
        arrays.append((f"sigma/{label}", m.sigma))
        classes.append({"label": int(label), "n_samples": int(m.n_samples),
                        "shrinkage": float(m.shrinkage)})
    for label in sorted(state.graph_indices):
        # indices stay exact in float64 well past any dataset size
        arrays.append((f"graph/{label}", np.asarray(state.graph_indices[label], dtype=float)))
    header = {
        "version": MODEL_FORMAT_VERSION,
        "tessellation": {"nx": state.basis.tess.nx, "ny": state.basis.tess.ny},
        "prior": {"lengthscale": state.prior_config.lengthscale,
                  "amplitude": state.prior_config.amplitude},
        "classes": classes,
        "config": state.config,
        "base_seed": int(state.base_seed),
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_model(path) -> ModelState:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ModelFileError("model file too short for its header length")
    (n,) = struct.unpack("<Q", raw[:8])
    if len(raw) < 8 + n:
        raise ModelFileError("model file truncated inside its header")
    try:
        header = json.loads(raw[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"unreadable model header: {exc}") from exc
    if header.get("version") != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"model format version {header.get('version')!r}, expected {MODEL_FORMAT_VERSION}")

    offset = 8 + n
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape))
        if len(raw) < offset + nbytes:
            raise ModelFileError(f"model payload truncated in array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8,
                                             offset=offset).reshape(shape).astype(float)
        offset += nbytes
    if offset != len(raw):
        raise ModelFileError(f"{len(raw) - offset} unexpected trailing bytes in model file")

    tess = build_crossed_tessellation(header["tessellation"]["nx"], header["tessellation"]["ny"])
    B = arrays["basis"]
    if B.shape[0] != 6 * tess.n_triangles:
        raise ModelFileError(f"basis has {B.shape[0]} rows, tessellation needs {6 * tess.n_triangles}")
    B.setflags(write=False)
    basis = CpaBasis(tess, B)
    models = {}
    for c in header["classes"]:
        sigma = arrays[f"sigma/{c['label']}"]
        if sigma.shape != (basis.d, basis.d):
            raise ModelFileError(f"class {c['label']} covariance has shape {sigma.shape}")
        models[c["label"]] = ClassModel(c["label"], sigma, c["n_samples"], c["shrinkage"])
    graphs = {int(name.split("/", 1)[1]): a.astype(np.int64)
              for name, a in arrays.items() if name.startswith("graph/")}
    return ModelState(basis, PriorConfig(**header["prior"]), models,
                      header.get("config", {}), header.get("base_seed", 0), header["version"], graphs)


def write_image_grid(images, cols: int, path, comment: str | None = None) -> tuple[int, int]:
    """Tile images row-major into a binary PGM with 1-pixel white separators.

    ``comment`` goes into a single ``#`` header line. Returns the
    (height, width) of the written grid.
    """
    images = [np.asarray(im, dtype=float) for im in images]
    if not images:
        raise ValueError("need at least one image")
    if cols < 1:
        raise ValueError("cols must be positive")
    H, W = images[0].shape
    if any(im.shape != (H, W) for im in images):
        raise ValueError("all images must share one shape")
    cols = min(cols, len(images))
    rows = -(-len(images) // cols)
    grid = np.zeros((rows * (H + 1) - 1, cols * (W + 1) - 1), dtype=np.uint8)
    for r in range(1, rows):
        grid[r * (H + 1) - 1, :] = 255
    for c in range(1, cols):
        grid[:, c * (W + 1) - 1] = 255
    for k, im in enumerate(images):
        r, c = divmod(k, cols)
        grid[r * (H + 1):r * (H + 1) + H, c * (W + 1):c * (W + 1) + W] = quantize(np.clip(im, 0, 1))
    note = "" if comment is None else "# " + " ".join(comment.split()) + "\n"
    header = f"P5\n{note}{grid.shape[1]} {grid.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + grid.tobytes())
    return grid.shape


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5, maxval <= 255) PGM as intensities in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError("only binary P5 PGM files are supported")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError("16-bit PGM files are not supported")
    data = raw[pos + 1:pos + 1 + width * height]
    if len(data) != width * height:
        raise ValueError("truncated PGM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width) / float(maxval)
