"""Image feature vectors.

Each image becomes one fixed-length, L2-normalized row of an
:class:`EmbeddingMatrix`, either through the deterministic built-in
descriptor or by importing externally computed vectors. The built-in
descriptor concatenates four blocks (92 dims total):

* 64-bin joint hue-saturation histogram (8 x 8, value-weighted, L1-normalized)
* 16 mean-luminance cells on a 4 x 4 grid
* 8-bin gradient-orientation histogram (Sobel, magnitude-weighted, L1-normalized)
* 4 deflate compression ratios of the luminance plane at 64^2 .. 8^2
"""

from __future__ import annotations

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as ds
from .raster import DecodeError, area_resize, load_rgb, luminance, rgb_to_hsv, to_uint8

log = logging.getLogger(__name__)

DESCRIPTOR_TAG = "baseline-92/1"
DESCRIPTOR_DIM = 92

HS_BINS = 8
LUMA_GRID = 4
GRAD_BINS = 8
COMPRESSION_SIZES = (64, 32, 16, 8)
ZLIB_LEVEL = 6
MIN_IMAGE_SIDE = 8

TEXT_MAGIC = "EMB1"
BINARY_MAGIC = "EMB1B"


class EmbeddingFormatError(Exception):
    """Malformed embedding file."""


class MissingEmbeddingError(Exception):
    """Dataset ids absent from an imported embedding file."""

    def __init__(self, missing_ids):
        self.missing_ids = list(missing_ids)
        super().__init__(f"embeddings missing for {len(self.missing_ids)} ids: "
                         f"{', '.join(self.missing_ids[:8])}")


@dataclass
class EmbeddingMatrix:
    """N x D matrix of L2-normalized feature rows, one per object id."""

    ids: list[str]
    data: np.ndarray  # (N, D) float32
    descriptor_tag: str

    def __post_init__(self):
        if len(self.ids) != len(set(self.ids)):
            raise ValueError("duplicate object ids in embedding matrix")
        if self.data.ndim != 2 or self.data.shape[0] != len(self.ids):
            raise ValueError(f"matrix shape {self.data.shape} does not match "
                             f"{len(self.ids)} ids")

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])


def hue_saturation_histogram(rgb: np.ndarray) -> np.ndarray:
    """Joint 8x8 hue-saturation histogram, value-weighted, L1-normalized.

    Hue covers [0, 360) in 8 equal bins and saturation [0, 1] in 8 equal
    bins; each pixel contributes its value (brightness) as weight, so
    near-black pixels whose hue is noise carry almost nothing.
    """
    hsv = rgb_to_hsv(rgb)
    h_bin = np.minimum((hsv[..., 0] * HS_BINS).astype(np.int64), HS_BINS - 1)
    s_bin = np.minimum((hsv[..., 1] * HS_BINS).astype(np.int64), HS_BINS - 1)
    flat = (h_bin * HS_BINS + s_bin).ravel()
    hist = np.bincount(flat, weights=hsv[..., 2].ravel(),
                       minlength=HS_BINS * HS_BINS)
    total = hist.sum()
    if total > 0.0:
        hist = hist / total
    return hist


def luminance_cells(luma: np.ndarray) -> np.ndarray:
    """Mean luminance over a 4x4 grid of cells (16 values in [0, 1])."""
    h, w = luma.shape
    cells = np.empty(LUMA_GRID * LUMA_GRID)
    for i in range(LUMA_GRID):
        r0, r1 = i * h // LUMA_GRID, (i + 1) * h // LUMA_GRID
        for j in range(LUMA_GRID):
            c0, c1 = j * w // LUMA_GRID, (j + 1) * w // LUMA_GRID
            cells[i * LUMA_GRID + j] = luma[r0:r1, c0:c1].mean()
    return cells


def gradient_histogram(luma: np.ndarray) -> np.ndarray:
    """8-bin histogram of Sobel gradient orientation, magnitude-weighted.

    Gradients are evaluated on interior pixels only (valid 3x3 support).
    A constant image produces the all-zero histogram; L1 normalization is
    skipped in that case.
    """
    p = luma
    # Sobel responses via shifted slices; rows grow downward.
    gx = ((p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:])
          - (p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2]))
    gy = ((p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:])
          - (p[:-2, :-2] + 2.0 * p[:-2, 1:-1] + p[:-2, 2:]))
    mag = np.hypot(gx, gy)
    theta = np.arctan2(gy, gx) % (2.0 * np.pi)
    bins = np.minimum((theta / (2.0 * np.pi / GRAD_BINS)).astype(np.int64),
                      GRAD_BINS - 1)
    hist = np.bincount(bins.ravel(), weights=mag.ravel(), minlength=GRAD_BINS)
    total = hist.sum()
    if total > 0.0:
        hist = hist / total
    return hist


def compression_ratios(luma: np.ndarray) -> np.ndarray:
    """Deflate ratio of the luminance plane at 64^2, 32^2, 16^2, 8^2."""
    ratios = np.empty(len(COMPRESSION_SIZES))
    for k, size in enumerate(COMPRESSION_SIZES):
        plane = to_uint8(area_resize(luma, (size, size)))
        raw = plane.tobytes()
        ratios[k] = len(zlib.compress(raw, ZLIB_LEVEL)) / len(raw)
    return ratios


def compute_baseline_descriptor(rgb: np.ndarray) -> np.ndarray:
    """Compute the 92-dim descriptor for a decoded RGB pixel grid.

    Deterministic: identical pixels yield bitwise-identical vectors. The
    result is L2-normalized (the compression block is always positive, so
    the norm never vanishes).
    """
    h, w = rgb.shape[:2]
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        raise ValueError(f"image too small for descriptor: {w}x{h}")
    luma = luminance(rgb)
    vec = np.concatenate([
        hue_saturation_histogram(rgb),
        luminance_cells(luma),
        gradient_histogram(luma),
        compression_ratios(luma),
    ])
    return vec / np.linalg.norm(vec)


def _normalize_rows(data: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(data, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise EmbeddingFormatError(f"zero-norm embedding row {bad}")
    return data / norms[:, None]


def _format_row(values: np.ndarray) -> str:
    return " ".join(f"{float(v):.9g}" for v in values)


def write_embeddings(path: str | Path, matrix: EmbeddingMatrix,
                     binary: bool = False) -> None:
    """Persist a matrix in the EMB1 text or EMB1B binary format."""
    path = Path(path)
    n, d = matrix.data.shape
    data = matrix.data.astype(np.float32)
    if binary:
        with open(path, "wb") as fh:
            fh.write(f"{BINARY_MAGIC} {n} {d} {matrix.descriptor_tag}\n".encode())
            for oid in matrix.ids:
                fh.write(oid.encode() + b"\n")
            fh.write(data.astype("<f4").tobytes())
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{TEXT_MAGIC} {n} {d} {matrix.descriptor_tag}\n")
            for oid, row in zip(matrix.ids, data):
                fh.write(f"{oid}\t{_format_row(row)}\n")


def _parse_header(line: str, path) -> tuple[str, int, int, str]:
    parts = line.rstrip("\n").split(" ", 3)
    if len(parts) < 3 or parts[0] not in (TEXT_MAGIC, BINARY_MAGIC):
        raise EmbeddingFormatError(f"{path}: bad header {line!r}")
    try:
        n, d = int(parts[1]), int(parts[2])
    except ValueError as exc:
        raise EmbeddingFormatError(f"{path}: bad header counts {line!r}") from exc
    tag = parts[3] if len(parts) > 3 else ""
    return parts[0], n, d, tag


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read an EMB1/EMB1B file; rows are returned exactly as stored."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.readline().decode("utf-8")
        magic, n, d, tag = _parse_header(header, path)
        if magic == BINARY_MAGIC:
            ids = [fh.readline().decode("utf-8").rstrip("\n") for _ in range(n)]
            blob = fh.read(n * d * 4)
            if len(blob) != n * d * 4:
                raise EmbeddingFormatError(f"{path}: truncated binary payload")
            data = np.frombuffer(blob, dtype="<f4").reshape(n, d).astype(np.float32)
        else:
            ids = []
            rows = np.empty((n, d), dtype=np.float32)
            for i in range(n):
                line = fh.readline().decode("utf-8")
                if not line:
                    raise EmbeddingFormatError(f"{path}: expected {n} rows, got {i}")
                oid, _, rest = line.rstrip("\n").partition("\t")
                vals = rest.split()
                if len(vals) != d:
                    raise EmbeddingFormatError(
                        f"{path}: row {i} has {len(vals)} values, expected {d}")
                try:
                    rows[i] = [float(v) for v in vals]
                except ValueError as exc:
                    raise EmbeddingFormatError(f"{path}: row {i} not numeric") from exc
                ids.append(oid)
            data = rows
    for i in range(n):
        if not np.all(np.isfinite(data[i])):
            raise EmbeddingFormatError(f"{path}: non-finite value in row {i}")
    return EmbeddingMatrix(ids=ids, data=data, descriptor_tag=tag)


def import_embeddings(path: str | Path, ids: list[str]) -> EmbeddingMatrix:
    """Load an embedding file and align its rows to the dataset id order.

    Rows are re-ordered to ``ids`` and L2-normalized. Ids present in the
    dataset but absent from the file raise :class:`MissingEmbeddingError`
    naming them; extra rows in the file are dropped.
    """
    raw = read_embeddings(path)
    by_id = {oid: i for i, oid in enumerate(raw.ids)}
    missing = [oid for oid in ids if oid not in by_id]
    if missing:
        raise MissingEmbeddingError(missing)
    order = [by_id[oid] for oid in ids]
    data = _normalize_rows(raw.data[order].astype(np.float64)).astype(np.float32)
    return EmbeddingMatrix(ids=list(ids), data=data, descriptor_tag=raw.descriptor_tag)


def embed_dataset(dataset_dir: str | Path, mode: str, out: str | Path,
                  import_file: str | Path | None = None,
                  binary: bool = False, workers: int = 1) -> EmbeddingMatrix:
    """Embed every decodable image of a dataset and persist the matrix.

    ``mode`` is ``"baseline"`` (built-in descriptor) or ``"import"``.
    Objects whose image fails to decode are excluded and listed in a skip
    log next to ``out``. Raises ``RuntimeError`` if nothing is decodable.
    """
    dataset_dir = Path(dataset_dir)
    out = Path(out)
    entries = ds.read_index(dataset_dir)
    ids = [e.object_id for e in entries]

    if mode == "import":
        if import_file is None:
            raise ValueError("import mode requires an embedding file")
        matrix = import_embeddings(import_file, ids)
        write_embeddings(out, matrix, binary=binary)
        return matrix
    if mode != "baseline":
        raise ValueError(f"unknown embed mode {mode!r}")

    def one(entry):
        if not entry.image_rel:
            return entry.object_id, None, "no image"
        try:
            rgb = load_rgb(dataset_dir / entry.image_rel)
            return entry.object_id, compute_baseline_descriptor(rgb), ""
        except (DecodeError, ValueError) as exc:
            return entry.object_id, None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, entries))
    else:
        results = [one(e) for e in entries]

    kept_ids, rows, skipped = [], [], []
    for oid, vec, reason in results:
        if vec is None:
            skipped.append((oid, reason))
        else:
            kept_ids.append(oid)
            rows.append(vec)

    skip_log = out.with_name(out.name + ".skipped")
    if skipped:
        with open(skip_log, "w", encoding="utf-8") as fh:
            for oid, reason in skipped:
                fh.write(f"{oid}\t{reason}\n")
        log.warning("embed: skipped %d undecodable objects (see %s)",
                    len(skipped), skip_log)
    elif skip_log.exists():
        skip_log.unlink()

    if not rows:
        raise RuntimeError("no decodable images in dataset")

    matrix = EmbeddingMatrix(ids=kept_ids,
                             data=np.array(rows, dtype=np.float32),
                             descriptor_tag=DESCRIPTOR_TAG)
    write_embeddings(out, matrix, binary=binary)
    return matrix
