"""Explorable atlas over a 2-D layout.

Builds a quadtree spatial index, a farthest-point sample ordering (the
representative subset drawn as thumbnails; everything else renders as
circles), per-zoom tiles with packed sprite sheets, and answers exact
viewport queries. Per-zoom sample sets are prefixes of one greedy
ordering, so zooming in only ever adds thumbnails.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import dataset as ds
from .layout import Layout2D
from .raster import DecodeError, area_resize, center_crop_square, halve, load_rgb, to_uint8

log = logging.getLogger(__name__)

DEFAULT_LEAF_CAPACITY = 64
DEFAULT_ZOOM_LEVELS = 6
DEFAULT_BASE_BUDGET = 256
MAX_THUMB_SIZE = 256
MAX_TREE_DEPTH = 32

MANIFEST_FILE = "manifest.tsv"
TILES_DIR = "tiles"


@dataclass
class _Node:
    x0: float
    y0: float
    x1: float
    y1: float
    children: list["_Node"] | None = None
    points: np.ndarray | None = None  # leaf: indices into the layout

    @property
    def is_leaf(self) -> bool:
        return self.children is None


class SpatialIndex:
    """Quadtree over layout bounds; every point lives in exactly one leaf."""

    def __init__(self, coords: np.ndarray, leaf_capacity: int = DEFAULT_LEAF_CAPACITY):
        coords = np.asarray(coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[0] == 0:
            raise ValueError("spatial index needs a non-empty (n, 2) array")
        if leaf_capacity < 1:
            raise ValueError("leaf_capacity must be >= 1")
        self.coords = coords
        self.leaf_capacity = leaf_capacity
        x0, y0 = coords.min(axis=0)
        x1, y1 = coords.max(axis=0)
        self.root = self._build(np.arange(coords.shape[0], dtype=np.int64),
                                float(x0), float(y0), float(x1), float(y1), 0)

    def _build(self, idx, x0, y0, x1, y1, depth) -> _Node:
        if idx.size <= self.leaf_capacity or depth >= MAX_TREE_DEPTH:
            return _Node(x0, y0, x1, y1, points=idx)
        cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        xs, ys = self.coords[idx, 0], self.coords[idx, 1]
        right, top = xs >= cx, ys >= cy
        quads = [
            (idx[~right & ~top], x0, y0, cx, cy),
            (idx[right & ~top], cx, y0, x1, cy),
            (idx[~right & top], x0, cy, cx, y1),
            (idx[right & top], cx, cy, x1, y1),
        ]
        children = [self._build(q, qx0, qy0, qx1, qy1, depth + 1)
                    for q, qx0, qy0, qx1, qy1 in quads]
        return _Node(x0, y0, x1, y1, children=children)

    def depth(self) -> int:
        def walk(node):
            if node.is_leaf:
                return 0
            return 1 + max(walk(c) for c in node.children)
        return walk(self.root)

    def query(self, rect: tuple[float, float, float, float]) -> np.ndarray:
        """Indices of all points inside the closed rectangle (x0, y0, x1, y1)."""
        qx0, qy0, qx1, qy1 = rect
        out: list[np.ndarray] = []

        def visit(node):
            if node.x1 < qx0 or node.x0 > qx1 or node.y1 < qy0 or node.y0 > qy1:
                return
            if node.is_leaf:
                if node.points.size:
                    xs = self.coords[node.points, 0]
                    ys = self.coords[node.points, 1]
                    hit = (xs >= qx0) & (xs <= qx1) & (ys >= qy0) & (ys <= qy1)
                    out.append(node.points[hit])
                return
            for child in node.children:
                visit(child)

        visit(self.root)
        if not out:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(out))


def build_index(layout: Layout2D,
                leaf_capacity: int = DEFAULT_LEAF_CAPACITY) -> SpatialIndex:
    if len(layout.ids) == 0:
        raise ValueError("empty layout")
    return SpatialIndex(layout.coords, leaf_capacity=leaf_capacity)


@dataclass
class SampleSet:
    """Ordered representative subset with its separation radius."""

    sample_ids: list[str]
    radius: float


def farthest_point_order(coords: np.ndarray, budget: int
                         ) -> tuple[np.ndarray, float]:
    """Greedy farthest-point ordering of up to ``budget`` point indices.

    Starts at the point nearest the centroid, then repeatedly adds the
    point with the largest minimum distance to the chosen set. Ties go to
    the lower index. Returns (order, radius) where radius is the last
    added point's min-distance (0.0 when budget > n).
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if budget < 1:
        raise ValueError("budget must be >= 1")
    take = min(budget, n)
    centroid = coords.mean(axis=0)
    start = int(np.argmin(np.linalg.norm(coords - centroid, axis=1)))
    order = np.empty(take, dtype=np.int64)
    order[0] = start
    mind = np.linalg.norm(coords - coords[start], axis=1)
    radius = 0.0
    for step in range(1, take):
        nxt = int(np.argmax(mind))
        radius = float(mind[nxt])
        order[step] = nxt
        np.minimum(mind, np.linalg.norm(coords - coords[nxt], axis=1), out=mind)
    if budget > n:
        radius = 0.0
    return order, radius


def select_samples(layout: Layout2D, budget: int) -> SampleSet:
    order, radius = farthest_point_order(layout.coords, budget)
    return SampleSet(sample_ids=[layout.ids[i] for i in order], radius=radius)


def zoom_budget(n: int, zoom: int, base_budget: int) -> int:
    return min(n, base_budget * 4 ** zoom)


def thumb_size(zoom: int, zoom_levels: int) -> int:
    return MAX_THUMB_SIZE >> (zoom_levels - 1 - zoom)


@dataclass
class Atlas:
    """In-memory view of a built atlas: layout + index + per-zoom samples."""

    ids: list[str]
    coords: np.ndarray
    index: SpatialIndex
    zoom_levels: int
    base_budget: int
    sample_flags: dict[int, np.ndarray] = field(default_factory=dict)

    def sampled_at(self, zoom: int) -> np.ndarray:
        if zoom not in self.sample_flags:
            raise KeyError(f"zoom {zoom} out of range")
        return self.sample_flags[zoom]


def build_atlas_state(layout: Layout2D, index: SpatialIndex,
                      sample_order: np.ndarray, zoom_levels: int,
                      base_budget: int,
                      demoted: set[int] | None = None) -> Atlas:
    n = len(layout.ids)
    atlas = Atlas(ids=list(layout.ids), coords=layout.coords, index=index,
                  zoom_levels=zoom_levels, base_budget=base_budget)
    for z in range(zoom_levels):
        flags = np.zeros(n, dtype=bool)
        flags[sample_order[:zoom_budget(n, z, base_budget)]] = True
        if demoted:
            flags[list(demoted)] = False
        atlas.sample_flags[z] = flags
    return atlas


def query_viewport(atlas: Atlas, rect: tuple[float, float, float, float],
                   zoom: int) -> tuple[list[tuple[str, float, float]],
                                       list[tuple[float, float]]]:
    """All points inside ``rect``, split into sampled-at-zoom and circles."""
    flags = atlas.sampled_at(zoom)
    hits = atlas.index.query(rect)
    samples = [(atlas.ids[i], float(atlas.coords[i, 0]), float(atlas.coords[i, 1]))
               for i in hits if flags[i]]
    circles = [(float(atlas.coords[i, 0]), float(atlas.coords[i, 1]))
               for i in hits if not flags[i]]
    return samples, circles


@dataclass
class TileRecord:
    zoom: int
    tx: int
    ty: int
    member_count: int
    sample_count: int
    sprite_file: str  # "-" when the tile has no sampled members


@dataclass
class TileManifest:
    zoom_levels: int
    base_budget: int
    tiles: list[TileRecord]


def tile_of(coords: np.ndarray, bounds, zoom: int) -> np.ndarray:
    """(tx, ty) tile coordinates of each point at a zoom level."""
    x0, y0, x1, y1 = bounds
    grid = 2 ** zoom
    w = x1 - x0
    h = y1 - y0
    tx = np.zeros(coords.shape[0], dtype=np.int64) if w <= 0 else np.minimum(
        ((coords[:, 0] - x0) / w * grid).astype(np.int64), grid - 1)
    ty = np.zeros(coords.shape[0], dtype=np.int64) if h <= 0 else np.minimum(
        ((coords[:, 1] - y0) / h * grid).astype(np.int64), grid - 1)
    return np.stack([tx, ty], axis=1)


class _ThumbCache:
    """Per-object square thumbnails, 256px base halved down per zoom."""

    def __init__(self, dataset_dir: Path):
        self.dataset_dir = dataset_dir
        self.images = {e.object_id: e.image_rel for e in ds.read_index(dataset_dir)}
        self.pyramids: dict[str, dict[int, np.ndarray] | None] = {}

    def get(self, object_id: str, size: int) -> np.ndarray | None:
        pyramid = self.pyramids.get(object_id, ())
        if pyramid == ():
            rel = self.images.get(object_id, "")
            if not rel:
                pyramid = None
            else:
                try:
                    rgb = center_crop_square(load_rgb(self.dataset_dir / rel))
                    base = area_resize(rgb, (MAX_THUMB_SIZE, MAX_THUMB_SIZE))
                    pyramid = {MAX_THUMB_SIZE: base}
                    while min(pyramid) > 1:
                        smallest = pyramid[min(pyramid)]
                        pyramid[min(pyramid) // 2] = halve(smallest)
                except DecodeError as exc:
                    log.warning("thumbnail for %s failed: %s", object_id, exc)
                    pyramid = None
            self.pyramids[object_id] = pyramid
        if pyramid is None:
            return None
        return pyramid[size]


def _write_sprite(path: Path, thumbs: list[tuple[str, np.ndarray]], size: int
                  ) -> dict[str, tuple[int, int, int, int]]:
    cols = int(np.ceil(np.sqrt(len(thumbs))))
    rows = int(np.ceil(len(thumbs) / cols))
    sheet = np.zeros((rows * size, cols * size, 3), dtype=np.uint8)
    rects = {}
    for i, (oid, thumb) in enumerate(thumbs):
        r, c = divmod(i, cols)
        sheet[r * size:(r + 1) * size, c * size:(c + 1) * size] = to_uint8(thumb)
        rects[oid] = (c * size, r * size, size, size)
    Image.fromarray(sheet, mode="RGB").save(path, format="PNG")
    return rects


def build_tiles(layout: Layout2D, index: SpatialIndex,
                sample_order: np.ndarray, dataset_dir: str | Path,
                zoom_levels: int, base_budget: int,
                out: str | Path) -> TileManifest:
    """Bake the per-zoom tile tree: .pts point lists, sprite sheets, manifest.

    At zoom z the bounds split into 2^z x 2^z tiles; the sample set is the
    greedy-order prefix of size min(n, base_budget * 4^z). Members whose
    image cannot be rendered are demoted to circles with a warning.
    """
    out = Path(out)
    dataset_dir = Path(dataset_dir)
    (out / TILES_DIR).mkdir(parents=True, exist_ok=True)
    n = len(layout.ids)
    bounds = layout.bounds
    cache = _ThumbCache(dataset_dir)

    # demote ids without a renderable image once, uniformly across zooms,
    # so per-zoom sample sets stay nested
    demoted: set[int] = set()
    for i in sample_order[:zoom_budget(n, zoom_levels - 1, base_budget)]:
        if cache.get(layout.ids[i], MAX_THUMB_SIZE) is None:
            demoted.add(int(i))

    atlas = build_atlas_state(layout, index, sample_order, zoom_levels,
                              base_budget, demoted=demoted)
    records = []
    for z in range(zoom_levels):
        (out / TILES_DIR / str(z)).mkdir(exist_ok=True)
        flags = atlas.sampled_at(z)
        size = thumb_size(z, zoom_levels)
        txy = tile_of(layout.coords, bounds, z)
        keys = txy[:, 0] * (2 ** z) + txy[:, 1]
        for key in np.unique(keys):
            members = np.flatnonzero(keys == key)
            tx, ty = int(key) // (2 ** z), int(key) % (2 ** z)
            base = out / TILES_DIR / str(z) / f"{tx}_{ty}"
            with open(base.with_suffix(".pts"), "w", encoding="utf-8") as fh:
                for i in members:
                    fh.write(f"{layout.ids[i]}\t{layout.coords[i, 0]:.6f}\t"
                             f"{layout.coords[i, 1]:.6f}\t{int(flags[i])}\n")
            sampled = [i for i in members if flags[i]]
            sprite_rel = "-"
            if sampled:
                thumbs = [(layout.ids[i], cache.get(layout.ids[i], size))
                          for i in sampled]
                rects = _write_sprite(base.with_suffix(".png"), thumbs, size)
                with open(base.with_suffix(".map"), "w", encoding="utf-8") as fh:
                    for oid, (sx, sy, w, h) in rects.items():
                        fh.write(f"{oid}\t{sx}\t{sy}\t{w}\t{h}\n")
                sprite_rel = f"{TILES_DIR}/{z}/{tx}_{ty}.png"
            records.append(TileRecord(z, tx, ty, len(members), len(sampled),
                                      sprite_rel))

    records.sort(key=lambda r: (r.zoom, r.tx, r.ty))
    manifest = TileManifest(zoom_levels=zoom_levels, base_budget=base_budget,
                            tiles=records)
    write_manifest(out, manifest)
    return manifest


def write_manifest(out: Path, manifest: TileManifest) -> None:
    with open(out / MANIFEST_FILE, "w", encoding="utf-8") as fh:
        fh.write(f"# zoom_levels={manifest.zoom_levels} "
                 f"base_budget={manifest.base_budget}\n")
        for r in manifest.tiles:
            fh.write(f"{r.zoom}\t{r.tx}\t{r.ty}\t{r.member_count}\t"
                     f"{r.sample_count}\t{r.sprite_file}\n")


def read_manifest(atlas_dir: str | Path) -> TileManifest:
    path = Path(atlas_dir) / MANIFEST_FILE
    lines = path.read_text(encoding="utf-8").splitlines()
    header = dict(kv.split("=") for kv in lines[0].lstrip("# ").split())
    tiles = []
    for line in lines[1:]:
        if not line:
            continue
        z, tx, ty, mc, sc, sprite = line.split("\t")
        tiles.append(TileRecord(int(z), int(tx), int(ty), int(mc), int(sc), sprite))
    return TileManifest(zoom_levels=int(header["zoom_levels"]),
                        base_budget=int(header["base_budget"]), tiles=tiles)


def read_tile_points(atlas_dir: str | Path, zoom: int, tx: int, ty: int
                     ) -> list[tuple[str, float, float, bool]]:
    path = Path(atlas_dir) / TILES_DIR / str(zoom) / f"{tx}_{ty}.pts"
    if not path.exists():
        return []
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        oid, x, y, flag = line.split("\t")
        rows.append((oid, float(x), float(y), flag == "1"))
    return rows


def read_tile_map(atlas_dir: str | Path, zoom: int, tx: int, ty: int
                  ) -> dict[str, tuple[int, int, int, int]]:
    path = Path(atlas_dir) / TILES_DIR / str(zoom) / f"{tx}_{ty}.map"
    if not path.exists():
        return {}
    rects = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        oid, sx, sy, w, h = line.split("\t")
        rects[oid] = (int(sx), int(sy), int(w), int(h))
    return rects


def load_atlas(atlas_dir: str | Path, layout: Layout2D,
               leaf_capacity: int = DEFAULT_LEAF_CAPACITY) -> Atlas:
    """Reconstruct the queryable atlas state from baked artifacts."""
    manifest = read_manifest(atlas_dir)
    index = SpatialIndex(layout.coords, leaf_capacity=leaf_capacity)
    atlas = Atlas(ids=list(layout.ids), coords=layout.coords, index=index,
                  zoom_levels=manifest.zoom_levels,
                  base_budget=manifest.base_budget)
    pos = {oid: i for i, oid in enumerate(layout.ids)}
    for z in range(manifest.zoom_levels):
        flags = np.zeros(len(layout.ids), dtype=bool)
        for rec in manifest.tiles:
            if rec.zoom != z:
                continue
            for oid, _, _, sampled in read_tile_points(atlas_dir, z, rec.tx, rec.ty):
                if sampled:
                    flags[pos[oid]] = True
        atlas.sample_flags[z] = flags
    return atlas


def build(layout: Layout2D, dataset_dir: str | Path, out: str | Path,
          zoom_levels: int = DEFAULT_ZOOM_LEVELS,
          base_budget: int = DEFAULT_BASE_BUDGET,
          leaf_capacity: int = DEFAULT_LEAF_CAPACITY) -> TileManifest:
    """Full atlas bake for a layout: index, sample ordering, tiles."""
    index = build_index(layout, leaf_capacity=leaf_capacity)
    n = len(layout.ids)
    max_budget = zoom_budget(n, zoom_levels - 1, base_budget)
    sample_order, _ = farthest_point_order(layout.coords, max_budget)
    return build_tiles(layout, index, sample_order, dataset_dir,
                       zoom_levels, base_budget, out)
