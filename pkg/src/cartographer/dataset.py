"""On-disk dataset layout shared by the pipeline stages.

A dataset directory contains::

    objects/<object_id>.meta     one JSON document per object (UTF-8)
    images/<object_id>.<ext>     original image bytes, never recompressed
    manifests/<object_id>.raw    raw fetched payload, byte-exact for audit
    index.tsv                    object_id <TAB> image relative path <TAB> title
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

OBJECTS_DIR = "objects"
IMAGES_DIR = "images"
MANIFESTS_DIR = "manifests"
INDEX_FILE = "index.tsv"

METADATA_FIELDS = (
    "title", "description", "attribution", "date", "classification",
    "credit", "authors", "subjects", "medium", "dimensions", "provenance",
)


@dataclass
class CollectionObject:
    """One museum object: identifier, image reference, metadata fields."""

    object_id: str
    image_path: str = ""
    title: str = ""
    description: str = ""
    attribution: str = ""
    date: str = ""
    classification: str = ""
    credit: str = ""
    authors: list[str] = field(default_factory=list)
    subjects: list[str] = field(default_factory=list)
    medium: str = ""
    dimensions: str = ""
    provenance: str = ""

    def __post_init__(self):
        if not self.object_id:
            raise ValueError("object_id must be non-empty")

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, indent=1,
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CollectionObject":
        return cls(**json.loads(text))


@dataclass
class IndexEntry:
    object_id: str
    image_rel: str
    title: str


def _clean_cell(text: str) -> str:
    return text.replace("\t", " ").replace("\n", " ")


def ensure_layout(root: Path) -> None:
    for sub in (OBJECTS_DIR, IMAGES_DIR, MANIFESTS_DIR):
        (root / sub).mkdir(parents=True, exist_ok=True)


def meta_path(root: Path, object_id: str) -> Path:
    return root / OBJECTS_DIR / f"{object_id}.meta"


def manifest_path(root: Path, object_id: str) -> Path:
    return root / MANIFESTS_DIR / f"{object_id}.raw"


def write_object(root: Path, obj: CollectionObject,
                 raw_payload: bytes | None = None) -> None:
    ensure_layout(root)
    meta_path(root, obj.object_id).write_text(obj.to_json() + "\n",
                                              encoding="utf-8")
    if raw_payload is not None:
        manifest_path(root, obj.object_id).write_bytes(raw_payload)


def read_object(root: Path, object_id: str) -> CollectionObject:
    return CollectionObject.from_json(
        meta_path(root, object_id).read_text(encoding="utf-8"))


def write_index(root: Path, entries: list[IndexEntry]) -> None:
    lines = [
        f"{_clean_cell(e.object_id)}\t{_clean_cell(e.image_rel)}\t{_clean_cell(e.title)}"
        for e in entries
    ]
    (root / INDEX_FILE).write_text("\n".join(lines) + ("\n" if lines else ""),
                                   encoding="utf-8")


def read_index(root: Path) -> list[IndexEntry]:
    path = Path(root) / INDEX_FILE
    if not path.exists():
        raise FileNotFoundError(f"not a dataset directory (no {INDEX_FILE}): {root}")
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        oid, image_rel, title = line.split("\t", 2)
        entries.append(IndexEntry(oid, image_rel, title))
    return entries
