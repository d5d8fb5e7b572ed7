"""Fetch object manifests and images from a collection API into a dataset.

Two adapters cover the source side: an HTTP adapter speaking a minimal
IIIF-flavored JSON API (enumerate ids, fetch one manifest, fetch the image
it references) and a local-directory adapter for synthetic corpora
(``<id>.json`` + ``<id>.<ext>`` pairs). Fetching retries with exponential
backoff and honors a requests-per-second budget; individual object
failures are logged, never fatal to the batch.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import urljoin

import requests

from . import dataset as ds

log = logging.getLogger(__name__)

DEFAULT_RATE = 4.0
DEFAULT_RETRIES = 3
DEFAULT_BACKOFF = 0.25
DEFAULT_TIMEOUT = 30.0

ID_ALIASES = ("id", "objectid", "object_id", "@id")
IMAGE_ALIASES = ("primaryimageurl", "image", "imageurl", "image_url")
FIELD_ALIASES = {
    "title": ("title",),
    "description": ("description",),
    "attribution": ("attribution",),
    "date": ("date", "dated"),
    "classification": ("classification",),
    "credit": ("credit", "creditline"),
    "medium": ("medium",),
    "dimensions": ("dimensions",),
    "provenance": ("provenance",),
}
LIST_FIELD_ALIASES = {
    "authors": ("authors", "people"),
    "subjects": ("subjects",),
}


class TransientFetchError(Exception):
    """Network failure that persisted through all retries."""


class NotFoundError(Exception):
    """The source reported HTTP 404 for an object or image."""


class ParseError(Exception):
    """Malformed manifest payload; carries the offending location."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        super().__init__(message if position is None
                         else f"{message} (at byte {position})")


@dataclass
class ManifestRecord:
    """Raw fetched document plus provenance; payload preserved byte-exactly."""

    raw_payload: bytes
    source_url: str
    fetched_at: float

    def document(self) -> dict:
        try:
            doc = json.loads(self.raw_payload)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{self.source_url}: invalid JSON: {exc.msg}",
                             position=exc.pos) from exc
        if not isinstance(doc, dict):
            raise ParseError(f"{self.source_url}: payload is not a document")
        return doc


@dataclass
class IngestReport:
    requested: int = 0
    succeeded: int = 0
    failed: int = 0
    skipped_no_image: int = 0
    cached: int = 0  # subset of succeeded that needed no download
    bytes_downloaded: int = 0
    elapsed: float = 0.0

    def check(self) -> None:
        if self.requested != self.succeeded + self.failed + self.skipped_no_image:
            raise AssertionError(f"report counts inconsistent: {self}")


class RateLimiter:
    """Serializes request starts to at most ``rate`` per second."""

    def __init__(self, rate: float):
        self.interval = 1.0 / rate if rate > 0 else 0.0
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self) -> None:
        if self.interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            wait_for = self._next - now
            self._next = max(now, self._next) + self.interval
        if wait_for > 0:
            time.sleep(wait_for)


@dataclass
class FetchPolicy:
    rate: float = DEFAULT_RATE
    retries: int = DEFAULT_RETRIES
    backoff: float = DEFAULT_BACKOFF
    timeout: float = DEFAULT_TIMEOUT
    api_key: str | None = None


class HttpAdapter:
    """Minimal JSON collection API: GET /ids, /objects/<id>, image by URL."""

    def __init__(self, endpoint: str, policy: FetchPolicy | None = None):
        self.endpoint = endpoint.rstrip("/") + "/"
        self.policy = policy or FetchPolicy()
        self.limiter = RateLimiter(self.policy.rate)
        self.session = requests.Session()
        if self.policy.api_key:
            self.session.headers["X-Api-Key"] = self.policy.api_key

    def _get(self, url: str) -> requests.Response:
        last_exc: Exception | None = None
        for attempt in range(self.policy.retries + 1):
            self.limiter.wait()
            try:
                resp = self.session.get(url, timeout=self.policy.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                log.debug("fetch %s attempt %d failed: %s", url, attempt + 1, exc)
            else:
                if resp.status_code == 404:
                    raise NotFoundError(url)
                if resp.status_code >= 500:
                    last_exc = TransientFetchError(
                        f"{url}: HTTP {resp.status_code}")
                    log.debug("fetch %s attempt %d: HTTP %d", url, attempt + 1,
                              resp.status_code)
                else:
                    resp.raise_for_status()
                    return resp
            if attempt < self.policy.retries:
                time.sleep(self.policy.backoff * (2 ** attempt))
        raise TransientFetchError(f"{url}: giving up after "
                                  f"{self.policy.retries + 1} attempts: {last_exc}")

    def enumerate_ids(self, limit: int | None = None) -> list[str]:
        resp = self._get(urljoin(self.endpoint, "ids"))
        ids = resp.json()
        if not isinstance(ids, list):
            raise ParseError(f"{self.endpoint}ids: expected a JSON list")
        ids = [str(i) for i in ids]
        return ids[:limit] if limit is not None else ids

    def fetch_manifest(self, object_id: str) -> ManifestRecord:
        if not object_id:
            raise ValueError("object_id must be non-empty")
        url = urljoin(self.endpoint, f"objects/{object_id}")
        resp = self._get(url)
        return ManifestRecord(raw_payload=resp.content, source_url=url,
                              fetched_at=time.time())

    def fetch_image(self, record: ManifestRecord) -> tuple[bytes, str] | None:
        doc = record.document()
        url = None
        for alias in IMAGE_ALIASES:
            if doc.get(alias):
                url = str(doc[alias])
                break
        if url is None:
            images = doc.get("images")
            if isinstance(images, list) and images:
                first = images[0]
                if isinstance(first, dict) and first.get("baseimageurl"):
                    url = str(first["baseimageurl"])
        if url is None:
            return None
        resp = self._get(urljoin(self.endpoint, url))
        ext = url.rsplit(".", 1)[-1].lower() if "." in url.rsplit("/", 1)[-1] else "img"
        return resp.content, ext


class LocalAdapter:
    """Reads ``<id>.json`` + ``<id>.<ext>`` pairs from a corpus directory."""

    IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".gif", ".bmp", ".tif", ".tiff")

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"source directory not found: {root}")

    def enumerate_ids(self, limit: int | None = None) -> list[str]:
        ids = sorted(p.stem for p in self.root.glob("*.json"))
        return ids[:limit] if limit is not None else ids

    def fetch_manifest(self, object_id: str) -> ManifestRecord:
        if not object_id:
            raise ValueError("object_id must be non-empty")
        path = self.root / f"{object_id}.json"
        if not path.exists():
            raise NotFoundError(str(path))
        return ManifestRecord(raw_payload=path.read_bytes(),
                              source_url=path.as_uri(),
                              fetched_at=time.time())

    def fetch_image(self, record: ManifestRecord) -> tuple[bytes, str] | None:
        doc = record.document()
        oid = extract_object_id(doc)
        named = doc.get("image")
        candidates = [self.root / named] if named else []
        candidates += [self.root / f"{oid}{ext}" for ext in self.IMAGE_EXTS]
        for path in candidates:
            if path.exists():
                return path.read_bytes(), path.suffix.lstrip(".").lower()
        return None


def make_adapter(source: str, policy: FetchPolicy | None = None):
    if source.startswith(("http://", "https://")):
        return HttpAdapter(source, policy)
    return LocalAdapter(source)


def extract_object_id(doc: dict) -> str:
    for alias in ID_ALIASES:
        if doc.get(alias) not in (None, ""):
            return str(doc[alias])
    raise ParseError("manifest has no object id "
                     f"(looked for {', '.join(ID_ALIASES)})")


def _as_str_list(value) -> list[str]:
    if isinstance(value, list):
        out = []
        for item in value:
            if isinstance(item, dict):
                out.append(str(item.get("name", item)))
            else:
                out.append(str(item))
        return out
    if value in (None, ""):
        return []
    return [str(value)]


def parse_object(record: ManifestRecord) -> ds.CollectionObject:
    """Extract the metadata fields from a manifest; absent fields stay empty."""
    doc = record.document()
    oid = extract_object_id(doc)
    kwargs: dict = {"object_id": oid}
    for field_name, aliases in FIELD_ALIASES.items():
        for alias in aliases:
            if doc.get(alias) not in (None, ""):
                kwargs[field_name] = str(doc[alias])
                break
    for field_name, aliases in LIST_FIELD_ALIASES.items():
        for alias in aliases:
            if doc.get(alias):
                kwargs[field_name] = _as_str_list(doc[alias])
                break
    return ds.CollectionObject(**kwargs)


def fetch_manifest(adapter, object_id: str) -> ManifestRecord:
    """Adapter-agnostic manifest fetch (the adapters implement the policy)."""
    return adapter.fetch_manifest(object_id)


def ingest_collection(source: str, dest: str | Path,
                      limit: int | None = None,
                      policy: FetchPolicy | None = None,
                      workers: int = 4) -> IngestReport:
    """Crawl a source into the dataset layout under ``dest``.

    Idempotent: objects already present (meta + manifest + image) are
    fast-verified and never re-downloaded. Per-object failures land in
    ``<dest>/ingest-failures.log`` and the report; only an unwritable
    destination is fatal.
    """
    dest = Path(dest)
    started = time.monotonic()
    ds.ensure_layout(dest)
    adapter = make_adapter(source, policy)
    ids = adapter.enumerate_ids(limit=limit)

    report = IngestReport(requested=len(ids))
    failures: list[tuple[str, str]] = []
    results: dict[str, ds.IndexEntry] = {}
    lock = threading.Lock()

    def existing_entry(oid: str) -> ds.IndexEntry | None:
        meta = ds.meta_path(dest, oid)
        if not (meta.exists() and ds.manifest_path(dest, oid).exists()):
            return None
        obj = ds.read_object(dest, oid)
        if obj.image_path and not (dest / obj.image_path).exists():
            return None
        return ds.IndexEntry(oid, obj.image_path, obj.title)

    def ingest_one(oid: str) -> None:
        try:
            cached = existing_entry(oid)
            if cached is not None:
                with lock:
                    report.succeeded += 1
                    report.cached += 1
                    results[oid] = cached
                return
            record = adapter.fetch_manifest(oid)
            obj = parse_object(record)
            try:
                image = adapter.fetch_image(record)
            except NotFoundError:
                image = None  # manifest names an image the source cannot serve
            image_rel = ""
            if image is not None:
                payload, ext = image
                image_rel = f"{ds.IMAGES_DIR}/{obj.object_id}.{ext}"
                (dest / image_rel).write_bytes(payload)
            obj.image_path = image_rel
            with lock:
                ds.write_object(dest, obj, raw_payload=record.raw_payload)
                report.bytes_downloaded += len(record.raw_payload)
                if image is not None:
                    report.bytes_downloaded += len(image[0])
                    report.succeeded += 1
                else:
                    report.skipped_no_image += 1
                results[oid] = ds.IndexEntry(obj.object_id, image_rel, obj.title)
        except NotFoundError as exc:
            with lock:
                report.failed += 1
                failures.append((oid, f"not found: {exc}"))
        except (TransientFetchError, ParseError, ValueError) as exc:
            with lock:
                report.failed += 1
                failures.append((oid, str(exc)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(ingest_one, ids))
    else:
        for oid in ids:
            ingest_one(oid)

    entries = [results[oid] for oid in ids if oid in results]
    ds.write_index(dest, entries)

    failures_log = dest / "ingest-failures.log"
    if failures:
        with open(failures_log, "w", encoding="utf-8") as fh:
            for oid, reason in failures:
                fh.write(f"{oid}\t{reason}\n")
        log.warning("ingest: %d objects failed (see ingest-failures.log)",
                    len(failures))
    elif failures_log.exists():
        failures_log.unlink()

    report.elapsed = time.monotonic() - started
    report.check()
    with open(dest / "ingest-report.json", "w", encoding="utf-8") as fh:
        json.dump(report.__dict__, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return report
