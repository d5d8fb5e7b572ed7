"""Command-line entry point orchestrating the pipeline and gesture tools.

Exit codes: 0 success, 1 usage error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import colorsys
import hashlib
import json
import logging
import shutil
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import atlas as atlas_mod
from . import dataset as ds
from . import embed as embed_mod
from . import gesture as gesture_mod
from . import ingest as ingest_mod
from .layout import LayoutConfig, compute_layout, read_layout, write_layout

log = logging.getLogger(__name__)

DEMO_FAMILIES = ("solid", "stripes", "noise", "discs")
DEMO_IMAGE_SIDE = 64

PIPELINE_STAGES = ("ingest", "embed", "layout", "atlas")


# ---------------------------------------------------------------------------
# Demo corpus
# ---------------------------------------------------------------------------

def _hsv(h, s, v):
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v))


def _render_demo_image(family: str, rng: np.random.Generator) -> np.ndarray:
    side = DEMO_IMAGE_SIDE
    if family == "solid":
        color = _hsv(rng.uniform(), rng.uniform(0.5, 0.9), rng.uniform(0.6, 1.0))
        return np.broadcast_to(color, (side, side, 3)).copy()
    if family == "stripes":
        period = int(rng.integers(4, 17))
        horizontal = bool(rng.integers(2))
        c1 = _hsv(rng.uniform(), rng.uniform(0.6, 0.9), rng.uniform(0.7, 1.0))
        c2 = _hsv(rng.uniform(), rng.uniform(0.6, 0.9), rng.uniform(0.2, 0.5))
        coords = np.arange(side)
        band = (coords // max(period // 2, 1)) % 2
        img = np.where(band[:, None, None] if horizontal else band[None, :, None],
                       c1[None, None, :], c2[None, None, :])
        return np.broadcast_to(img, (side, side, 3)).copy()
    if family == "noise":
        tint = _hsv(rng.uniform(), rng.uniform(0.2, 0.5), 1.0)
        return rng.random((side, side, 3)) * tint[None, None, :]
    if family == "discs":
        img = np.broadcast_to(
            _hsv(rng.uniform(), rng.uniform(0.1, 0.3), rng.uniform(0.8, 1.0)),
            (side, side, 3)).copy()
        yy, xx = np.mgrid[0:side, 0:side]
        for _ in range(int(rng.integers(1, 4))):
            cx, cy = rng.uniform(8, side - 8, size=2)
            radius = rng.uniform(5, 14)
            color = _hsv(rng.uniform(), rng.uniform(0.6, 1.0), rng.uniform(0.3, 0.9))
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2
            img[mask] = color
        return img
    raise ValueError(f"unknown demo family {family!r}")


def generate_demo_corpus(seed: int, n: int, out: str | Path) -> Path:
    """Render a synthetic corpus: ``<id>.json`` + ``<id>.png`` per object.

    Families cycle in fixed proportion so layout clustering can be checked
    against ground truth; metadata records the family. Bit-identical for a
    fixed seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    index_lines = []
    for i in range(n):
        family = DEMO_FAMILIES[i % len(DEMO_FAMILIES)]
        rng = np.random.default_rng([seed, i])
        img = np.clip(_render_demo_image(family, rng), 0.0, 1.0)
        oid = f"demo-{i:04d}"
        Image.fromarray((img * 255.0).round().astype(np.uint8), "RGB").save(
            out / f"{oid}.png", format="PNG")
        title = f"Demo object {i} ({family})"
        doc = {
            "id": oid,
            "title": title,
            "image": f"{oid}.png",
            "description": f"Procedurally rendered {family} test image.",
            "classification": family,
            "medium": "synthetic raster",
            "date": "2022",
            "credit": "demo corpus generator",
            "authors": ["demo corpus generator"],
            "subjects": [family],
            "dimensions": f"{DEMO_IMAGE_SIDE} x {DEMO_IMAGE_SIDE} px",
            "provenance": "generated",
        }
        (out / f"{oid}.json").write_text(
            json.dumps(doc, ensure_ascii=False, indent=1, sort_keys=True) + "\n",
            encoding="utf-8")
        index_lines.append(f"{oid}\t{oid}.png\t{title}")
    (out / "index.tsv").write_text("\n".join(index_lines) + "\n",
                                   encoding="utf-8")
    return out


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def dir_digest(root: str | Path, exclude: tuple[str, ...] = ()) -> str:
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix()
        if rel in exclude:
            continue
        digest.update(f"{rel}\t{file_sha256(path)}\n".encode())
    return digest.hexdigest()


PIPELINE_DEFAULTS = {
    "limit": "", "rate": "4", "workers": "4",
    "mode": "baseline", "import_file": "", "binary": "false",
    "neighbors": "15", "min_dist": "0.1", "epochs": "200",
    "learning_rate": "1.0", "negative_samples": "5", "seed": "42",
    "init": "random", "knn": "auto",
    "zooms": "6", "budget": "256", "leaf_capacity": "64",
}


def parse_config_file(path: str | Path) -> dict[str, str]:
    cfg: dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"bad config line (expected key = value): {raw!r}")
        key, _, value = line.partition("=")
        cfg[key.strip()] = value.strip()
    return cfg


class StageFailure(Exception):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


def _quarantine_partials(outputs: list[Path]) -> None:
    for out in outputs:
        if not out.exists():
            continue
        partial = out.with_name(out.name + ".partial")
        if partial.is_dir():
            shutil.rmtree(partial)
        elif partial.exists():
            partial.unlink()
        out.rename(partial)


def run_pipeline(cfg: dict[str, str], echo=print) -> dict:
    """Execute stale stages in dependency order; returns the manifest.

    A stage re-runs iff its input hashes or config changed (or its outputs
    are missing/stale). Failed stages keep their outputs under a
    ``.partial`` suffix and abort the run.
    """
    merged = dict(PIPELINE_DEFAULTS)
    merged.update(cfg)
    for required in ("source", "workdir"):
        if not merged.get(required):
            raise ValueError(f"pipeline config is missing {required!r}")

    workdir = Path(merged["workdir"])
    workdir.mkdir(parents=True, exist_ok=True)
    dataset_dir = workdir / "dataset"
    embeddings_path = workdir / "embeddings.emb"
    layout_path = workdir / "layout.lay"
    atlas_dir = workdir / "atlas"
    manifest_path = workdir / "pipeline-manifest.json"

    manifest = {"stages": {}, "runs": []}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    source = merged["source"]
    is_remote = source.startswith(("http://", "https://"))
    started = time.time()
    executed: list[str] = []

    def config_slice(*keys):
        return {k: merged[k] for k in keys}

    def source_fingerprint():
        return source if is_remote else dir_digest(source)

    def dataset_digest():
        return dir_digest(dataset_dir, exclude=("ingest-report.json",))

    def run_stage(name, inputs, config, outputs, outputs_present, digest_outputs, fn):
        # a stage re-runs iff its input hashes or config changed (or its
        # outputs vanished); output hashes are recorded for audit only
        record = manifest["stages"].get(name)
        if (record is not None and record["inputs"] == inputs
                and record["config"] == config and outputs_present()):
            echo(f"[pipeline] {name}: up to date")
            return
        echo(f"[pipeline] {name}: running")
        try:
            fn()
        except Exception as exc:
            _quarantine_partials(outputs)
            manifest["stages"].pop(name, None)
            _write_manifest()
            raise StageFailure(name, exc) from exc
        manifest["stages"][name] = {
            "inputs": inputs, "config": config, "outputs": digest_outputs()}
        executed.append(name)

    def _write_manifest():
        manifest_path.write_text(
            json.dumps(manifest, indent=1, sort_keys=True) + "\n",
            encoding="utf-8")

    limit = int(merged["limit"]) if merged["limit"] else None
    run_stage(
        "ingest",
        inputs={"source": source_fingerprint()},
        config=config_slice("limit", "rate", "workers"),
        outputs=[dataset_dir],
        outputs_present=lambda: (dataset_dir / ds.INDEX_FILE).exists(),
        digest_outputs=lambda: {"dataset": dataset_digest()},
        fn=lambda: ingest_mod.ingest_collection(
            source, dataset_dir, limit=limit,
            policy=ingest_mod.FetchPolicy(rate=float(merged["rate"])),
            workers=int(merged["workers"])),
    )

    import_file = merged["import_file"] or None
    run_stage(
        "embed",
        inputs={"dataset": dataset_digest(),
                "import_file": file_sha256(import_file) if import_file else ""},
        config=config_slice("mode", "binary"),
        outputs=[embeddings_path],
        outputs_present=embeddings_path.exists,
        digest_outputs=lambda: {"embeddings": file_sha256(embeddings_path)},
        fn=lambda: embed_mod.embed_dataset(
            dataset_dir, merged["mode"], embeddings_path,
            import_file=import_file,
            binary=merged["binary"].lower() == "true",
            workers=int(merged["workers"])),
    )

    def do_layout():
        matrix = embed_mod.read_embeddings(embeddings_path)
        config = LayoutConfig(
            n_neighbors=int(merged["neighbors"]),
            min_dist=float(merged["min_dist"]),
            n_epochs=int(merged["epochs"]),
            learning_rate=float(merged["learning_rate"]),
            negative_samples=int(merged["negative_samples"]),
            seed=int(merged["seed"]),
            init=merged["init"],
            knn_mode=None if merged["knn"] == "auto"
            else merged["knn"].replace("-", "_"))
        layout = compute_layout(matrix.data.astype(np.float64), matrix.ids,
                                config)
        write_layout(layout_path, layout)

    run_stage(
        "layout",
        inputs={"embeddings": file_sha256(embeddings_path)},
        config=config_slice("neighbors", "min_dist", "epochs", "learning_rate",
                            "negative_samples", "seed", "init", "knn"),
        outputs=[layout_path],
        outputs_present=layout_path.exists,
        digest_outputs=lambda: {"layout": file_sha256(layout_path)},
        fn=do_layout,
    )

    run_stage(
        "atlas",
        inputs={"layout": file_sha256(layout_path),
                "dataset": dataset_digest()},
        config=config_slice("zooms", "budget", "leaf_capacity"),
        outputs=[atlas_dir],
        outputs_present=lambda: (atlas_dir / atlas_mod.MANIFEST_FILE).exists(),
        digest_outputs=lambda: {"atlas": dir_digest(atlas_dir)},
        fn=lambda: atlas_mod.build(
            read_layout(layout_path), dataset_dir, atlas_dir,
            zoom_levels=int(merged["zooms"]),
            base_budget=int(merged["budget"]),
            leaf_capacity=int(merged["leaf_capacity"])),
    )

    manifest["runs"].append({
        "started": started, "elapsed": time.time() - started,
        "executed": executed})
    _write_manifest()
    return manifest


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    policy = ingest_mod.FetchPolicy(rate=args.rate, api_key=args.api_key)
    report = ingest_mod.ingest_collection(args.source, args.dest,
                                          limit=args.limit, policy=policy,
                                          workers=args.workers)
    print(f"ingest: requested={report.requested} succeeded={report.succeeded} "
          f"failed={report.failed} skipped_no_image={report.skipped_no_image} "
          f"cached={report.cached} bytes={report.bytes_downloaded} "
          f"elapsed={report.elapsed:.1f}s")
    return 0


def cmd_embed(args) -> int:
    matrix = embed_mod.embed_dataset(args.dataset, args.mode, args.out,
                                     import_file=args.import_file,
                                     binary=args.binary, workers=args.workers)
    print(f"embed: {matrix.data.shape[0]} x {matrix.data.shape[1]} "
          f"({matrix.descriptor_tag}) -> {args.out}")
    return 0


def cmd_layout(args) -> int:
    matrix = embed_mod.read_embeddings(args.embeddings)
    config = LayoutConfig(
        n_neighbors=args.neighbors, min_dist=args.min_dist,
        n_epochs=args.epochs, learning_rate=args.learning_rate,
        negative_samples=args.negative_samples, seed=args.seed,
        init=args.init,
        knn_mode=None if args.knn == "auto" else args.knn.replace("-", "_"))
    layout = compute_layout(matrix.data.astype(np.float64), matrix.ids, config)
    write_layout(args.out, layout)
    x0, y0, x1, y1 = layout.bounds
    print(f"layout: {len(layout.ids)} points, bounds "
          f"[{x0:.2f}, {y0:.2f}] .. [{x1:.2f}, {y1:.2f}] -> {args.out}")
    return 0


def cmd_atlas(args) -> int:
    layout = read_layout(args.layout)
    manifest = atlas_mod.build(layout, args.dataset, args.out,
                               zoom_levels=args.zooms, base_budget=args.budget,
                               leaf_capacity=args.leaf_capacity)
    print(f"atlas: {len(manifest.tiles)} tiles over {manifest.zoom_levels} "
          f"zoom levels -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .serve import ServeConfig, serve

    host, _, port = args.bind.partition(":")
    config = ServeConfig(
        dataset_dir=Path(args.dataset), atlas_dir=Path(args.atlas),
        layout_path=Path(args.layout),
        ui_dir=Path(args.ui) if args.ui else None,
        host=host or "127.0.0.1", port=int(port or 8080))
    try:
        serve(config)
    except SystemExit as exc:  # uvicorn exits on bind failure
        if exc.code not in (0, None):
            raise RuntimeError(f"serve failed to start (port in use?)") from exc
    return 0


def cmd_gesture_train(args) -> int:
    frames, labels = gesture_mod.read_stream(args.corpus)
    if labels is None:
        raise ValueError(f"{args.corpus} has no labels; cannot train")
    model = gesture_mod.train_classifier(list(zip(frames, labels)),
                                         seed=args.seed)
    gesture_mod.save_model(args.out, model)
    correct = sum(
        gesture_mod.classify(model, gesture_mod.featurize(f))[0] == lab
        for f, lab in zip(frames, labels))
    print(f"gesture-train: {len(frames)} frames, training accuracy "
          f"{correct / len(frames):.3f} -> {args.out}")
    return 0


def cmd_gesture_eval(args) -> int:
    model = gesture_mod.load_model(args.model)
    frames, labels = gesture_mod.read_stream(args.corpus)
    if labels is None:
        raise ValueError(f"{args.corpus} has no labels; cannot evaluate")
    per_class: dict[str, list[int]] = {}
    for frame, label in zip(frames, labels):
        predicted = gesture_mod.classify(model, gesture_mod.featurize(frame))[0]
        per_class.setdefault(label, [0, 0])
        per_class[label][0] += int(predicted == label)
        per_class[label][1] += 1
    total = sum(c[1] for c in per_class.values())
    hits = sum(c[0] for c in per_class.values())
    print(f"accuracy: {hits / total:.4f} ({hits}/{total})")
    for label in sorted(per_class):
        ok, n = per_class[label]
        print(f"  {label}: {ok / n:.3f} ({ok}/{n})")
    return 0


def cmd_gesture_run(args) -> int:
    import requests

    model = gesture_mod.load_model(args.model)
    if args.stream == "-":
        frames = []
        for line in sys.stdin:
            if line.strip():
                frames.append(gesture_mod.parse_frame(line)[0])
    else:
        frames, _ = gesture_mod.read_stream(args.stream)
    state = gesture_mod.MachineState()
    for frame in frames:
        state, events, sonify = gesture_mod.step(state, frame, model)
        lines = [ev.trace_line() for ev in events]
        for line in lines:
            print(line)
        if args.publish:
            if args.sonify:
                # sonification rides the publish channel only; stdout stays
                # in the plain event-trace format
                lines = lines + [
                    f"{frame.timestamp:.3f}\tSonify\t{sonify.gain:.6f},"
                    f"{sonify.pitch:.6f},{sonify.texture_index}"]
            if lines:
                requests.post(args.publish, json={"events": lines}, timeout=10)
    return 0


def cmd_demo(args) -> int:
    out = generate_demo_corpus(args.seed, args.n, args.out)
    print(f"demo: {args.n} objects in {len(DEMO_FAMILIES)} families -> {out}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = parse_config_file(args.config)
    for item in args.set or []:
        key, _, value = item.partition("=")
        cfg[key.strip()] = value.strip()
    manifest = run_pipeline(cfg)
    print(f"pipeline: executed {manifest['runs'][-1]['executed'] or 'nothing'}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cartographer",
                     description="Map an image collection into an explorable "
                                 "2-D nebula.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="crawl a source into a dataset")
    p.add_argument("--source", required=True, help="endpoint URL or directory")
    p.add_argument("--dest", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--rate", type=float, default=ingest_mod.DEFAULT_RATE)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--api-key", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="compute or import feature vectors")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=("baseline", "import"), default="baseline")
    p.add_argument("--import-file", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--binary", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("layout", help="optimize the 2-D layout")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--neighbors", type=int, default=15)
    p.add_argument("--min-dist", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=1.0)
    p.add_argument("--negative-samples", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--knn", choices=("auto", "exact", "nn-descent"),
                   default="auto")
    p.add_argument("--init", choices=("random", "spectral"), default="random")
    p.set_defaults(func=cmd_layout)

    p = sub.add_parser("atlas", help="bake tiles, samples, and sprites")
    p.add_argument("--layout", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--zooms", type=int, default=atlas_mod.DEFAULT_ZOOM_LEVELS)
    p.add_argument("--budget", type=int, default=atlas_mod.DEFAULT_BASE_BUDGET)
    p.add_argument("--leaf-capacity", type=int,
                   default=atlas_mod.DEFAULT_LEAF_CAPACITY)
    p.set_defaults(func=cmd_atlas)

    p = sub.add_parser("serve", help="serve the dataset, layout, and atlas")
    p.add_argument("--dataset", required=True)
    p.add_argument("--atlas", required=True)
    p.add_argument("--layout", required=True)
    p.add_argument("--ui", default=None)
    p.add_argument("--bind", default="127.0.0.1:8080")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("gesture-train", help="train the gesture classifier")
    p.add_argument("--corpus", required=True, help="labeled pose-stream file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gesture_train)

    p = sub.add_parser("gesture-eval", help="evaluate a model on a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_gesture_eval)

    p = sub.add_parser("gesture-run", help="emit interface events for a stream")
    p.add_argument("--model", required=True)
    p.add_argument("--stream", required=True, help="pose-stream file or - for stdin")
    p.add_argument("--publish", default=None,
                   help="POST events to a running serve instance")
    p.add_argument("--sonify", action="store_true",
                   help="publish sonification parameters alongside events")
    p.set_defaults(func=cmd_gesture_run)

    p = sub.add_parser("demo", help="generate the synthetic demo corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("pipeline", help="run all stages from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config value (repeatable)")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError,
            ingest_mod.TransientFetchError, ingest_mod.NotFoundError,
            ingest_mod.ParseError, embed_mod.EmbeddingFormatError,
            embed_mod.MissingEmbeddingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
