"""On-disk dataset bundles.

A bundle is a directory holding one little-endian binary file per array
plus a JSON manifest:

    manifest.json   name, counts, class/feature dims, split sizes,
                    symmetrize flag, schema_version, sha256 per file
    edges.bin       magic "SGNEDGE1", uint64 scalar count (2 x edges),
                    uint64 (src, dst) pairs interleaved
    features.bin    magic "SGNFEAT1", uint64 scalar count, float32 row-major
                    (num_nodes x feature_dim per the manifest)
    labels.bin      magic "SGNLABL1", uint64 node count, uint64 class ids
    splits.bin      magic "SGNSPLT1", uint64 node count, uint64 codes
                    (0 train, 1 val, 2 test)
    hops/<norm>_<K>/x_<l>.bin
                    optional propagated-feature cache, one float32 matrix
                    per hop with magic "SGNHOPS1", plus its own manifest

Fixed widths and endianness make bundles portable across platforms without
a serialization library. Corrupt inputs surface as distinct error types:
BundleVersionError, BundleCountError, BundleChecksumError,
BundleFormatError.

Converter contract for real datasets (no downloaders here): prepare four
CSV files and call bundle_from_csv. edges.csv has one "src,dst" integer
pair per line; features.csv one comma-separated float row per node;
labels.csv one integer class per line; splits.csv one of train/val/test
per line. Rows are node ids 0..N-1 in order.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from scalegnn.graph import DataSplit, Graph, LabelVector, build_graph
from scalegnn.models import HopFeatures, precompute_hops
from scalegnn.synth import SyntheticSpec, generate_sbm

SCHEMA_VERSION = 1

MAGIC = {
    "edges.bin": b"SGNEDGE1",
    "features.bin": b"SGNFEAT1",
    "labels.bin": b"SGNLABL1",
    "splits.bin": b"SGNSPLT1",
    "hops": b"SGNHOPS1",
}
_SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


class BundleError(Exception):
    """Base class for bundle load failures."""


class BundleVersionError(BundleError):
    pass


class BundleCountError(BundleError):
    pass


class BundleChecksumError(BundleError):
    pass


class BundleFormatError(BundleError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_array(path: Path, magic: bytes, arr: np.ndarray) -> None:
    flat = np.ascontiguousarray(arr).reshape(-1)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(np.uint64(flat.size).astype("<u8").tobytes())
        fh.write(flat.astype(flat.dtype.newbyteorder("<")).tobytes())


def _read_array(path: Path, magic: bytes, dtype: str, name: str) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:8] != magic:
        raise BundleFormatError(f"{name}: bad or missing magic header")
    count = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    width = np.dtype(dtype).itemsize
    if (len(raw) - 16) % width:
        raise BundleCountError(f"{name}: body is not a whole number of "
                               f"{width}-byte elements")
    body = np.frombuffer(raw[16:], dtype=dtype)
    if body.size != count:
        raise BundleCountError(f"{name}: header declares {count} elements, "
                               f"file holds {body.size}")
    return body


def save_bundle(directory, g: Graph, x: np.ndarray, labels: LabelVector,
                split: DataSplit, name: str = "dataset",
                symmetrize: bool = False) -> Path:
    """Write the four core files and the manifest; returns the directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    src = np.repeat(np.arange(g.num_nodes, dtype=np.uint64),
                    np.diff(g.row_offsets))
    pairs = np.empty((g.num_edges, 2), dtype=np.uint64)
    pairs[:, 0] = src
    pairs[:, 1] = g.col_indices.astype(np.uint64)
    _write_array(directory / "edges.bin", MAGIC["edges.bin"], pairs)
    _write_array(directory / "features.bin", MAGIC["features.bin"],
                 x.astype(np.float32))
    _write_array(directory / "labels.bin", MAGIC["labels.bin"],
                 labels.labels.astype(np.uint64))
    codes = np.full(g.num_nodes, _SPLIT_CODES["test"], dtype=np.uint64)
    codes[split.train] = _SPLIT_CODES["train"]
    codes[split.val] = _SPLIT_CODES["val"]
    _write_array(directory / "splits.bin", MAGIC["splits.bin"], codes)
    files = ["edges.bin", "features.bin", "labels.bin", "splits.bin"]
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "name": name,
        "num_nodes": g.num_nodes,
        "num_edges": g.num_edges,
        "num_classes": labels.num_classes,
        "feature_dim": int(x.shape[1]),
        "split_sizes": {"train": int(split.train.size),
                        "val": int(split.val.size),
                        "test": int(split.test.size)},
        "symmetrize": symmetrize,
        "checksums": {f: _sha256(directory / f) for f in files},
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise BundleFormatError(f"no manifest.json under {directory}")
    manifest = json.loads(path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise BundleVersionError(
            f"bundle schema {manifest.get('schema_version')!r}, "
            f"this build reads {SCHEMA_VERSION}")
    return manifest


def load_bundle(directory):
    """Validate and load a bundle.

    Returns (Graph, float32 features, LabelVector, DataSplit). Checks run
    in order version -> counts -> checksums so each corruption mode maps to
    one error type: truncation is a count mismatch, a flipped payload byte
    is a checksum mismatch.
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    for fname in manifest["checksums"]:
        if not (directory / fname).exists():
            raise BundleFormatError(f"{fname}: listed in manifest, missing")
    n = int(manifest["num_nodes"])
    d = int(manifest["feature_dim"])
    raw = _read_array(directory / "edges.bin", MAGIC["edges.bin"], "<u8",
                      "edges.bin")
    if raw.size != 2 * manifest["num_edges"]:
        raise BundleCountError(
            f"edges.bin: {raw.size // 2} pairs, manifest says "
            f"{manifest['num_edges']}")
    pairs = raw.reshape(-1, 2).astype(np.int64)
    feats = _read_array(directory / "features.bin", MAGIC["features.bin"],
                        "<f4", "features.bin")
    if feats.size != n * d:
        raise BundleCountError(f"features.bin: {feats.size} scalars, "
                               f"manifest implies {n * d}")
    x = feats.reshape(n, d).copy()
    lab = _read_array(directory / "labels.bin", MAGIC["labels.bin"], "<u8",
                      "labels.bin")
    if lab.size != n:
        raise BundleCountError(f"labels.bin: {lab.size} labels for {n} nodes")
    codes = _read_array(directory / "splits.bin", MAGIC["splits.bin"], "<u8",
                        "splits.bin")
    if codes.size != n:
        raise BundleCountError(f"splits.bin: {codes.size} codes for {n} nodes")
    for fname, want in manifest["checksums"].items():
        got = _sha256(directory / fname)
        if got != want:
            raise BundleChecksumError(f"{fname}: sha256 {got[:12]}.. does "
                                      f"not match manifest {want[:12]}..")
    g = build_graph(pairs, n, symmetrize=bool(manifest["symmetrize"]))
    labels = LabelVector(lab.astype(np.int64), int(manifest["num_classes"]))
    split = DataSplit(np.flatnonzero(codes == _SPLIT_CODES["train"]),
                      np.flatnonzero(codes == _SPLIT_CODES["val"]),
                      np.flatnonzero(codes == _SPLIT_CODES["test"]))
    for part, key in (("train", "train"), ("val", "val"), ("test", "test")):
        if getattr(split, part).size != manifest["split_sizes"][key]:
            raise BundleCountError(f"split {part}: {getattr(split, part).size}"
                                   f" nodes, manifest says "
                                   f"{manifest['split_sizes'][key]}")
    return g, x, labels, split


def write_synthetic_bundle(spec: SyntheticSpec, directory,
                           name: str | None = None) -> Path:
    g, x, labels, split = generate_sbm(spec)
    return save_bundle(directory, g, x, labels, split,
                       name=name or f"sbm-{spec.num_nodes}")


# ----------------------------------------------------------- hop sidecars


def hop_cache_dir(directory, norm_kind: str, K: int) -> Path:
    return Path(directory) / "hops" / f"{norm_kind}_{K}"


def save_hop_cache(directory, hops: HopFeatures) -> Path:
    out = hop_cache_dir(directory, hops.norm_kind, hops.K)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for l, h in enumerate(hops.hops):
        fname = f"x_{l}.bin"
        _write_array(out / fname, MAGIC["hops"], h.astype(np.float32))
        names.append(fname)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "norm_kind": hops.norm_kind,
        "K": hops.K,
        "num_nodes": int(hops.hops[0].shape[0]),
        "feature_dim": int(hops.hops[0].shape[1]),
        "checksums": {f: _sha256(out / f) for f in names},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def load_hop_cache(directory, norm_kind: str, K: int) -> HopFeatures:
    out = hop_cache_dir(directory, norm_kind, K)
    if not (out / "manifest.json").exists():
        raise BundleFormatError(f"no hop cache at {out}")
    manifest = json.loads((out / "manifest.json").read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise BundleVersionError(f"hop cache schema "
                                 f"{manifest.get('schema_version')!r}")
    n, d = int(manifest["num_nodes"]), int(manifest["feature_dim"])
    mats = []
    for l in range(manifest["K"] + 1):
        fname = f"x_{l}.bin"
        path = out / fname
        flat = _read_array(path, MAGIC["hops"], "<f4", fname)
        if flat.size != n * d:
            raise BundleCountError(f"{fname}: {flat.size} scalars, expected "
                                   f"{n * d}")
        if _sha256(path) != manifest["checksums"][fname]:
            raise BundleChecksumError(f"{fname}: checksum mismatch")
        mats.append(flat.reshape(n, d).copy())
    return HopFeatures(mats, int(manifest["K"]), manifest["norm_kind"])


def build_hop_cache(directory, norm_kind: str, K: int) -> Path:
    """Load the bundle, propagate features K times, persist the cache."""
    from scalegnn.graph import normalize_adjacency
    g, x, _, _ = load_bundle(directory)
    a = normalize_adjacency(g, norm_kind)
    hops = precompute_hops(a, x.astype(np.float64), K)
    out = save_hop_cache(directory, hops)
    hops.release()
    return out


# ------------------------------------------------------------- converters


def bundle_from_csv(edge_csv, feature_csv, label_csv, split_csv, directory,
                    name: str = "converted", symmetrize: bool = True) -> Path:
    """Build a bundle from the documented four-CSV contract (see module
    docstring). symmetrize=True treats the edge list as undirected."""
    pairs = np.loadtxt(edge_csv, delimiter=",", dtype=np.int64, ndmin=2)
    if pairs.shape[1] != 2:
        raise BundleFormatError("edges csv must have exactly two columns")
    x = np.loadtxt(feature_csv, delimiter=",", dtype=np.float32, ndmin=2)
    lab = np.loadtxt(label_csv, dtype=np.int64, ndmin=1)
    roles = np.loadtxt(split_csv, dtype=str, ndmin=1)
    n = x.shape[0]
    if lab.size != n or roles.size != n:
        raise BundleCountError(f"feature rows {n}, labels {lab.size}, "
                               f"split rows {roles.size} disagree")
    bad = set(np.unique(roles)) - set(_SPLIT_CODES)
    if bad:
        raise BundleFormatError(f"unknown split roles {sorted(bad)}")
    g = build_graph(pairs, n, symmetrize=symmetrize)
    labels = LabelVector(lab, int(lab.max()) + 1)
    split = DataSplit(np.flatnonzero(roles == "train"),
                      np.flatnonzero(roles == "val"),
                      np.flatnonzero(roles == "test"))
    return save_bundle(directory, g, x, labels, split, name=name,
                       symmetrize=False)
