"""On-disk pair datasets.

Layout of a dataset directory::

    velodyne/NNNNNN.bin     scans, SemanticKITTI point format
    labels/NNNNNN.label     per-point semantic + instance words
    rings/NNNNNN.ring       per-point ring id, little-endian uint16 (optional)
    pairs.txt               one "k l" pair of scan numbers per line
    gt_poses.txt            one 3x4 pose per pair, mapping scan k into scan l's frame (optional)
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .data_io import (
    LidarScan,
    PoseSE3,
    SemanticScan,
    estimate_rings,
    read_labels,
    read_poses,
    read_rings,
    read_velodyne_bin,
    write_labels,
    write_poses,
    write_rings,
    write_velodyne_bin,
)
from .errors import DataError, FormatError, MissingInputError


@dataclass
class ScanPair:
    pair_id: str
    scan_k: SemanticScan
    scan_l: SemanticScan
    gt: Optional[PoseSE3] = None


def scan_stem(index: int) -> str:
    return f"{index:06d}"


def write_scan(root, scan: SemanticScan):
    root = Path(root)
    stem = scan_stem(scan.scan.scan_index)
    for sub in ("velodyne", "labels", "rings"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_velodyne_bin(root / "velodyne" / f"{stem}.bin", scan.scan)
    write_labels(root / "labels" / f"{stem}.label", scan.labels, scan.raw_instance)
    if scan.scan.ring is not None:
        write_rings(root / "rings" / f"{stem}.ring", scan.scan.ring)


def read_scan(root, index: int) -> SemanticScan:
    root = Path(root)
    stem = scan_stem(index)
    bin_path = root / "velodyne" / f"{stem}.bin"
    label_path = root / "labels" / f"{stem}.label"
    for p in (bin_path, label_path):
        if not p.is_file():
            raise MissingInputError(f"missing {p}")
    scan = read_velodyne_bin(bin_path, index)
    labels, inst = read_labels(label_path)
    if len(labels) != len(scan):
        raise DataError(f"{label_path}: {len(labels)} labels for {len(scan)} points")
    ring_path = root / "rings" / f"{stem}.ring"
    ring = read_rings(ring_path) if ring_path.is_file() else estimate_rings(scan.points)
    if len(ring) != len(scan):
        raise DataError(f"{ring_path}: {len(ring)} ring ids for {len(scan)} points")
    scan = LidarScan(scan.points, scan.remission, index, ring)
    return SemanticScan(scan, labels, inst)


def write_pairs(path, pairs):
    with open(path, "w") as fh:
        for k, l in pairs:
            fh.write(f"{int(k)} {int(l)}\n")


def read_pairs(path):
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"missing {path}")
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        tok = line.split()
        if not tok:
            continue
        if len(tok) != 2:
            raise FormatError(f"{path}: line {lineno}: expected two scan numbers")
        try:
            out.append((int(tok[0]), int(tok[1])))
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: scan numbers must be integers") from None
    return out


def write_dataset(root, pairs: List[ScanPair]):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    index = []
    for p in pairs:
        write_scan(root, p.scan_k)
        write_scan(root, p.scan_l)
        index.append((p.scan_k.scan.scan_index, p.scan_l.scan.scan_index))
    write_pairs(root / "pairs.txt", index)
    if all(p.gt is not None for p in pairs):
        write_poses(root / "gt_poses.txt", [p.gt for p in pairs])


def load_dataset(root, require_gt=False) -> List[ScanPair]:
    root = Path(root)
    if not root.is_dir():
        raise MissingInputError(f"dataset directory not found: {root}")
    index = read_pairs(root / "pairs.txt")
    gt_path = root / "gt_poses.txt"
    gts = read_poses(gt_path) if gt_path.is_file() else None
    if gts is None and require_gt:
        raise MissingInputError(f"missing {gt_path}")
    if gts is not None and len(gts) != len(index):
        raise DataError(f"{gt_path}: {len(gts)} poses for {len(index)} pairs")
    cache = {}

    def scan(i):
        if i not in cache:
            cache[i] = read_scan(root, i)
        return cache[i]

    return [
        ScanPair(f"{n:06d}", scan(k), scan(l), gts[n] if gts is not None else None)
        for n, (k, l) in enumerate(index)
    ]


def pair_ids(pairs) -> List[str]:
    return [p.pair_id for p in pairs]


def synthetic_dataset(scene, n_pairs: int) -> List[ScanPair]:
    """``n_pairs`` independent scenes; pair ``i`` uses seed ``scene.seed + i``."""
    from dataclasses import replace

    from .data_io import generate_synthetic_pair

    out = []
    for i in range(n_pairs):
        k, l, gt = generate_synthetic_pair(replace(scene, seed=scene.seed + i), scan_index=2 * i)
        out.append(ScanPair(f"{i:06d}", k, l, gt))
    return out


def ring_ids_valid(scan: SemanticScan) -> bool:
    return scan.scan.ring is not None and bool(np.all(scan.scan.ring >= 0))
