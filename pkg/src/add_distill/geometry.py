"""Foreground masks, rotated BEV / 3D IoU and KITTI-style AP at 40 recall positions."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .backend import kernels as _k
from .errors import DomainError, FormatError

N_RECALL = 40
DIFFICULTIES = ("easy", "moderate", "hard")


def normalize_yaw(yaw: float) -> float:
    """Map an angle into (-pi, pi]."""
    y = math.fmod(yaw, 2.0 * math.pi)
    if y <= -math.pi:
        y += 2.0 * math.pi
    elif y > math.pi:
        y -= 2.0 * math.pi
    return y


@dataclass(frozen=True)
class Box2D:
    """Image-plane box in level-k cell units; x runs along columns, y along rows."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise DomainError(f"inverted box {self}")

    def scaled(self, factor: float) -> "Box2D":
        return Box2D(self.x1 * factor, self.y1 * factor, self.x2 * factor, self.y2 * factor)


@dataclass(frozen=True)
class BevBox:
    x: float
    z: float
    length: float
    width: float
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def area(self) -> float:
        return self.length * self.width

    def corners(self) -> np.ndarray:
        """Counter-clockwise corners in the (x, z) plane, shape (4, 2)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = ((hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw))
        return np.array([(self.x + c * a - s * b, self.z + s * a + c * b) for a, b in local])


@dataclass(frozen=True)
class Box3D:
    """BEV footprint extruded over the vertical interval [y, y + height]."""

    bev: BevBox
    y: float
    height: float

    @property
    def volume(self) -> float:
        return self.bev.area * self.height


@dataclass
class MaskMap:
    level: int
    mask: np.ndarray

    @property
    def shape(self):
        return self.mask.shape


@dataclass(frozen=True)
class Detection:
    box: BevBox | Box3D
    label: str
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise DomainError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    box: BevBox | Box3D
    label: str
    difficulty: int = 0


def make_foreground_mask(boxes: Iterable[Box2D], h_k: int, w_k: int, level: int = 0) -> MaskMap:
    """Cell (i, j) is foreground iff its centre (x=j+0.5, y=i+0.5) lies in a box (closed)."""
    ys = np.arange(h_k)[:, None] + 0.5
    xs = np.arange(w_k)[None, :] + 0.5
    mask = np.zeros((h_k, w_k), dtype=np.float64)
    for b in boxes:
        inside = (xs >= b.x1) & (xs <= b.x2) & (ys >= b.y1) & (ys <= b.y2)
        mask[inside] = 1.0
    return MaskMap(level, mask)


def _bev(box) -> BevBox:
    return box.bev if isinstance(box, Box3D) else box


def bev_intersection(a: BevBox, b: BevBox) -> float:
    for box in (a, b):
        if not (box.length > 0.0 and box.width > 0.0):
            raise DomainError(f"degenerate BEV box {box}")
    return max(_k.convex_intersection_area(a.corners(), b.corners()), 0.0)


def rotated_iou_bev(a, b) -> float:
    a, b = _bev(a), _bev(b)
    inter = bev_intersection(a, b)
    union = a.area + b.area - inter
    return min(max(inter / union, 0.0), 1.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    for box in (a, b):
        if not box.height > 0.0:
            raise DomainError(f"degenerate 3D box {box}")
    overlap_h = min(a.y + a.height, b.y + b.height) - max(a.y, b.y)
    if overlap_h <= 0.0:
        bev_intersection(a.bev, b.bev)  # still validates the footprints
        return 0.0
    inter = bev_intersection(a.bev, b.bev) * overlap_h
    union = a.volume + b.volume - inter
    return min(max(inter / union, 0.0), 1.0)


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_fn: Callable,
    iou_thresh: float,
    ignore: Sequence[bool] | None = None,
) -> tuple[list, list]:
    """Greedy score-descending matching.

    Returns ``(order, flags)`` where ``order`` are detection indices sorted by
    descending score (stable) and ``flags[i]`` is 1 (TP), 0 (FP) or -1 (dropped
    because it only matches an ignored ground truth).
    """
    ignore = [False] * len(gts) if ignore is None else list(ignore)
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    taken = [False] * len(gts)
    flags = []
    for di in order:
        d = dets[di]
        best, best_iou, hits_ignored = -1, -1.0, False
        for gi, g in enumerate(gts):
            if taken[gi] or g.label != d.label:
                continue
            iou = iou_fn(d.box, g.box)
            if iou < iou_thresh:
                continue
            if ignore[gi]:
                hits_ignored = True
            elif iou > best_iou:
                best, best_iou = gi, iou
        if best >= 0:
            taken[best] = True
            flags.append(1)
        else:
            flags.append(-1 if hits_ignored else 0)
    return order, flags


def ap_from_flags(flags: Sequence[int], n_gt: int) -> float:
    """Interpolated AP over recall positions 1/40, ..., 40/40."""
    if n_gt <= 0:
        raise DomainError("AP undefined without ground truth")
    tp = fp = 0
    curve = []  # (true positives so far, precision) after each kept detection
    for f in flags:
        if f < 0:
            continue
        tp += f == 1
        fp += f == 0
        curve.append((tp, tp / (tp + fp)))
    total = 0.0
    for r in range(1, N_RECALL + 1):
        # recall tp/n_gt >= r/40 compared in integers
        best = max((p for t, p in curve if t * N_RECALL >= r * n_gt), default=0.0)
        total += best
    return total / N_RECALL


def average_precision_40(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_fn: Callable = rotated_iou_bev,
    iou_thresh: float = 0.7,
) -> float:
    if not gts:
        raise DomainError("AP undefined without ground truth")
    _, flags = match_detections(dets, gts, iou_fn, iou_thresh)
    return ap_from_flags(flags, len(gts))


def ap_table(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_fn: Callable,
    thresholds: dict,
) -> dict:
    """AP per (class, difficulty). Harder buckets include the easier ones.

    Ground truths above the bucket's difficulty are ignored: detections that
    only match them count neither as TP nor FP. Classes without ground truth
    in a bucket are omitted.
    """
    table = {}
    for label, thresh in thresholds.items():
        cd = [d for d in dets if d.label == label]
        cg = [g for g in gts if g.label == label]
        for level, name in enumerate(DIFFICULTIES):
            ignore = [g.difficulty > level for g in cg]
            n_care = ignore.count(False)
            if n_care == 0:
                continue
            _, flags = match_detections(cd, cg, iou_fn, thresh, ignore)
            table[(label, name)] = ap_from_flags(flags, n_care)
    return table


# -- line-delimited text records --------------------------------------------

RECORD_FIELDS = ("kind", "label", "score", "difficulty", "x", "z", "length", "width", "yaw", "y", "height")


def format_record(obj: Detection | GroundTruth) -> str:
    """One line: kind label score difficulty x z length width yaw y height.

    BEV-only boxes write ``nan`` for y and height; GT lines write score 1.
    """
    bev = _bev(obj.box)
    y, h = (obj.box.y, obj.box.height) if isinstance(obj.box, Box3D) else (math.nan, math.nan)
    if isinstance(obj, Detection):
        kind, score, diff = "det", obj.score, 0
    else:
        kind, score, diff = "gt", 1.0, obj.difficulty
    nums = (score, diff, bev.x, bev.z, bev.length, bev.width, bev.yaw, y, h)
    return " ".join([kind, obj.label] + [repr(float(v)) if i != 1 else str(int(v)) for i, v in enumerate(nums)])


def parse_record(line: str) -> Detection | GroundTruth:
    parts = line.split()
    if len(parts) != len(RECORD_FIELDS) or parts[0] not in ("det", "gt"):
        raise FormatError(f"malformed record: {line!r}")
    try:
        score = float(parts[2])
        diff = int(parts[3])
        x, z, length, width, yaw, y, h = (float(p) for p in parts[4:])
    except ValueError as exc:
        raise FormatError(f"malformed record: {line!r}") from exc
    box = BevBox(x, z, length, width, yaw)
    if not (math.isnan(y) or math.isnan(h)):
        box = Box3D(box, y, h)
    if parts[0] == "det":
        return Detection(box, parts[1], score)
    return GroundTruth(box, parts[1], diff)


def write_records(path, items: Iterable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(format_record(item) + "\n")


def read_records(path) -> tuple[list, list]:
    dets, gts = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            rec = parse_record(line)
            (dets if isinstance(rec, Detection) else gts).append(rec)
    return dets, gts
