"""Synthetic teacher/student stand-ins and the end-to-end distillation loop.

World model
-----------
A scene is an ``H x W`` image grid cut into ``anchor x anchor`` regions, with
at most one object per region. Each object has a class, a yaw, an
integer-aligned 2D box inside its region and a depth. The "image" carries
per-pixel appearance channels (foreground, normalised pixel position, yaw
cosine/sine, class one-hot and a weak depth cue). The depth input is fused
by channel concatenation.

Both models are a per-pixel linear generator on the fused input (the
backbone stand-in), average pooling into ``n`` feature levels, anchor
pooling into ``N_q`` object queries and ``m`` fixed decoder blocks. A fixed
head decodes boxes from the last query level. The teacher reads ground-truth
depth. The student has the same weights but reads depth corrupted by
log-normal noise with a systematic scale error, which is what distillation
must correct.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import instrument
from .adapters import (
    CrossAttnParams,
    QuerySet,
    SelfAttnParams,
    cross_attention_backward,
    cross_attention_forward,
    self_attention_backward,
    self_attention_forward,
)
from .assignment import foreground_query_mask, hungarian_solve, match_cost
from .errors import DomainError, GenerationError, TrainingError
from .geometry import (
    BevBox,
    Box2D,
    Box3D,
    Detection,
    GroundTruth,
    ap_table,
    iou_3d,
    make_foreground_mask,
    rotated_iou_bev,
)
from .losses import (
    DistillConfig,
    LossReport,
    feature_distill_loss_and_grad,
    response_distill_loss_and_grad,
    total_loss,
)
from .posenc import DepthMap, PosEncParams, build_3d_pe_backward, build_3d_pe_forward, rasterize_object_depth
from .tensor_core import MlpParams, matmul, mlp_backward, mlp_forward

CLASSES = ("car", "pedestrian", "cyclist")
CLASS_PROBS = (0.6, 0.2, 0.2)
# length, width, height in metres
CLASS_DIMS = {"car": (3.9, 1.6, 1.56), "pedestrian": (0.8, 0.6, 1.73), "cyclist": (1.76, 0.6, 1.73)}
IOU_THRESHOLDS = {"car": 0.7, "pedestrian": 0.5, "cyclist": 0.5}
DIFFICULTY_DEPTHS = (15.0, 25.0)  # easy below the first, moderate below the second

IMAGE_CHANNELS = ("fg", "u", "v", "cos", "sin", "car", "pedestrian", "cyclist", "cue")
FUSED_CHANNELS = IMAGE_CHANNELS + ("fg_depth", "depth")
# canonical feature channels read by the head
F_FG, F_U, F_V, F_DEPTH, F_COS, F_SIN, F_CLS = 0, 1, 2, 3, 4, 5, 6
HELD_OUT_BASE = 1_000_000


@dataclass(frozen=True)
class HarnessConfig:
    height: int = 16
    width: int = 16
    anchor: int = 4
    channels: int = 12
    c_d: int = 16
    c_dim: int = 16
    heads: int = 4
    d_min: float = 4.0
    d_max: float = 40.0
    min_objects: int = 2
    max_objects: int = 6
    noise_sigma: float = 0.03
    noise_bias: float = 0.15
    cue_sigma: float = 0.005
    focal: float = 8.0
    steps: int = 500
    lr: float = 1e-2
    eval_every: int = 100
    eval_scenes: int = 16
    task_loss: str = "zero"
    attn_scale: float = 1.0
    pe_scale: float = 1.0
    adapter_residual: bool = True
    generator_gain: float = 7.0
    per_level_adapters: bool = False

    def __post_init__(self):
        if self.height % self.anchor or self.width % self.anchor:
            raise DomainError("grid extents must be multiples of the anchor size")
        if self.channels < len(F_CLS_RANGE) + F_CLS or self.channels % self.heads:
            raise DomainError("channels must hold the head channels and divide by the head count")
        if not 0 <= self.min_objects <= self.max_objects:
            raise DomainError("object count range is empty")
        if self.task_loss not in ("zero", "box"):
            raise DomainError("task_loss must be 'zero' or 'box'")
        if not self.generator_gain > 0:
            raise DomainError("generator_gain must be positive")
        if self.steps < 0 or self.lr <= 0 or self.eval_every < 1 or self.eval_scenes < 1:
            raise DomainError("steps >= 0, lr > 0, eval_every >= 1 and eval_scenes >= 1 required")

    @property
    def n_queries(self) -> int:
        return (self.height // self.anchor) * (self.width // self.anchor)


F_CLS_RANGE = range(F_CLS, F_CLS + len(CLASSES))


def level_strides(n_levels: int, cfg: HarnessConfig) -> tuple:
    strides = tuple(2**k for k in range(n_levels))
    if cfg.height % strides[-1] or cfg.width % strides[-1]:
        raise DomainError(f"grid {cfg.height}x{cfg.width} not divisible by stride {strides[-1]}")
    return strides


def difficulty_of(depth: float) -> int:
    return sum(depth >= t for t in DIFFICULTY_DEPTHS)


# -- scenes --------------------------------------------------------------------


@dataclass
class SyntheticScene:
    seed: int
    depth: DepthMap
    student_depth: DepthMap
    image: np.ndarray
    boxes: list
    labels: list
    depths: list
    gts: list

    def level_boxes(self, stride: int) -> list:
        return [b.scaled(1.0 / stride) for b in self.boxes]


def background_depth(cfg: HarnessConfig) -> np.ndarray:
    """A ground plane receding towards the top rows."""
    rows = (np.arange(cfg.height) + 0.5) / cfg.height
    span = cfg.d_max - cfg.d_min
    col = cfg.d_max - 0.05 * span - 0.6 * span * rows
    return np.repeat(col[:, None], cfg.width, axis=1)


def _box_in_region(rng, cfg, region):
    per_row = cfg.width // cfg.anchor
    ry, rx = divmod(int(region), per_row)
    lo = min(2, cfg.anchor)
    sw, sh = (int(rng.integers(lo, cfg.anchor + 1)) for _ in range(2))
    ox, oy = int(rng.integers(0, cfg.anchor - sw + 1)), int(rng.integers(0, cfg.anchor - sh + 1))
    x1, y1 = rx * cfg.anchor + ox, ry * cfg.anchor + oy
    return Box2D(x1, y1, x1 + sw, y1 + sh)


def _free_box(rng, cfg):
    sw = int(rng.integers(2, max(3, cfg.width // 2)))
    sh = int(rng.integers(2, max(3, cfg.height // 2)))
    # a box wider than the grid is drawn anyway and rejected by the caller
    x1, y1 = int(rng.integers(0, max(cfg.width - sw, 0) + 1)), int(rng.integers(0, max(cfg.height - sh, 0) + 1))
    return Box2D(x1, y1, x1 + sw, y1 + sh)


def synthesize_scene(seed: int, cfg: HarnessConfig = HarnessConfig(), n_objects: int | None = None,
                     layout: str = "anchored", max_retries: int = 100) -> SyntheticScene:
    """Deterministic scene for ``seed``.

    ``layout="anchored"`` puts at most one object inside each anchor region
    (the experiment layout); ``"free"`` places boxes anywhere, overlaps
    allowed, with the nearer object painted on top.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xADD]))
    n_regions = cfg.n_queries
    if n_objects is None:
        n_objects = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    if layout == "anchored":
        if n_objects > n_regions:
            raise GenerationError(f"{n_objects} objects cannot fit in {n_regions} anchor regions")
        regions = np.sort(rng.choice(n_regions, size=n_objects, replace=False))
        boxes = [_box_in_region(rng, cfg, r) for r in regions]
    elif layout == "free":
        boxes = []
        for _ in range(n_objects):
            for _attempt in range(max_retries):
                b = _free_box(rng, cfg)
                if b.x2 <= cfg.width and b.y2 <= cfg.height and b.x2 > b.x1 and b.y2 > b.y1:
                    break
            else:
                raise GenerationError("could not place a non-degenerate box")
            boxes.append(b)
    else:
        raise DomainError(f"unknown layout {layout!r}")

    span = cfg.d_max - cfg.d_min
    labels = [int(rng.choice(len(CLASSES), p=CLASS_PROBS)) for _ in boxes]
    depths = [float(rng.uniform(cfg.d_min + 0.05 * span, cfg.d_max - 0.15 * span)) for _ in boxes]
    yaws = [float(rng.uniform(-math.pi, math.pi)) for _ in boxes]
    cues = [d * math.exp(cfg.cue_sigma * rng.standard_normal()) for d in depths]
    obj_noise = [cfg.noise_bias + cfg.noise_sigma * rng.standard_normal() for _ in boxes]
    pix_noise = cfg.noise_bias + cfg.noise_sigma * rng.standard_normal((cfg.height, cfg.width))

    bg = background_depth(cfg)
    gt_depth = rasterize_object_depth(boxes, depths, bg, cfg.d_min, cfg.d_max)

    image = np.zeros((cfg.height, cfg.width, len(IMAGE_CHANNELS)))
    log_noise = pix_noise.copy()
    ys = np.arange(cfg.height)[:, None] + 0.5
    xs = np.arange(cfg.width)[None, :] + 0.5
    u_n = np.broadcast_to(xs / cfg.width, (cfg.height, cfg.width))
    v_n = np.broadcast_to(ys / cfg.height, (cfg.height, cfg.width))
    for i in sorted(range(len(boxes)), key=lambda i: -depths[i]):
        b = boxes[i]
        inside = (xs >= b.x1) & (xs <= b.x2) & (ys >= b.y1) & (ys <= b.y2)
        feats = np.zeros(len(IMAGE_CHANNELS))
        feats[0] = 1.0
        feats[3], feats[4] = math.cos(yaws[i]), math.sin(yaws[i])
        feats[5 + labels[i]] = 1.0
        feats[8] = (cues[i] - cfg.d_min) / span
        image[inside] = feats
        image[inside, 1] = u_n[inside]
        image[inside, 2] = v_n[inside]
        log_noise[inside] = obj_noise[i]
    noisy = np.clip(gt_depth.depth * np.exp(log_noise), cfg.d_min, cfg.d_max)
    student_depth = DepthMap.dense(noisy, cfg.d_min, cfg.d_max)

    gts = []
    for b, lab, z, yaw in zip(boxes, labels, depths, yaws):
        u_c = 0.5 * (b.x1 + b.x2)
        length, width, height = CLASS_DIMS[CLASSES[lab]]
        bev = BevBox((u_c - cfg.width / 2) * z / cfg.focal, z, length, width, yaw)
        gts.append(GroundTruth(Box3D(bev, 0.0, height), CLASSES[lab], difficulty_of(z)))
    return SyntheticScene(int(seed), gt_depth, student_depth, image, boxes, labels, depths, gts)


# -- models --------------------------------------------------------------------


def signed_permutation(n: int, k: int) -> np.ndarray:
    """A fixed orthogonal decoder block: cyclic shift by ``k + 1`` with alternating signs."""
    p = np.zeros((n, n))
    for i in range(n):
        p[i, (i + k + 1) % n] = -1.0 if (i + k) % 2 else 1.0
    return p


def teacher_generator(cfg: HarnessConfig) -> MlpParams:
    """Hand-set fused-input -> feature map that exposes the head channels exactly."""
    w = np.zeros((len(FUSED_CHANNELS), cfg.channels))
    src = {F_FG: "fg", F_U: "u", F_V: "v", F_DEPTH: "fg_depth", F_COS: "cos", F_SIN: "sin"}
    for ch, name in src.items():
        w[FUSED_CHANNELS.index(name), ch] = 1.0
    for j, name in enumerate(CLASSES):
        w[FUSED_CHANNELS.index(name), F_CLS + j] = 1.0
    if cfg.channels > F_CLS + len(CLASSES):
        w[FUSED_CHANNELS.index("depth"), F_CLS + len(CLASSES)] = 1.0
    # weights are stored divided by the input gain, so features are gain-free
    return MlpParams([w / cfg.generator_gain], [np.zeros(cfg.channels)], ("identity",))


@dataclass
class StandInModel:
    generator: MlpParams
    decoder: tuple
    uses_gt_depth: bool
    cfg: HarnessConfig
    n_levels: int = 3

    def fused_input(self, scene: SyntheticScene) -> np.ndarray:
        d = scene.depth if self.uses_gt_depth else scene.student_depth
        depth_n = (d.depth - self.cfg.d_min) / (self.cfg.d_max - self.cfg.d_min)
        fg = scene.image[:, :, 0]
        fused = np.concatenate([scene.image, (fg * depth_n)[:, :, None], depth_n[:, :, None]], axis=2)
        return self.cfg.generator_gain * fused.reshape(-1, len(FUSED_CHANNELS))

    def forward(self, scene: SyntheticScene):
        """Feature levels and query levels plus a cache for ``backward``."""
        cfg = self.cfg
        base, gen_cache = mlp_forward(self.generator, self.fused_input(scene))
        base = base.reshape(cfg.height, cfg.width, cfg.channels)
        levels = [avg_pool(base, s) for s in level_strides(self.n_levels, cfg)]
        pooled = avg_pool(base, cfg.anchor).reshape(cfg.n_queries, cfg.channels)
        queries, q = [], pooled
        for r in self.decoder:
            q = matmul(q, r)
            queries.append(q)
        return levels, queries, gen_cache

    def backward(self, gen_cache, level_grads, query_grads) -> MlpParams:
        cfg = self.cfg
        g_base = np.zeros((cfg.height, cfg.width, cfg.channels))
        for s, g in zip(level_strides(self.n_levels, cfg), level_grads):
            if g is not None:
                g_base += avg_pool_vjp(g, s)
        g_q = np.zeros((cfg.n_queries, cfg.channels))
        for k in range(len(self.decoder) - 1, -1, -1):
            if query_grads[k] is not None:
                g_q = g_q + query_grads[k]
            g_q = matmul(g_q, np.ascontiguousarray(self.decoder[k].T))
        side = cfg.height // cfg.anchor, cfg.width // cfg.anchor
        g_base += avg_pool_vjp(g_q.reshape(*side, cfg.channels), cfg.anchor)
        return mlp_backward(self.generator, gen_cache, g_base.reshape(-1, cfg.channels))[1]

    def canonical_queries(self, final_queries) -> np.ndarray:
        q = final_queries
        for r in reversed(self.decoder):
            q = matmul(q, np.ascontiguousarray(r.T))
        return q

    def head(self, final_queries) -> dict:
        return decode_head(self.canonical_queries(final_queries), self.cfg)

    def infer(self, scene: SyntheticScene) -> list:
        """Student-side inference: backbone, pooling, decoder and head only."""
        _, queries, _ = self.forward(scene)
        return head_detections(self.head(queries[-1]))

    def arrays(self) -> list:
        return self.generator.arrays()


def avg_pool(x, s: int) -> np.ndarray:
    if s == 1:
        return x
    h, w, c = x.shape
    return x.reshape(h // s, s, w // s, s, c).mean(axis=(1, 3))


def avg_pool_vjp(g, s: int) -> np.ndarray:
    if s == 1:
        return g
    return np.repeat(np.repeat(g, s, axis=0), s, axis=1) / (s * s)


FG_EPS = 0.05  # minimum foreground fraction for a query to fire


def decode_head(canon: np.ndarray, cfg: HarnessConfig) -> dict:
    """Scores, class probabilities and box parameters per query."""
    n = canon.shape[0]
    fg = canon[:, F_FG]
    present = fg > FG_EPS
    safe = np.where(present, fg, 1.0)
    per_row = cfg.width // cfg.anchor
    anchor_u = ((np.arange(n) % per_row) + 0.5) * cfg.anchor / cfg.width
    anchor_v = ((np.arange(n) // per_row) + 0.5) * cfg.anchor / cfg.height
    u_n = np.where(present, canon[:, F_U] / safe, anchor_u)
    v_n = np.where(present, canon[:, F_V] / safe, anchor_v)
    z_n = np.where(present, canon[:, F_DEPTH] / safe, 0.0)
    probs = np.where(present[:, None], np.clip(canon[:, F_CLS:F_CLS + len(CLASSES)] / safe[:, None], 0, 1), 0.0)
    # an object covers at least a quarter of its anchor region
    scores = np.clip(4.0 * fg, 0.0, 1.0)
    yaw = np.arctan2(canon[:, F_SIN], canon[:, F_COS])
    return {"present": present, "scores": scores, "probs": probs, "u_n": u_n, "v_n": v_n,
            "z_n": z_n, "yaw": yaw, "cfg": cfg}


def head_detections(head: dict) -> list:
    cfg = head["cfg"]
    span = cfg.d_max - cfg.d_min
    dets = []
    for i in np.flatnonzero(head["present"]):
        label = CLASSES[int(np.argmax(head["probs"][i]))]
        z = cfg.d_min + float(head["z_n"][i]) * span
        u = float(head["u_n"][i]) * cfg.width
        length, width, height = CLASS_DIMS[label]
        bev = BevBox((u - cfg.width / 2) * z / cfg.focal, z, length, width, float(head["yaw"][i]))
        dets.append(Detection(Box3D(bev, 0.0, height), label, float(head["scores"][i])))
    return dets


def head_box_params(head: dict) -> np.ndarray:
    return np.stack([head["u_n"], head["v_n"], head["z_n"]], axis=1)


def gt_box_params(scene: SyntheticScene, cfg: HarnessConfig) -> np.ndarray:
    rows = []
    for b, z in zip(scene.boxes, scene.depths):
        rows.append((0.5 * (b.x1 + b.x2) / cfg.width, 0.5 * (b.y1 + b.y2) / cfg.height,
                     (z - cfg.d_min) / (cfg.d_max - cfg.d_min)))
    return np.array(rows).reshape(-1, 3)


def make_teacher(cfg: HarnessConfig, n_levels: int = 3, m_levels: int = 3) -> StandInModel:
    """The frozen teacher: hand-set generator reading ground-truth depth."""
    gen = teacher_generator(cfg)
    for a in gen.arrays():
        a.flags.writeable = False
    decoder = tuple(signed_permutation(cfg.channels, k) for k in range(m_levels))
    for r in decoder:
        r.flags.writeable = False
    return StandInModel(gen, decoder, True, cfg, n_levels)


def make_student(teacher: StandInModel) -> StandInModel:
    """Same architecture and starting weights as the teacher, estimated depth as input."""
    return StandInModel(teacher.generator.copy(), teacher.decoder, False, teacher.cfg, teacher.n_levels)


def query_mask_for(scene: SyntheticScene, teacher_head: dict, cfg: HarnessConfig) -> np.ndarray:
    cost = match_cost(teacher_head["probs"], head_box_params(teacher_head), scene.labels, gt_box_params(scene, cfg))
    return foreground_query_mask(hungarian_solve(cost), cfg.n_queries)


# -- evaluation ------------------------------------------------------------------


def held_out_seeds(n: int) -> list:
    return [HELD_OUT_BASE + i for i in range(n)]


def evaluate_student(model: StandInModel, seeds, cfg: HarnessConfig | None = None, scenes=None) -> dict:
    """AP_BEV and AP_3D tables keyed by (class, difficulty) on held-out scenes."""
    cfg = cfg or model.cfg
    scenes = scenes if scenes is not None else [synthesize_scene(s, cfg) for s in seeds]
    dets, gts = [], []
    for i, scene in enumerate(scenes):
        # tag boxes by scene so detections only match ground truth of their own scene
        for d in model.infer(scene):
            dets.append((i, d))
        for g in scene.gts:
            gts.append((i, g))
    if not gts:
        raise DomainError("held-out scenes contain no ground truth")
    tagged_d = [Detection(_Tagged(d.box, i), d.label, d.score) for i, d in dets]
    tagged_g = [GroundTruth(_Tagged(g.box, i), g.label, g.difficulty) for i, g in gts]
    return {
        "bev": ap_table(tagged_d, tagged_g, _scene_iou(rotated_iou_bev), IOU_THRESHOLDS),
        "3d": ap_table(tagged_d, tagged_g, _scene_iou(iou_3d), IOU_THRESHOLDS),
    }


@dataclass(frozen=True)
class _Tagged:
    box: Box3D
    scene: int


def _scene_iou(fn):
    def iou(a, b):
        return fn(a.box, b.box) if a.scene == b.scene else 0.0

    return iou


def headline_ap(report: dict) -> float:
    """Car AP_BEV at IoU 0.7 over all difficulties."""
    return report["bev"].get(("car", "hard"), 0.0)


# -- training ----------------------------------------------------------------------


@dataclass
class Learnables:
    """Student-side training-only parameters.

    ``self_attn`` and ``cross_attn`` hold one parameter set shared by every
    level, or one per level when ``per_level_adapters`` is set.
    """

    posenc: PosEncParams
    self_attn: list
    cross_attn: list

    @classmethod
    def init(cls, cfg: HarnessConfig, rng, n_levels: int = 3, m_levels: int = 3):
        posenc = PosEncParams.init(cfg.channels, cfg.d_min, cfg.d_max, rng, c_d=cfg.c_d, c_dim=cfg.c_dim,
                                   scale=cfg.pe_scale)
        n_sa, n_ca = (n_levels, m_levels) if cfg.per_level_adapters else (1, 1)
        sa = [SelfAttnParams.init(cfg.channels, rng, heads=cfg.heads, qk_scale=cfg.attn_scale,
                                  residual=cfg.adapter_residual) for _ in range(n_sa)]
        ca = [CrossAttnParams.init(cfg.channels, rng, heads=cfg.heads, qk_scale=cfg.attn_scale,
                                   residual=cfg.adapter_residual) for _ in range(n_ca)]
        return cls(posenc, sa, ca)

    def sa(self, k: int) -> SelfAttnParams:
        return self.self_attn[min(k, len(self.self_attn) - 1)]

    def ca(self, k: int) -> CrossAttnParams:
        return self.cross_attn[min(k, len(self.cross_attn) - 1)]


@dataclass
class ExperimentRecord:
    seed: int
    step: int
    losses: LossReport
    feat_distance: float
    ap_bev: float = math.nan


@dataclass
class SeedResult:
    seed: int
    records: list
    student: StandInModel
    baseline_ap: float
    final_ap: float
    timing: dict = field(default_factory=dict)


@dataclass
class StepOutput:
    losses: LossReport
    feat_distance: float
    grads: dict


def distill_step(scene, teacher, student, learn: Learnables, dcfg: DistillConfig, with_grads=True) -> StepOutput:
    """One forward (and backward) pass of the full distillation objective."""
    cfg = student.cfg
    t_levels, t_queries, _ = teacher.forward(scene)
    m_f = query_mask_for(scene, teacher.head(t_queries[-1]), cfg)
    s_levels, s_queries, gen_cache = student.forward(scene)
    strides = level_strides(dcfg.n_levels, cfg)

    pe_caches, sa_caches, adapted, masks = [], [], [], []
    for lvl, s in zip(s_levels, strides):
        h_k, w_k = lvl.shape[:2]
        pe, pc = build_3d_pe_forward(scene.depth, learn.posenc, h_k, w_k)
        out, sc = self_attention_forward(lvl, pe, learn.sa(len(sa_caches)))
        pe_caches.append(pc)
        sa_caches.append(sc)
        adapted.append(out)
        masks.append(make_foreground_mask(scene.level_boxes(s), h_k, w_k, level=s).mask)
    l_feat, g_f3d = feature_distill_loss_and_grad(adapted, t_levels, masks, dcfg)

    ca_caches, fa = [], []
    for k, (fq, tq) in enumerate(zip(s_queries, t_queries)):
        out, cc = cross_attention_forward(QuerySet(k, fq), QuerySet(k, tq), learn.ca(k))
        ca_caches.append(cc)
        fa.append(out.queries)
    l_ed, g_fa = response_distill_loss_and_grad(fa, t_queries, m_f, dcfg)

    l_reg, g_reg = task_loss(scene, s_levels, cfg) if cfg.task_loss == "box" else (0.0, None)
    if not (np.isfinite(l_feat) and np.isfinite(l_ed) and np.isfinite(l_reg)):
        raise TrainingError("non-finite loss", None)
    report = total_loss((0.0, l_reg, 0.0), l_feat, l_ed, dcfg)
    dist = sum(float(np.mean((a - b) ** 2)) for a, b in zip(s_levels, t_levels))
    if not with_grads:
        return StepOutput(report, dist, {})

    level_grads, pe_grads = [], None
    sa_grads = [[np.zeros_like(a) for a in p.arrays()] for p in learn.self_attn]
    for k, (sc, pc, g) in enumerate(zip(sa_caches, pe_caches, g_f3d)):
        g_f, g_pe, g_sa = self_attention_backward(learn.sa(k), sc, dcfg.alpha * g)
        g_pe_params = build_3d_pe_backward(learn.posenc, pc, g_pe)
        level_grads.append(g_f)
        slot = min(k, len(sa_grads) - 1)
        sa_grads[slot] = [a + b for a, b in zip(sa_grads[slot], g_sa)]
        pe_grads = g_pe_params if pe_grads is None else [a + b for a, b in zip(pe_grads, g_pe_params)]
    if g_reg is not None:
        level_grads[-1] = level_grads[-1] + g_reg

    query_grads = []
    ca_grads = [[np.zeros_like(a) for a in p.arrays()] for p in learn.cross_attn]
    for k, (cc, g) in enumerate(zip(ca_caches, g_fa)):
        g_q, _, g_ca = cross_attention_backward(learn.ca(k), cc, dcfg.beta * g)
        query_grads.append(g_q)
        slot = min(k, len(ca_grads) - 1)
        ca_grads[slot] = [a + b for a, b in zip(ca_grads[slot], g_ca)]

    g_gen = student.backward(gen_cache, level_grads, query_grads)
    grads = {"generator": g_gen.arrays(), "posenc": pe_grads, "self_attn": sa_grads, "cross_attn": ca_grads}
    return StepOutput(report, dist, grads)


def task_loss(scene, s_levels, cfg):
    """Box-regression stand-in: coarsest-level depth channel against pooled ground truth."""
    coarse = s_levels[-1]
    stride = cfg.height // coarse.shape[0]
    fg = scene.image[:, :, 0]
    target = avg_pool((fg * (scene.depth.depth - cfg.d_min) / (cfg.d_max - cfg.d_min))[:, :, None], stride)[:, :, 0]
    diff = coarse[:, :, F_DEPTH] - target
    grad = np.zeros_like(coarse)
    grad[:, :, F_DEPTH] = 2.0 * diff / diff.size
    return float(np.mean(diff**2)), grad


def _flat_grads(grads: dict):
    for group in grads.values():
        for g in group:
            yield from (g if isinstance(g, list) else [g])


def _sgd(arrays, grads, lr):
    return [a - lr * g for a, g in zip(arrays, grads)]


def apply_update(student, learn: Learnables, grads, lr):
    student.generator = student.generator.with_arrays(_sgd(student.generator.arrays(), grads["generator"], lr))
    return Learnables(
        learn.posenc.with_arrays(_sgd(learn.posenc.arrays(), grads["posenc"], lr)),
        [p.with_arrays(_sgd(p.arrays(), g, lr)) for p, g in zip(learn.self_attn, grads["self_attn"])],
        [p.with_arrays(_sgd(p.arrays(), g, lr)) for p, g in zip(learn.cross_attn, grads["cross_attn"])],
    )


def train_scene_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(step), 7]).generate_state(1)[0])


def run_seed(seed: int, dcfg: DistillConfig, cfg: HarnessConfig, teacher: StandInModel | None = None,
             eval_scenes=None) -> SeedResult:
    teacher = teacher or make_teacher(cfg, dcfg.n_levels, dcfg.m_levels)
    student = make_student(teacher)
    learn = Learnables.init(cfg, np.random.default_rng(np.random.SeedSequence([int(seed), 1])),
                            dcfg.n_levels, dcfg.m_levels)
    if eval_scenes is None:
        eval_scenes = [synthesize_scene(s, cfg) for s in held_out_seeds(cfg.eval_scenes)]
    baseline = headline_ap(evaluate_student(student, None, cfg, eval_scenes))
    records = []
    ap = baseline
    t0 = time.perf_counter()
    for step in range(cfg.steps + 1):
        scene = synthesize_scene(train_scene_seed(seed, step), cfg)
        last = step == cfg.steps
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                out = distill_step(scene, teacher, student, learn, dcfg, with_grads=not last)
            except TrainingError as exc:
                raise TrainingError(exc.detail, step) from None
        if step and (step % cfg.eval_every == 0 or last):
            ap = headline_ap(evaluate_student(student, None, cfg, eval_scenes))
        records.append(ExperimentRecord(seed, step, out.losses, out.feat_distance,
                                        ap if step % cfg.eval_every == 0 or last else math.nan))
        if not last:
            if not all(np.all(np.isfinite(g)) for g in _flat_grads(out.grads)):
                raise TrainingError("non-finite gradient", step)
            learn = apply_update(student, learn, out.grads, cfg.lr)
    train_s = time.perf_counter() - t0
    timing = {"train_seconds": train_s, **inference_timing(teacher, student, eval_scenes[:4])}
    return SeedResult(seed, records, student, baseline, ap, timing)


def inference_timing(teacher, student, scenes) -> dict:
    """Wall time of student-only inference and the PE/adapter calls it made (expected 0)."""
    before = dict(instrument.CALL_COUNTS)
    t0 = time.perf_counter()
    for sc in scenes:
        student.infer(sc)
    student_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    for sc in scenes:
        teacher.infer(sc)
    teacher_s = time.perf_counter() - t0
    extra = {k: instrument.CALL_COUNTS[k] - before.get(k, 0) for k in ("posenc", "self_attention", "cross_attention")}
    return {
        "student_infer_ms_per_scene": 1e3 * student_s / max(len(scenes), 1),
        "baseline_infer_ms_per_scene": 1e3 * teacher_s / max(len(scenes), 1),
        "inference_adapter_calls": sum(extra.values()),
    }


def run_distillation_experiment(dcfg: DistillConfig, cfg: HarnessConfig, seeds) -> list:
    """Run every seed and return the per-seed results (records in ``.records``)."""
    teacher = make_teacher(cfg, dcfg.n_levels, dcfg.m_levels)
    eval_scenes = [synthesize_scene(s, cfg) for s in held_out_seeds(cfg.eval_scenes)]
    return [run_seed(s, dcfg, cfg, teacher, eval_scenes) for s in seeds]


def replace_cfg(cfg: HarnessConfig, **kw) -> HarnessConfig:
    return replace(cfg, **kw)
