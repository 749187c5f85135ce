"""Synthetic dual-stream scenes with known ground truth.

A scene plants a rectangular edit region in the streams that carry semantics
for the requested task (target for addition, source for removal and
appearance-only edits, both for coupled edits) and fabricates records around
it:

* cross-attention: instruction columns put mass on edit-region tokens, with
  three realistic flaws — a fixed subset of under-attended region tokens
  (holes), a handful of hot off-region tokens (distractors), and mild mass on
  partially covered boundary tokens;
* self-attention: affinity follows feature similarity, so propagation fills
  holes and dilutes isolated distractors while boundary tokens stay
  ambiguous;
* features: two noisy clusters (edit / keep directions at a configurable
  angle), with cluster separation ramping up across layers so deeper layers
  carry cleaner semantics;
* latents: a linear trajectory from the initial noise to an edited variant of
  the structured source latent, for offline blend replay.

Everything is a pure function of (params, rng_seed); identical seeds
reproduce identical records bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .core import (
    SOURCE,
    STAGE_GROUND_TRUTH,
    STREAMS,
    TARGET,
    TASKS,
    AttentionBundle,
    EditMask,
    FeatureBundle,
    InstructionSpec,
    LatentRecord,
    NoiseSchedule,
    TokenLayout,
    ValidationError,
)
from .records import RecordSet
from .rng import Stream

# Streams that carry edit semantics, by task.
SIGNAL_STREAMS: dict[str, tuple[str, ...]] = {
    "addition": (TARGET,),
    "removal": (SOURCE,),
    "replacement": (TARGET, SOURCE),
    "color": (SOURCE,),
    "material": (SOURCE,),
    "text_change": (TARGET, SOURCE),
    "position": (TARGET, SOURCE),
    "count": (TARGET, SOURCE),
    "background": (TARGET, SOURCE),
}

_TAG_GEOM, _TAG_FEAT, _TAG_CA, _TAG_SA, _TAG_LATENT = 1, 2, 3, 4, 5
_STREAM_TAG = {TARGET: 0, SOURCE: 1}


@dataclass(frozen=True)
class SceneParams:
    task: str
    rng_seed: int
    grid_h: int = 16
    grid_w: int = 16
    n_txt: int = 12
    d: int = 32
    n_layers: int = 8
    n_timesteps: int = 8
    n_heads: int = 8
    n_selected: int = 3
    # Edit-region geometry: rectangle sides as fractions of the grid sides.
    region_lo: float = 0.25
    region_hi: float = 0.45
    # Feature-space cluster model.
    noise_level: float = 0.13
    separation: float = 1.0
    cluster_cos: float = 0.75
    layer_ramp: float = 0.45
    # Cross-attention flaws.
    attn_base: float = 0.14
    attn_jitter: float = 0.25
    hole_fraction: float = 0.3
    hole_damp: float = 0.12
    distractor_mass: float = 0.2
    distractor_heat: float = 1.8
    distractor_cos: float = 0.8
    distractor_hub: float = 2.5
    ring_width: int = 1
    ring_fraction: float = 0.35
    ring_attn: float = 0.45
    # Self-attention affinity model.
    sa_kappa: float = 0.9
    sa_jitter: float = 0.5
    sa_row_jitter: float = 0.09
    sa_budget: float = 0.7

    def validate(self) -> "SceneParams":
        if self.task not in TASKS:
            raise ValidationError("task", f"unknown task {self.task!r}")
        if self.noise_level < 0:
            raise ValidationError("noise_level", "must be >= 0")
        if not (0.0 < self.region_lo <= self.region_hi):
            raise ValidationError("region", "need 0 < region_lo <= region_hi")
        if self.region_hi > 1.0:
            raise ValidationError("region", "GT region larger than grid")
        if not (0.0 < self.sa_budget <= 1.0):
            raise ValidationError("sa_budget", "must lie in (0, 1]")
        if not (-1.0 < self.cluster_cos < 1.0):
            raise ValidationError("cluster_cos", "must lie in (-1, 1)")
        if not (0.0 <= self.distractor_mass < 1.0):
            raise ValidationError("distractor_mass", "must lie in [0, 1)")
        if self.distractor_mass > 0:
            if not (0.0 < self.distractor_cos < 1.0):
                raise ValidationError("distractor_cos", "must lie in (0, 1)")
            if self.d < 3:
                raise ValidationError("d", "distractor cluster needs d >= 3")
        if self.n_selected > self.n_txt:
            raise ValidationError("n_selected", "more selected indices than text tokens")
        return self

    @property
    def layout(self) -> TokenLayout:
        return TokenLayout(
            n_txt=self.n_txt, n_img=self.grid_h * self.grid_w,
            grid_h=self.grid_h, grid_w=self.grid_w, d=self.d,
            n_layers=self.n_layers, n_timesteps=self.n_timesteps,
            n_heads=self.n_heads,
        )


def noiseless_params(task: str, rng_seed: int, **overrides) -> SceneParams:
    """Exact-recovery regime: no jitter, no distractors, no boundary mixing."""
    base = dict(
        task=task, rng_seed=rng_seed, noise_level=0.0, attn_jitter=0.0,
        sa_jitter=0.0, sa_row_jitter=0.0, distractor_mass=0.0, hole_fraction=0.0,
        ring_width=0, ring_fraction=0.0,
    )
    base.update(overrides)
    return SceneParams(**base)


def suite_params(task: str, rng_seed: int, **overrides) -> SceneParams:
    """Small per-scene footprint for many-scene statistical suites."""
    base = dict(task=task, rng_seed=rng_seed, n_layers=4, n_timesteps=1)
    base.update(overrides)
    return SceneParams(**base)


@dataclass
class SyntheticScene:
    params: SceneParams
    layout: TokenLayout
    schedule: NoiseSchedule
    instruction: InstructionSpec
    gt: dict[str, EditMask]

    @property
    def task(self) -> str:
        return self.params.task

    @property
    def signal_streams(self) -> tuple[str, ...]:
        return SIGNAL_STREAMS[self.task]

    def task_gt_bits(self) -> np.ndarray:
        """Union of the per-stream ground-truth regions: the full edit region."""
        return (self.gt[TARGET].bits | self.gt[SOURCE].bits).astype(np.uint8)

    def validate(self) -> "SyntheticScene":
        signal = self.signal_streams
        for stream in STREAMS:
            has = bool(self.gt[stream].bits.any())
            if (stream in signal) != has:
                raise ValidationError(
                    "gt", f"{stream} ground truth inconsistent with task {self.task!r}")
        return self


def _rect_bits(rng: Stream, params: SceneParams, shift: tuple[int, int] = (0, 0),
               base: tuple[int, int, int, int] | None = None) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    h, w = params.grid_h, params.grid_w
    if base is None:
        fr = rng.uniform(2)
        rh = max(2, int(round(h * (params.region_lo + fr[0] * (params.region_hi - params.region_lo)))))
        rw = max(2, int(round(w * (params.region_lo + fr[1] * (params.region_hi - params.region_lo)))))
        if rh > h or rw > w:
            raise ValidationError("region", "GT region larger than grid")
        top = int(rng.integers(1, h - rh + 1)[0])
        left = int(rng.integers(1, w - rw + 1)[0])
    else:
        top, left, rh, rw = base
        top = min(max(0, top + shift[0]), h - rh)
        left = min(max(0, left + shift[1]), w - rw)
    grid = np.zeros((h, w), dtype=np.uint8)
    grid[top:top + rh, left:left + rw] = 1
    return grid.reshape(-1), (top, left, rh, rw)


def _ring_indices(gt_bits: np.ndarray, params: SceneParams, rng: Stream) -> np.ndarray:
    """Partially covered boundary cells: a sampled fraction of the one-cell
    Chebyshev shell around the region."""
    if params.ring_width <= 0 or params.ring_fraction <= 0 or not gt_bits.any():
        return np.zeros(0, dtype=np.int64)
    h, w = params.grid_h, params.grid_w
    g = gt_bits.reshape(h, w).astype(bool)
    shell = np.zeros_like(g)
    grown = g.copy()
    for _ in range(params.ring_width):
        padded = np.zeros((h + 2, w + 2), dtype=bool)
        padded[1:-1, 1:-1] = grown
        nxt = np.zeros_like(grown)
        for dr in (0, 1, 2):
            for dc in (0, 1, 2):
                nxt |= padded[dr:dr + h, dc:dc + w]
        grown = nxt
    shell = grown & ~g
    cells = np.flatnonzero(shell.reshape(-1))
    k = int(round(len(cells) * params.ring_fraction))
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    pick = rng.choice(len(cells), k)
    return cells[pick]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _basis(d: int, axis: int) -> np.ndarray:
    e = np.zeros(d)
    e[axis] = 1.0
    return e


def _stream_plan(params: SceneParams, stream: str, gt_bits: np.ndarray,
                 rng_geom: Stream) -> dict:
    """Fixed per-stream structure shared by all layers and timesteps."""
    n_img = params.grid_h * params.grid_w
    gt_idx = np.flatnonzero(gt_bits)
    ring_idx = _ring_indices(gt_bits, params, rng_geom)
    bg_mask = np.ones(n_img, dtype=bool)
    bg_mask[gt_idx] = False
    bg_mask[ring_idx] = False
    bg_idx = np.flatnonzero(bg_mask)

    holes = np.zeros(0, dtype=np.int64)
    if len(gt_idx) and params.hole_fraction > 0:
        k = int(round(len(gt_idx) * params.hole_fraction))
        if k:
            holes = gt_idx[rng_geom.choice(len(gt_idx), k)]

    distractors = np.zeros(0, dtype=np.int64)
    if len(gt_idx) and params.distractor_mass > 0 and len(bg_idx):
        damp = np.ones(n_img)
        damp[holes] = params.hole_damp
        gt_weight = float(damp[gt_idx].sum()) * params.attn_base
        total = params.distractor_mass / (1.0 - params.distractor_mass) * gt_weight
        k = int(round(total / (params.attn_base * params.distractor_heat)))
        k = min(max(k, 1), len(bg_idx))
        distractors = bg_idx[rng_geom.choice(len(bg_idx), k)]

    # Per-token direction in feature space; ring cells mix the two cluster
    # directions according to how much of the cell the region covers, and
    # distractors form their own small cluster near the keep direction (a
    # contextually related object: salient to the instruction, not part of
    # the edit region).
    u = np.zeros(params.d)
    u[0] = 1.0
    cosang = params.cluster_cos
    w_dir = np.zeros(params.d)
    w_dir[0] = cosang
    w_dir[1] = np.sqrt(1.0 - cosang * cosang)
    dirs = np.tile(w_dir, (n_img, 1))
    dirs[gt_idx] = u
    if len(distractors):
        gamma = np.sqrt(1.0 / params.distractor_cos ** 2 - 1.0)
        v_dir = _unit(w_dir + gamma * _basis(params.d, 2))
        dirs[distractors] = v_dir
    alphas = 0.3 + 0.4 * rng_geom.uniform(len(ring_idx))
    for j, i in enumerate(ring_idx):
        dirs[i] = _unit(alphas[j] * u + (1.0 - alphas[j]) * w_dir)

    scale = params.separation / np.linalg.norm(u - w_dir) if cosang < 1.0 else params.separation
    return {
        "gt_idx": gt_idx, "ring_idx": ring_idx, "bg_idx": bg_idx,
        "holes": holes, "distractors": distractors,
        "dirs": dirs, "scale": scale,
    }


def _make_ca(params: SceneParams, plan: dict, selected: np.ndarray,
             rng: Stream) -> np.ndarray:
    n_img = params.grid_h * params.grid_w
    ca = np.zeros((n_img, params.n_txt))
    noisy = params.attn_jitter > 0
    if noisy:
        ca += 0.015 * rng.uniform(n_img * params.n_txt).reshape(n_img, params.n_txt)
    base = np.zeros(n_img)
    base[plan["gt_idx"]] = params.attn_base
    base[plan["holes"]] = params.attn_base * params.hole_damp
    base[plan["ring_idx"]] = params.attn_base * params.ring_attn
    base[plan["distractors"]] = params.attn_base * params.distractor_heat
    col_jitter = 1.0 + 0.5 * params.attn_jitter * rng.normal(len(selected))
    entry_jitter = 1.0 + params.attn_jitter * rng.normal(n_img * len(selected)).reshape(
        n_img, len(selected))
    cap = min(0.3, 0.8 / max(1, len(selected)))
    sel_values = np.clip(base[:, None] * col_jitter[None, :] * entry_jitter, 0.0, cap)
    ca[:, selected] = np.maximum(ca[:, selected], sel_values)
    return ca.astype(np.float32)


def _make_sa(params: SceneParams, plan: dict, rng: Stream) -> np.ndarray:
    n_img = params.grid_h * params.grid_w
    sims = plan["dirs"] @ plan["dirs"].T
    affinity = np.exp(params.sa_kappa * (sims - 1.0))
    if params.sa_jitter > 0:
        affinity = affinity * np.exp(
            params.sa_jitter * rng.normal(n_img * n_img).reshape(n_img, n_img))
    budget = np.full((n_img, 1), params.sa_budget)
    if params.sa_row_jitter > 0:
        # How much total affinity a token spends inside its own stream varies
        # per token; this is the dominant scatter in the propagated map.
        # Distractors act as hub tokens (systematically high in-image mass),
        # which pushes them into the top of the propagated band.
        offset = params.sa_row_jitter * rng.normal(n_img)
        offset[plan["distractors"]] += params.sa_row_jitter * params.distractor_hub
        budget = budget * (1.0 + offset[:, None])
        budget = np.clip(budget, 0.05, 0.995)
    sa = budget * affinity / affinity.sum(axis=1, keepdims=True)
    return sa.astype(np.float32)


def _make_features(params: SceneParams, plan: dict, layer: int,
                   rng: Stream) -> np.ndarray:
    n_img = params.grid_h * params.grid_w
    ramp = (1.0 - params.layer_ramp) + params.layer_ramp * (layer + 1) / params.n_layers
    f = plan["dirs"] * (plan["scale"] * ramp)
    if params.noise_level > 0:
        f = f + params.noise_level * rng.normal(n_img * params.d).reshape(n_img, params.d)
    return f.astype(np.float32)


def generate_scene(params: SceneParams) -> tuple[SyntheticScene, RecordSet]:
    """Build one scene and its full record set, in memory."""
    params.validate()
    layout = params.layout.validate()
    seed = params.rng_seed

    if params.n_timesteps > 1:
        sigma = tuple(1.0 - t / (params.n_timesteps - 1) for t in range(params.n_timesteps))
    else:
        sigma = (1.0,)
    schedule = NoiseSchedule(sigma=sigma).validate(layout)

    rng_geom = Stream(seed, _TAG_GEOM)
    selected = rng_geom.choice(params.n_txt, params.n_selected)
    instruction = InstructionSpec(
        task=params.task,
        selected_text_indices=tuple(int(i) for i in selected),
        label=f"{params.task} scene {seed}",
    ).validate(layout)

    signal = SIGNAL_STREAMS[params.task]
    n_img = layout.n_img
    gt_bits: dict[str, np.ndarray] = {s: np.zeros(n_img, dtype=np.uint8) for s in STREAMS}
    if params.task in ("replacement", "text_change", "position", "count", "background"):
        src_bits, rect = _rect_bits(rng_geom, params)
        # Shift under half the region size: the old and new regions always
        # overlap, so their union stays one connected component.
        dy = max(1, int(round(rect[2] * 0.4)))
        dx = max(1, int(round(rect[3] * 0.4)))
        sy = 1 if rng_geom.uniform(1)[0] < 0.5 else -1
        sx = 1 if rng_geom.uniform(1)[0] < 0.5 else -1
        tgt_bits, _ = _rect_bits(rng_geom, params, shift=(sy * dy, sx * dx), base=rect)
        gt_bits[SOURCE] = src_bits
        gt_bits[TARGET] = tgt_bits
    else:
        bits, _ = _rect_bits(rng_geom, params)
        for s in signal:
            gt_bits[s] = bits

    gt = {
        s: EditMask(stream=s, stage=STAGE_GROUND_TRUTH, bits=gt_bits[s])
        for s in STREAMS
    }
    scene = SyntheticScene(params=params, layout=layout, schedule=schedule,
                           instruction=instruction, gt=gt).validate()

    rs = RecordSet(layout=layout, schedule=schedule, instruction=instruction)
    for s in STREAMS:
        rs.put(gt[s])

    plans = {
        s: _stream_plan(params, s, gt_bits[s], Stream(seed, _TAG_GEOM, _STREAM_TAG[s]))
        for s in STREAMS
    }

    for stream in STREAMS:
        plan = plans[stream]
        for t in range(params.n_timesteps):
            for layer in range(params.n_layers):
                tags = (layer, t, _STREAM_TAG[stream])
                ca = _make_ca(params, plan, selected, Stream(seed, _TAG_CA, *tags))
                sa = _make_sa(params, plan, Stream(seed, _TAG_SA, *tags))
                rs.put(AttentionBundle(layer=layer, timestep=t, stream=stream,
                                       ca=ca, sa=sa).validate(layout))
                f = _make_features(params, plan, layer, Stream(seed, _TAG_FEAT, *tags))
                rs.put(FeatureBundle(layer=layer, timestep=t, stream=stream,
                                     f=f).validate(layout))

    rng_lat = Stream(seed, _TAG_LATENT)
    z_init = rng_lat.normal(n_img * params.d).reshape(n_img, params.d)
    src_plan = plans[SOURCE]
    z_src = 0.8 * src_plan["dirs"] * src_plan["scale"]
    z_src = z_src + 0.1 * rng_lat.normal(n_img * params.d).reshape(n_img, params.d)
    edit_region = scene.task_gt_bits().astype(bool)
    tgt_plan = plans[TARGET]
    z_final = z_src.copy()
    z_final[edit_region] = 0.8 * tgt_plan["scale"] * tgt_plan["dirs"][edit_region]
    rs.put(LatentRecord(role="initial_noise", z=z_init.astype(np.float32)).validate(layout))
    rs.put(LatentRecord(role="source", z=z_src.astype(np.float32)).validate(layout))
    for t in range(params.n_timesteps):
        z_t = sigma[t] * z_init + (1.0 - sigma[t]) * z_final
        rs.put(LatentRecord(role="current", timestep=t,
                            z=z_t.astype(np.float32)).validate(layout))
    return scene, rs
