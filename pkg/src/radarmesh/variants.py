"""Model zoo: the fusion model, its ablations, and the comparison baselines.

Every variant shares the same encoders, array core and decoding machinery;
a variant is defined only by its documented delta:

* ``immfusion``               -- full pipeline (learned global mixer + masking)
* ``immfusion-wo-lf``         -- local tokens cut from the backward graph
* ``immfusion-wo-mmm``        -- masking disabled
* ``immfusion-wo-gim``        -- global mixer replaced by an element-wise mean
* ``images-only``             -- point stream removed
* ``points-only``             -- image stream removed
* ``points-rgb``              -- points decorated with projected pixel values,
                                 fed to the points-only pipeline
* ``points-image-feature``    -- points decorated with grid features fetched
                                 at their projection, fed to points-only
* ``deepfusion-style``        -- cross-attention feature alignment, then a
                                 linear head regressing pose parameters
* ``tokenfusion-style``       -- two single-modality streams exchanging
                                 low-scoring query tokens between layers
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .body import BodyTemplate, Pose, ScaleConfig, build_template, scale_preset, skin
from .dataset import Frame
from .encoders import (DEFAULT_BALL_RADIUS, DEFAULT_MAX_GROUP, NUM_GRID_TOKENS,
                       NUM_SEED_POINTS, encode_image, encode_points,
                       init_image_encoder, init_point_encoder)
from .fusion import (DEPTH, HIDDEN_DIM, MaskConfig, MaskDecision, apply_mmm,
                     attach_template_positions, fuse_globals, fusion_transformer,
                     graph_conv_decode, init_fusion_transformer, init_global_mixer,
                     init_graph_decoder, init_upsampler, mean_globals, upsample_mesh)
from .nn import init_linear, linear
from .sensors import crop_box

VARIANT_NAMES = [
    "immfusion",
    "immfusion-wo-lf",
    "immfusion-wo-mmm",
    "immfusion-wo-gim",
    "images-only",
    "points-only",
    "points-rgb",
    "points-image-feature",
    "deepfusion-style",
    "tokenfusion-style",
]


@dataclass
class ModelOutput:
    """Everything a forward pass produces; graph Arrays until detached."""

    joints: T.Array | None = None
    verts_coarse: T.Array | None = None
    verts_full: T.Array | None = None
    per_layer: list[T.Array] = field(default_factory=list)
    queries_refined: T.Array | None = None
    l_im_refined: T.Array | None = None
    l_pc_refined: T.Array | None = None
    mask_decision: MaskDecision = field(default_factory=MaskDecision.none)
    pose_params: T.Array | None = None


@dataclass
class Prediction:
    """Detached numpy outputs for evaluation."""

    joints: np.ndarray
    verts_full: np.ndarray
    verts_coarse: np.ndarray


class BaseModel:
    """Shared plumbing: template, config, parameter init entry point."""

    name = "base"

    def __init__(self, scale: ScaleConfig, mask: MaskConfig | None = None,
                 template: BodyTemplate | None = None):
        self.scale = scale
        self.mask = mask or MaskConfig()
        self.template = template if template is not None else build_template(scale)

    # -- helpers shared by subclasses

    def _point_tokens(self, p, cloud, extra=None):
        seed_coords, clusters, g = encode_points(
            p, "pts", cloud, radius=DEFAULT_BALL_RADIUS, max_group=DEFAULT_MAX_GROUP,
            extra_feats=extra)
        tokens = T.concat([T.constant(seed_coords), clusters], axis=1)
        return tokens, g

    def _image_tokens(self, p, image):
        coords, feats, g = encode_image(p, "img", image, self.scale.image_size,
                                        self.scale.feature_dim)
        tokens = T.concat([T.constant(coords), feats], axis=1)
        return tokens, g, feats

    def _decode(self, p, queries):
        """Graph-decode residuals and anchor them on the rest-pose template."""
        d_joints, d_coarse = graph_conv_decode(p, "dec", queries, self.template.query_adjacency)
        joints = T.add(d_joints, T.constant(self.template.joints_rest))
        coarse = T.add(d_coarse, T.constant(self.template.verts_full[self.template.coarse_idx]))
        full = upsample_mesh(p, "up", coarse)
        return joints, coarse, full

    def _anchor_layers(self, per_layer):
        anchor = T.constant(self.template.template_coords)
        return [T.add(pred, anchor) for pred in per_layer]

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def forward(self, p: dict[str, T.Array], frame: Frame, *, training: bool = False,
                rng: np.random.Generator | None = None, force_mask: str | None = None,
                attn_sink: list | None = None) -> ModelOutput:
        raise NotImplementedError

    def predict(self, params: dict[str, np.ndarray], frame: Frame) -> Prediction:
        p = {k: T.Array(v) for k, v in params.items()}
        out = self.forward(p, frame, training=False)
        return Prediction(
            joints=out.joints.data.copy(),
            verts_full=out.verts_full.data.copy(),
            verts_coarse=out.verts_coarse.data.copy(),
        )


class FusionModel(BaseModel):
    """The main model family: full fusion plus its single-switch ablations."""

    def __init__(self, scale: ScaleConfig, mask: MaskConfig | None = None,
                 template: BodyTemplate | None = None,
                 modalities: tuple[str, ...] = ("image", "points"),
                 use_mixer: bool = True, use_masking: bool = True,
                 detach_locals: bool = False, name: str = "immfusion"):
        super().__init__(scale, mask, template)
        self.modalities = modalities
        self.use_mixer = use_mixer and len(modalities) == 2
        self.use_masking = use_masking and len(modalities) == 2
        self.detach_locals = detach_locals
        self.name = name

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 77)))
        d = self.scale.feature_dim
        params: dict[str, np.ndarray] = {}
        if "image" in self.modalities:
            init_image_encoder(rng, params, "img", self.scale.image_size, d)
        if "points" in self.modalities:
            init_point_encoder(rng, params, "pts", d)
        if self.use_mixer:
            init_global_mixer(rng, params, "gim", d)
        init_fusion_transformer(rng, params, "ft", token_dim=3 + d)
        init_graph_decoder(rng, params, "dec")
        init_upsampler(params, "up", self.template)
        return params

    def forward(self, p, frame, *, training=False, rng=None, force_mask=None,
                attn_sink=None) -> ModelOutput:
        d = self.scale.feature_dim
        has_im = "image" in self.modalities
        has_pc = "points" in self.modalities

        decision = MaskDecision.none()
        if self.use_masking and (training or force_mask is not None):
            if rng is None:
                rng = np.random.default_rng(0)
            from .fusion import draw_mask_decision
            decision = draw_mask_decision(rng, self.mask, NUM_GRID_TOKENS,
                                          NUM_SEED_POINTS, force_mask)

        l_im = g_im = l_pc = g_pc = None
        if has_im:
            if decision.modality_masked == "image":
                l_im = T.constant(np.zeros((NUM_GRID_TOKENS, 3 + d), dtype=np.float32))
                g_im = T.constant(np.zeros((1, d), dtype=np.float32))
            else:
                l_im, g_im, _ = self._image_tokens(p, frame.image)
        if has_pc:
            if decision.modality_masked == "points":
                l_pc = T.constant(np.zeros((NUM_SEED_POINTS, 3 + d), dtype=np.float32))
                g_pc = T.constant(np.zeros((1, d), dtype=np.float32))
            else:
                l_pc, g_pc = self._point_tokens(p, frame.points)

        if decision.token_mask is not None and decision.token_mask.any():
            keep_im = ~decision.token_mask[:NUM_GRID_TOKENS]
            keep_pc = ~decision.token_mask[NUM_GRID_TOKENS:]
            if has_im and not keep_im.all():
                l_im = T.mask_rows(l_im, keep_im)
            if has_pc and not keep_pc.all():
                l_pc = T.mask_rows(l_pc, keep_pc)

        if self.detach_locals:
            l_im = T.stop_grad(l_im) if l_im is not None else None
            l_pc = T.stop_grad(l_pc) if l_pc is not None else None

        if has_im and has_pc:
            g = fuse_globals(p, "gim", g_im, g_pc) if self.use_mixer else mean_globals(g_im, g_pc)
        else:
            g = g_im if has_im else g_pc

        queries = attach_template_positions(g, self.template.template_coords)
        q_out, lim_out, lpc_out, per_layer = fusion_transformer(
            p, "ft", queries, l_im, l_pc, attn_sink=attn_sink)
        joints, coarse, full = self._decode(p, q_out)
        return ModelOutput(joints=joints, verts_coarse=coarse, verts_full=full,
                           per_layer=self._anchor_layers(per_layer), queries_refined=q_out,
                           l_im_refined=lim_out, l_pc_refined=lpc_out,
                           mask_decision=decision)


class DecoratedPointsModel(BaseModel):
    """Point-level fusion: decorate each point, then run the points pipeline."""

    def __init__(self, scale: ScaleConfig, mask: MaskConfig | None = None,
                 template: BodyTemplate | None = None, decoration: str = "rgb"):
        super().__init__(scale, mask, template)
        if decoration not in ("rgb", "feature"):
            raise ValueError(f"unknown decoration '{decoration}'")
        self.decoration = decoration
        self.name = "points-rgb" if decoration == "rgb" else "points-image-feature"

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 77)))
        d = self.scale.feature_dim
        params: dict[str, np.ndarray] = {}
        extra = 3 if self.decoration == "rgb" else d
        init_point_encoder(rng, params, "pts", d, in_dim=6 + extra)
        if self.decoration == "feature":
            init_image_encoder(rng, params, "img", self.scale.image_size, d)
        init_fusion_transformer(rng, params, "ft", token_dim=3 + d)
        init_graph_decoder(rng, params, "dec")
        init_upsampler(params, "up", self.template)
        return params

    def forward(self, p, frame, *, training=False, rng=None, force_mask=None,
                attn_sink=None) -> ModelOutput:
        if self.decoration == "rgb":
            extra = fetch_pixel_values(frame.points, frame.image)
        else:
            _, feats, _ = encode_image(p, "img", frame.image, self.scale.image_size,
                                       self.scale.feature_dim)
            cells = grid_cells_for_points(frame.points, self.scale.image_size)
            extra = T.take(feats, cells)
        l_pc, g_pc = self._point_tokens(p, frame.points, extra=extra)
        queries = attach_template_positions(g_pc, self.template.template_coords)
        q_out, _, lpc_out, per_layer = fusion_transformer(
            p, "ft", queries, None, l_pc, attn_sink=attn_sink)
        joints, coarse, full = self._decode(p, q_out)
        return ModelOutput(joints=joints, verts_coarse=coarse, verts_full=full,
                           per_layer=self._anchor_layers(per_layer), queries_refined=q_out,
                           l_pc_refined=lpc_out)


class ParametricHeadModel(BaseModel):
    """Deep-feature fusion with a linear head over pose parameters.

    Point tokens cross-attend to image tokens (learned alignment); the fused
    tokens are pooled and projected to root translation + per-joint axis
    angles. Training supervises the parameters; prediction skins the template.
    """

    name = "deepfusion-style"
    POSE_DIM = 3 + 22 * 3

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 77)))
        d = self.scale.feature_dim
        params: dict[str, np.ndarray] = {}
        init_image_encoder(rng, params, "img", self.scale.image_size, d)
        init_point_encoder(rng, params, "pts", d)
        init_linear(rng, params, "align.in_pc", 3 + d, HIDDEN_DIM)
        init_linear(rng, params, "align.in_im", 3 + d, HIDDEN_DIM)
        init_linear(rng, params, "align.wq", HIDDEN_DIM, HIDDEN_DIM)
        init_linear(rng, params, "align.wk", HIDDEN_DIM, HIDDEN_DIM)
        init_linear(rng, params, "align.wv", HIDDEN_DIM, HIDDEN_DIM)
        init_linear(rng, params, "head.fc1", HIDDEN_DIM, 128)
        init_linear(rng, params, "head.fc2", 128, self.POSE_DIM, scale=0.0)
        return params

    def forward(self, p, frame, *, training=False, rng=None, force_mask=None,
                attn_sink=None) -> ModelOutput:
        l_im, _, _ = self._image_tokens(p, frame.image)
        l_pc, _ = self._point_tokens(p, frame.points)
        pq = linear(p, "align.in_pc", l_pc)
        pi = linear(p, "align.in_im", l_im)
        q = linear(p, "align.wq", pq)
        k = linear(p, "align.wk", pi)
        v = linear(p, "align.wv", pi)
        scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(HIDDEN_DIM))
        attn = T.softmax(scores, axis=-1)
        if attn_sink is not None:
            attn_sink.append(attn.data)
        fused = T.add(pq, T.matmul(attn, v))
        pooled = T.reshape(T.mean_axis(fused, axis=0), (1, HIDDEN_DIM))
        h = T.relu(linear(p, "head.fc1", pooled))
        pose_params = linear(p, "head.fc2", h)
        return ModelOutput(pose_params=pose_params)

    def predict(self, params: dict[str, np.ndarray], frame: Frame) -> Prediction:
        p = {k: T.Array(v) for k, v in params.items()}
        out = self.forward(p, frame, training=False)
        pose = Pose.from_vector(out.pose_params.data.reshape(-1))
        joints, verts = skin(self.template, pose)
        return Prediction(joints=joints, verts_full=verts,
                          verts_coarse=verts[self.template.coarse_idx].copy())


class TokenExchangeModel(BaseModel):
    """Two single-modality query streams with learned soft token substitution.

    After every block, a per-stream scoring net rates each query token and
    low scores are replaced (softly) by the other stream's corresponding
    token; the streams merge only at the end, before the graph decoder.
    """

    name = "tokenfusion-style"

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 77)))
        d = self.scale.feature_dim
        params: dict[str, np.ndarray] = {}
        init_image_encoder(rng, params, "img", self.scale.image_size, d)
        init_point_encoder(rng, params, "pts", d)
        init_fusion_transformer(rng, params, "ftA", token_dim=3 + d)
        init_fusion_transformer(rng, params, "ftB", token_dim=3 + d)
        for b in range(DEPTH):
            init_linear(rng, params, f"scoreA.b{b}", HIDDEN_DIM, 1)
            init_linear(rng, params, f"scoreB.b{b}", HIDDEN_DIM, 1)
            init_linear(rng, params, f"head{b}", HIDDEN_DIM, 3, scale=0.0)
        init_graph_decoder(rng, params, "dec")
        init_upsampler(params, "up", self.template)
        return params

    def forward(self, p, frame, *, training=False, rng=None, force_mask=None,
                attn_sink=None) -> ModelOutput:
        from .fusion import attention_block

        l_im, g_im, _ = self._image_tokens(p, frame.image)
        l_pc, g_pc = self._point_tokens(p, frame.points)
        nq = self.template.num_queries
        qa = attach_template_positions(g_im, self.template.template_coords)
        qb = attach_template_positions(g_pc, self.template.template_coords)
        xa = linear(p, "ftA.in_proj", T.concat([qa, l_im], axis=0))
        xb = linear(p, "ftB.in_proj", T.concat([qb, l_pc], axis=0))

        ones = T.constant(np.ones((nq, HIDDEN_DIM), dtype=np.float32))
        per_layer = []
        for b in range(DEPTH):
            xa = attention_block(p, f"ftA.b{b}", xa, attn_sink=attn_sink)
            xb = attention_block(p, f"ftB.b{b}", xb, attn_sink=attn_sink)
            qa_t = T.narrow(xa, 0, nq)
            qb_t = T.narrow(xb, 0, nq)
            sa = T.matmul(T.sigmoid(linear(p, f"scoreA.b{b}", qa_t)),
                          T.constant(np.ones((1, HIDDEN_DIM), dtype=np.float32)))
            sb = T.matmul(T.sigmoid(linear(p, f"scoreB.b{b}", qb_t)),
                          T.constant(np.ones((1, HIDDEN_DIM), dtype=np.float32)))
            qa_new = T.add(T.mul(sa, qa_t), T.mul(T.sub(ones, sa), qb_t))
            qb_new = T.add(T.mul(sb, qb_t), T.mul(T.sub(ones, sb), qa_t))
            xa = T.concat([qa_new, T.narrow(xa, nq, xa.shape[0])], axis=0)
            xb = T.concat([qb_new, T.narrow(xb, nq, xb.shape[0])], axis=0)
            merged = T.scale(T.add(qa_new, qb_new), 0.5)
            per_layer.append(linear(p, f"head{b}", merged))

        q_final = T.scale(T.add(T.narrow(xa, 0, nq), T.narrow(xb, 0, nq)), 0.5)
        joints, coarse, full = self._decode(p, q_final)
        return ModelOutput(joints=joints, verts_coarse=coarse, verts_full=full,
                           per_layer=self._anchor_layers(per_layer), queries_refined=q_final,
                           l_im_refined=T.narrow(xa, nq, xa.shape[0]),
                           l_pc_refined=T.narrow(xb, nq, xb.shape[0]))


# ---------------------------------------------------------------------------
# decoration helpers


def project_to_crop(points: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel (row, col) of each point under the cloud's own orthographic crop."""
    cx, cy, side, _ = crop_box(points)
    u = (points[:, 0] - cx) / side + 0.5
    v = (cy - points[:, 1]) / side + 0.5
    cols = np.clip((u * size).astype(np.int64), 0, size - 1)
    rows = np.clip((v * size).astype(np.int64), 0, size - 1)
    return rows, cols


def fetch_pixel_values(points: np.ndarray, image: np.ndarray) -> np.ndarray:
    """Nearest-pixel color per point; the point-level fusion decoration."""
    size = image.shape[-1]
    rows, cols = project_to_crop(points, size)
    return np.ascontiguousarray(image[:, rows, cols].T.astype(np.float32))


def grid_cells_for_points(points: np.ndarray, size: int, grid: int = 7) -> np.ndarray:
    """7x7 grid-cell index per point, matching the image token layout."""
    rows, cols = project_to_crop(points, size)
    gr = np.clip(rows * grid // size, 0, grid - 1)
    gc = np.clip(cols * grid // size, 0, grid - 1)
    return gr * grid + gc


# ---------------------------------------------------------------------------
# registry


def build_variant(name: str, scale: ScaleConfig | str = "desk",
                  mask: MaskConfig | None = None,
                  template: BodyTemplate | None = None) -> BaseModel:
    """Instantiate a variant by its registry name."""
    if isinstance(scale, str):
        scale = scale_preset(scale)
    kw = dict(scale=scale, mask=mask, template=template)
    if name == "immfusion":
        return FusionModel(**kw)
    if name == "immfusion-wo-lf":
        return FusionModel(**kw, detach_locals=True, name=name)
    if name == "immfusion-wo-mmm":
        return FusionModel(**kw, use_masking=False, name=name)
    if name == "immfusion-wo-gim":
        return FusionModel(**kw, use_mixer=False, name=name)
    if name == "images-only":
        return FusionModel(**kw, modalities=("image",), name=name)
    if name == "points-only":
        return FusionModel(**kw, modalities=("points",), name=name)
    if name == "points-rgb":
        return DecoratedPointsModel(**kw, decoration="rgb")
    if name == "points-image-feature":
        return DecoratedPointsModel(**kw, decoration="feature")
    if name == "deepfusion-style":
        return ParametricHeadModel(**kw)
    if name == "tokenfusion-style":
        return TokenExchangeModel(**kw)
    raise ValueError(f"unknown variant '{name}' (known: {', '.join(VARIANT_NAMES)})")
