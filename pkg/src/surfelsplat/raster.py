"""Forward splatting renderer.

Pipeline per view: transform surfels to camera space, cull against the near
plane, compute conservative screen footprints, expand (surfel, pixel)
candidate pairs, evaluate the exact ray-splat intersection and the filtered
Gaussian value for every pair, then blend front to back in the global
center-depth order. Per-pixel work is laid out as flat "pair" arrays sorted
by (pixel, depth rank) so the whole image blends in vectorized rounds; a
scalar per-pixel reference path (`render_pixel` / `render_view_reference`)
provides the independent oracle the vectorized path is tested against.

Both surface-depth criteria are produced on every render: the transmittance
median depth (surface where transmittance first drops below 0.5) and the
corrected depth driven by the summation-form cumulative opacity
O_i = sum_j (alpha_j + eps) * G_j with threshold tau.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Camera, Scene, Surfel, sh_basis

SENTINEL_DEPTH = -1.0
GAUSSIAN_CUTOFF = 1.0 / 255.0
# Radius (in sigmas) where a unit Gaussian falls to the cutoff; used for
# conservative footprints of both the object-space ellipse and screen filter.
CUTOFF_SIGMAS = math.sqrt(2.0 * math.log(255.0))
PARALLEL_EPS = 1e-9


@dataclass
class RenderConfig:
    tile_size: int = 16
    lowpass_sigma: float = math.sqrt(2.0) / 2.0
    termination_transmittance: float = 1e-4
    depth_epsilon: float = 0.1          # eps added to alpha in the O_i accumulator
    depth_threshold: float = 0.6        # tau for the corrected criterion
    criterion: str = "corrected"        # which depth map feeds normals / fusion
    near_plane: float = 0.01
    threads: int = 1

    def validate(self):
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if self.lowpass_sigma <= 0:
            raise ValueError("lowpass_sigma must be positive")
        if not (0.0 < self.termination_transmittance < 1.0):
            raise ValueError("termination_transmittance must be in (0, 1)")
        if self.depth_epsilon < 0:
            raise ValueError("depth_epsilon must be >= 0")
        if self.depth_threshold <= 0:
            raise ValueError("depth_threshold must be positive")
        if self.criterion not in ("median", "corrected"):
            raise ValueError(f"unknown criterion {self.criterion!r}")


@dataclass
class IntersectionRecord:
    """One ray-splat intersection along a pixel ray (reference path)."""

    surfel_id: int
    depth: float
    g_value: float           # filtered Gaussian value G_hat in (0, 1]
    alpha_times_g: float     # alpha * G_hat
    blend_weight: float = 0.0  # alpha * G_hat * T, filled during blending

    @property
    def alpha(self) -> float:
        return self.alpha_times_g / self.g_value


def project_center(cam: Camera, surfel: Surfel, near: float = 0.01):
    """Pinhole projection of the surfel center; None when behind the near plane."""
    q = cam.world_to_cam(surfel.center)
    if q[2] <= near:
        return None
    px = cam.fx * q[0] / q[2] + cam.cx
    py = cam.fy * q[1] / q[2] + cam.cy
    return np.array([px, py]), float(q[2])


def gaussian_value(u, v):
    """Unnormalized 2D Gaussian at local splat coordinates."""
    return np.exp(-0.5 * (np.square(u) + np.square(v)))


def filtered_value(g_obj, pixel, center_px, sigma: float):
    """Low-pass filtered Gaussian: max of object-space value and screen Gaussian."""
    d = np.asarray(pixel, dtype=np.float64) - np.asarray(center_px, dtype=np.float64)
    g_scr = np.exp(-np.sum(np.square(d), axis=-1) / (2.0 * sigma * sigma))
    return np.maximum(g_obj, g_scr)


def ray_splat_intersect(cam: Camera, pixel, surfel: Surfel, near: float = 0.01):
    """Exact intersection of a pixel ray with the splat plane.

    Returns (u, v, depth) in splat-local units and camera z, or None for
    grazing rays and hits at or behind the near plane.
    """
    px, py = float(pixel[0]), float(pixel[1])
    d = np.array([(px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0])
    q = cam.world_to_cam(surfel.center)
    a_u = cam.rotation @ surfel.tangent_u
    a_v = cam.rotation @ surfel.tangent_v
    m = np.cross(a_u, a_v)
    denom = float(d @ m)
    if abs(denom) < PARALLEL_EPS:
        return None
    s = float(q @ m) / denom
    if s <= near:
        return None
    r = s * d - q
    u = float(r @ a_u) / surfel.scale[0]
    v = float(r @ a_v) / surfel.scale[1]
    return u, v, s


@dataclass
class ViewGeometry:
    """Per-view, per-surfel quantities shared by forward and backward."""

    q: np.ndarray            # (N, 3) camera-space centers
    a_u: np.ndarray          # (N, 3) camera-space tangents
    a_v: np.ndarray
    m: np.ndarray            # (N, 3) a_u x a_v (unnormalized plane normal)
    n_cam: np.ndarray        # (N, 3) unit normals oriented toward the camera
    n_sign: np.ndarray       # (N,) orientation sign applied to m/|m|
    center_px: np.ndarray    # (N, 2) projected centers
    visible: np.ndarray      # (N,) bool, center in front of the near plane
    rank: np.ndarray         # (N,) global front-to-back rank by center depth
    colors: np.ndarray       # (N, 3) SH colors for this view (clamped)
    color_clamped: np.ndarray  # (N, 3) bool, channel hit the >= 0 clamp
    view_dirs: np.ndarray    # (N, 3) unit world dirs camera -> center
    view_dir_norm: np.ndarray  # (N,) unnormalized direction length


def prepare_view(scene: Scene, cam: Camera, cfg: RenderConfig) -> ViewGeometry:
    n = len(scene)
    rot = cam.rotation
    q = scene.centers @ rot.T + cam.translation
    a_u = scene.tangent_u @ rot.T
    a_v = scene.tangent_v @ rot.T
    m = np.cross(a_u, a_v)

    visible = q[:, 2] > cfg.near_plane
    zs = np.where(visible, q[:, 2], np.inf)
    order = np.argsort(zs, kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    with np.errstate(divide="ignore", invalid="ignore"):
        center_px = np.stack([
            cam.fx * q[:, 0] / q[:, 2] + cam.cx,
            cam.fy * q[:, 1] / q[:, 2] + cam.cy,
        ], axis=1)
    center_px[~visible] = 0.0

    m_norm = np.linalg.norm(m, axis=1)
    safe = np.maximum(m_norm, 1e-300)
    n_sign = np.where(np.sum(m * q, axis=1) > 0.0, -1.0, 1.0)
    n_cam = m * (n_sign / safe)[:, None]

    cam_pos = cam.position
    dirs = scene.centers - cam_pos[None, :]
    dn = np.linalg.norm(dirs, axis=1)
    unit = dirs / np.maximum(dn, 1e-300)[:, None]
    unit[dn < 1e-12] = (0.0, 0.0, 1.0)
    if n:
        basis = sh_basis(unit, scene.sh_degree)
        raw = np.einsum("nk,nkc->nc", basis, scene.sh) + 0.5
    else:
        raw = np.zeros((0, 3))
    colors = np.maximum(raw, 0.0)

    return ViewGeometry(
        q=q, a_u=a_u, a_v=a_v, m=m, n_cam=n_cam, n_sign=n_sign,
        center_px=center_px, visible=visible, rank=rank,
        colors=colors, color_clamped=raw < 0.0,
        view_dirs=unit, view_dir_norm=dn,
    )


def _pixel_rects(scene: Scene, cam: Camera, cfg: RenderConfig, geom: ViewGeometry):
    """Conservative inclusive pixel rectangles (x0, x1, y0, y1) per surfel.

    Covers every pixel where the filtered value can reach the cutoff: the
    projected cutoff-radius ellipse (via its bounding parallelogram corners)
    united with the screen-filter disc around the projected center.
    """
    n = len(scene)
    if n == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e, e, e, np.zeros(0, dtype=bool)

    r = CUTOFF_SIGMAS
    ext_u = (r * scene.scales[:, 0])[:, None] * geom.a_u
    ext_v = (r * scene.scales[:, 1])[:, None] * geom.a_v

    corners = np.stack([
        geom.q + ext_u + ext_v,
        geom.q + ext_u - ext_v,
        geom.q - ext_u + ext_v,
        geom.q - ext_u - ext_v,
    ], axis=1)  # (N, 4, 3)

    # Projection of a convex patch stays inside the hull of its projected
    # corners only while the patch is fully in front of the camera.
    corner_ok = np.all(corners[:, :, 2] > cfg.near_plane, axis=1)
    z = np.maximum(corners[:, :, 2], 1e-300)
    sx = cam.fx * corners[:, :, 0] / z + cam.cx
    sy = cam.fy * corners[:, :, 1] / z + cam.cy

    r_scr = r * cfg.lowpass_sigma
    xmin = np.minimum(sx.min(axis=1), geom.center_px[:, 0] - r_scr)
    xmax = np.maximum(sx.max(axis=1), geom.center_px[:, 0] + r_scr)
    ymin = np.minimum(sy.min(axis=1), geom.center_px[:, 1] - r_scr)
    ymax = np.maximum(sy.max(axis=1), geom.center_px[:, 1] + r_scr)

    # Splat pokes through the near plane: fall back to the whole image.
    xmin = np.where(corner_ok, xmin, 0.0)
    xmax = np.where(corner_ok, xmax, cam.width - 1.0)
    ymin = np.where(corner_ok, ymin, 0.0)
    ymax = np.where(corner_ok, ymax, cam.height - 1.0)

    x0 = np.maximum(np.ceil(xmin), 0).astype(np.int64)
    x1 = np.minimum(np.floor(xmax), cam.width - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(ymin), 0).astype(np.int64)
    y1 = np.minimum(np.floor(ymax), cam.height - 1).astype(np.int64)

    nonempty = geom.visible & (x0 <= x1) & (y0 <= y1)
    return x0, x1, y0, y1, nonempty


def compute_bbox(cam: Camera, surfel: Surfel, sigma: float,
                 tile_size: int = 16, near: float = 0.01):
    """Tile index range (tx0, ty0, tx1, ty1), inclusive, or None if off-screen."""
    cfg = RenderConfig(tile_size=tile_size, lowpass_sigma=sigma, near_plane=near)
    scene = Scene.from_surfels([surfel])
    geom = prepare_view(scene, cam, cfg)
    x0, x1, y0, y1, nonempty = _pixel_rects(scene, cam, cfg, geom)
    if not nonempty[0]:
        return None
    return (int(x0[0]) // tile_size, int(y0[0]) // tile_size,
            int(x1[0]) // tile_size, int(y1[0]) // tile_size)


@dataclass
class PairBuffers:
    """Flat ray-splat intersection records, sorted by (pixel, depth rank)."""

    pix: np.ndarray          # (P,) pixel index row * W + col
    surf: np.ndarray         # (P,) surfel index
    depth: np.ndarray        # (P,) blending depth (intersection or center z)
    gval: np.ndarray         # (P,) filtered Gaussian value
    a_times_g: np.ndarray    # (P,) alpha * gval
    weight: np.ndarray       # (P,) blend weight alpha * gval * T
    T_pre: np.ndarray        # (P,) transmittance before this record
    u: np.ndarray            # (P,) splat-local coordinates (0 if no intersection)
    v: np.ndarray
    s: np.ndarray            # (P,) ray-plane depth (0 if no intersection)
    g_obj: np.ndarray        # (P,) object-space Gaussian value
    g_scr: np.ndarray        # (P,) screen-filter Gaussian value
    obj_branch: np.ndarray   # (P,) bool, object branch won the max
    has_isect: np.ndarray    # (P,) bool, valid ray-plane intersection
    denom: np.ndarray        # (P,) ray dot plane normal

    def __len__(self):
        return self.pix.shape[0]


@dataclass
class RenderBuffers:
    """All per-view render outputs plus the records needed for gradients."""

    color: np.ndarray            # (H, W, 3)
    alpha: np.ndarray            # (H, W)
    depth_median: np.ndarray     # (H, W), SENTINEL_DEPTH where unfired
    depth_corrected: np.ndarray  # (H, W)
    normal_splat: np.ndarray     # (H, W, 3) alpha-blended splat normals (camera space)
    pairs: PairBuffers
    counts: np.ndarray           # (H*W,) surviving records per pixel
    offsets: np.ndarray          # (H*W,) start of each pixel's records
    T_final: np.ndarray          # (H*W,)
    med_pair: np.ndarray         # (H*W,) pair index that fired the median, -1 if none
    corr_pair: np.ndarray        # (H*W,)
    geom: ViewGeometry
    cam: Camera
    cfg: RenderConfig

    def surface_depth(self) -> np.ndarray:
        return self.depth_corrected if self.cfg.criterion == "corrected" else self.depth_median

    def signature(self):
        """Discrete structure of the render; changes mark non-smooth events."""
        p = self.pairs
        return (
            p.pix.tobytes(), p.surf.tobytes(),
            p.obj_branch.tobytes(), p.has_isect.tobytes(),
            self.med_pair.tobytes(), self.corr_pair.tobytes(),
            self.counts.tobytes(),
            self.geom.rank.tobytes(),
            (self.geom.n_sign > 0).tobytes(),
            self.geom.color_clamped.tobytes(),
        )


def _expand_rects(x0, x1, y0, y1, idx):
    """Row-major (surfel, pixel) expansion of inclusive pixel rects."""
    widths = x1 - x0 + 1
    heights = y1 - y0 + 1
    counts = widths * heights
    total = int(counts.sum())
    if total == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    surf = np.repeat(idx, counts)
    k = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
    w_rep = np.repeat(widths, counts)
    px = np.repeat(x0, counts) + k % w_rep
    py = np.repeat(y0, counts) + k // w_rep
    return surf, px, py


def _eval_pairs(scene: Scene, cam: Camera, cfg: RenderConfig, geom: ViewGeometry,
                surf, px, py):
    """Evaluate intersection and Gaussian values for candidate pairs.

    Returns the kept-pair arrays (cutoff applied) in unspecified order.
    """
    dx = (px - cam.cx) / cam.fx
    dy = (py - cam.cy) / cam.fy

    q = geom.q[surf]
    m = geom.m[surf]
    denom = dx * m[:, 0] + dy * m[:, 1] + m[:, 2]
    qm = np.sum(q * m, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = qm / denom
    has_isect = (np.abs(denom) >= PARALLEL_EPS) & (s > cfg.near_plane)
    s = np.where(has_isect, s, 0.0)

    rx = s * dx - q[:, 0]
    ry = s * dy - q[:, 1]
    rz = s - q[:, 2]
    a_u = geom.a_u[surf]
    a_v = geom.a_v[surf]
    su = scene.scales[surf, 0]
    sv = scene.scales[surf, 1]
    u = (rx * a_u[:, 0] + ry * a_u[:, 1] + rz * a_u[:, 2]) / su
    v = (rx * a_v[:, 0] + ry * a_v[:, 1] + rz * a_v[:, 2]) / sv
    u = np.where(has_isect, u, 0.0)
    v = np.where(has_isect, v, 0.0)

    g_obj = np.where(has_isect, np.exp(-0.5 * (u * u + v * v)), 0.0)
    dpx = px - geom.center_px[surf, 0]
    dpy = py - geom.center_px[surf, 1]
    sig2 = 2.0 * cfg.lowpass_sigma ** 2
    g_scr = np.exp(-(dpx * dpx + dpy * dpy) / sig2)

    obj_branch = g_obj >= g_scr
    gval = np.where(obj_branch, g_obj, g_scr)
    depth = np.where(obj_branch, s, q[:, 2])
    keep = gval >= GAUSSIAN_CUTOFF

    alpha = scene.opacities[surf]
    return PairBuffers(
        pix=(py * cam.width + px)[keep],
        surf=surf[keep],
        depth=depth[keep],
        gval=gval[keep],
        a_times_g=(alpha * gval)[keep],
        weight=np.zeros(int(keep.sum())),
        T_pre=np.ones(int(keep.sum())),
        u=u[keep], v=v[keep], s=s[keep],
        g_obj=g_obj[keep], g_scr=g_scr[keep],
        obj_branch=obj_branch[keep],
        has_isect=has_isect[keep],
        denom=denom[keep],
    )


def _blend_pairs(scene: Scene, cam: Camera, cfg: RenderConfig, geom: ViewGeometry,
                 pairs: PairBuffers, pix_lo: int, pix_hi: int):
    """Front-to-back blending over pairs already sorted by (pixel, rank).

    Handles the half-open pixel range [pix_lo, pix_hi); pair pixel ids must
    lie inside it. Returns per-pixel outputs for the range plus the compacted
    pair arrays (records past the termination point are dropped).
    """
    npx = pix_hi - pix_lo
    counts = np.bincount(pairs.pix - pix_lo, minlength=npx)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])

    color = np.zeros((npx, 3))
    normal = np.zeros((npx, 3))
    T = np.ones(npx)
    O = np.zeros(npx)
    med_pair = np.full(npx, -1, dtype=np.int64)
    corr_pair = np.full(npx, -1, dtype=np.int64)
    depth_med = np.full(npx, SENTINEL_DEPTH)
    depth_corr = np.full(npx, SENTINEL_DEPTH)
    kept = np.zeros(npx, dtype=np.int64)

    eps = cfg.depth_epsilon
    tau = cfg.depth_threshold
    term = cfg.termination_transmittance

    active = np.flatnonzero(counts > 0)
    r = 0
    max_count = int(counts.max()) if npx and counts.size else 0
    while r < max_count and active.size:
        active = active[counts[active] > r]
        if active.size == 0:
            break
        idx = offsets[active] + r
        aG = pairs.a_times_g[idx]
        T_prev = T[active]
        w = aG * T_prev
        pairs.T_pre[idx] = T_prev
        pairs.weight[idx] = w

        sf = pairs.surf[idx]
        color[active] += w[:, None] * geom.colors[sf]
        normal[active] += w[:, None] * geom.n_cam[sf]

        alpha_plus = scene.opacities[sf] + eps
        O_new = O[active] + alpha_plus * pairs.gval[idx]
        T_new = T_prev * (1.0 - aG)

        fire_med = (T_new < 0.5) & (med_pair[active] < 0)
        if np.any(fire_med):
            tgt = active[fire_med]
            med_pair[tgt] = idx[fire_med]
            depth_med[tgt] = pairs.depth[idx[fire_med]]
        fire_corr = (O_new >= tau) & (corr_pair[active] < 0)
        if np.any(fire_corr):
            tgt = active[fire_corr]
            corr_pair[tgt] = idx[fire_corr]
            depth_corr[tgt] = pairs.depth[idx[fire_corr]]

        T[active] = T_new
        O[active] = O_new
        kept[active] = r + 1
        active = active[T_new >= term]
        r += 1

    color += T[:, None] * scene.background[None, :]
    alpha = 1.0 - T

    # Drop records past the termination point and remap the fired indices.
    local_r = np.arange(len(pairs)) - np.repeat(offsets, counts)
    keep_mask = local_r < np.repeat(kept, counts)
    new_index = np.cumsum(keep_mask) - 1
    for name in ("pix", "surf", "depth", "gval", "a_times_g", "weight", "T_pre",
                 "u", "v", "s", "g_obj", "g_scr", "obj_branch", "has_isect", "denom"):
        setattr(pairs, name, getattr(pairs, name)[keep_mask])
    med_pair = np.where(med_pair >= 0, new_index[np.maximum(med_pair, 0)], -1)
    corr_pair = np.where(corr_pair >= 0, new_index[np.maximum(corr_pair, 0)], -1)

    counts = kept
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return (color, alpha, depth_med, depth_corr, normal,
            pairs, counts, offsets, T, med_pair, corr_pair)


def render_view(scene: Scene, cam: Camera, cfg: Optional[RenderConfig] = None,
                bruteforce: bool = False) -> RenderBuffers:
    """Render one view; deterministic for any thread count.

    With ``bruteforce`` the footprint stage is bypassed and every visible
    surfel is paired with every pixel (same cutoff predicate downstream).
    """
    cfg = cfg or RenderConfig()
    cfg.validate()
    h, w = cam.height, cam.width
    geom = prepare_view(scene, cam, cfg)

    if bruteforce:
        idx = np.flatnonzero(geom.visible)
        x0 = np.zeros(idx.size, dtype=np.int64)
        x1 = np.full(idx.size, w - 1, dtype=np.int64)
        y0 = np.zeros(idx.size, dtype=np.int64)
        y1 = np.full(idx.size, h - 1, dtype=np.int64)
    else:
        bx0, bx1, by0, by1, nonempty = _pixel_rects(scene, cam, cfg, geom)
        idx = np.flatnonzero(nonempty)
        x0, x1, y0, y1 = bx0[idx], bx1[idx], by0[idx], by1[idx]

    surf, px, py = _expand_rects(x0, x1, y0, y1, idx)
    pairs = _eval_pairs(scene, cam, cfg, geom, surf, px, py)

    order = np.lexsort((geom.rank[pairs.surf], pairs.pix))
    for name in ("pix", "surf", "depth", "gval", "a_times_g", "weight", "T_pre",
                 "u", "v", "s", "g_obj", "g_scr", "obj_branch", "has_isect", "denom"):
        setattr(pairs, name, getattr(pairs, name)[order])

    # Tile-row bands are blended independently; band order fixes the layout.
    band_px = cfg.tile_size * w
    n_bands = (h * w + band_px - 1) // band_px
    bounds = [min(b * band_px, h * w) for b in range(n_bands + 1)]
    splits = np.searchsorted(pairs.pix, bounds)

    def run_band(b):
        lo, hi = bounds[b], bounds[b + 1]
        sub = PairBuffers(**{
            name: getattr(pairs, name)[splits[b]:splits[b + 1]]
            for name in ("pix", "surf", "depth", "gval", "a_times_g", "weight",
                         "T_pre", "u", "v", "s", "g_obj", "g_scr", "obj_branch",
                         "has_isect", "denom")})
        return _blend_pairs(scene, cam, cfg, geom, sub, lo, hi)

    if cfg.threads > 1 and n_bands > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run_band, range(n_bands)))
    else:
        results = [run_band(b) for b in range(n_bands)]

    color = np.concatenate([r[0] for r in results]).reshape(h, w, 3)
    alpha = np.concatenate([r[1] for r in results]).reshape(h, w)
    depth_med = np.concatenate([r[2] for r in results]).reshape(h, w)
    depth_corr = np.concatenate([r[3] for r in results]).reshape(h, w)
    normal = np.concatenate([r[4] for r in results]).reshape(h, w, 3)

    pair_offsets = np.concatenate([[0], np.cumsum([len(r[5]) for r in results])])
    merged = PairBuffers(**{
        name: np.concatenate([getattr(r[5], name) for r in results])
        for name in ("pix", "surf", "depth", "gval", "a_times_g", "weight", "T_pre",
                     "u", "v", "s", "g_obj", "g_scr", "obj_branch", "has_isect",
                     "denom")})
    counts = np.concatenate([r[6] for r in results])
    offsets = np.concatenate([r[7] + pair_offsets[b] for b, r in enumerate(results)])
    T_final = np.concatenate([r[8] for r in results])
    med_pair = np.concatenate([
        np.where(r[9] >= 0, r[9] + pair_offsets[b], -1) for b, r in enumerate(results)])
    corr_pair = np.concatenate([
        np.where(r[10] >= 0, r[10] + pair_offsets[b], -1) for b, r in enumerate(results)])

    return RenderBuffers(
        color=color, alpha=alpha, depth_median=depth_med,
        depth_corrected=depth_corr, normal_splat=normal,
        pairs=merged, counts=counts, offsets=offsets, T_final=T_final,
        med_pair=med_pair, corr_pair=corr_pair, geom=geom, cam=cam, cfg=cfg,
    )


def render_pixel(records, cfg: RenderConfig, background):
    """Scalar front-to-back blending of depth-sorted records for one pixel.

    Returns (color, alpha, depth_median, depth_corrected, kept_records);
    records past the termination point are dropped, blend weights are filled.
    """
    background = np.asarray(background, dtype=np.float64)
    color = np.zeros(3)
    T = 1.0
    O = 0.0
    depth_med = SENTINEL_DEPTH
    depth_corr = SENTINEL_DEPTH
    kept = []
    for rec, rgb in records:
        w = rec.alpha_times_g * T
        rec.blend_weight = w
        color += w * np.asarray(rgb, dtype=np.float64)
        O += (rec.alpha + cfg.depth_epsilon) * rec.g_value
        T_new = T * (1.0 - rec.alpha_times_g)
        if T_new < 0.5 and depth_med == SENTINEL_DEPTH:
            depth_med = rec.depth
        if O >= cfg.depth_threshold and depth_corr == SENTINEL_DEPTH:
            depth_corr = rec.depth
        T = T_new
        kept.append((rec, rgb))
        if T < cfg.termination_transmittance:
            break
    color += T * background
    return color, 1.0 - T, depth_med, depth_corr, kept


def pixel_records(scene: Scene, cam: Camera, cfg: RenderConfig, px: int, py: int):
    """Records for one pixel via the scalar ops, in global depth-rank order."""
    geom = prepare_view(scene, cam, cfg)
    order = np.argsort(geom.rank, kind="stable")
    out = []
    for i in order:
        if not geom.visible[i]:
            continue
        hit = ray_splat_intersect(cam, (px, py), scene[i], near=cfg.near_plane)
        if hit is None:
            g_obj = 0.0
        else:
            g_obj = float(gaussian_value(hit[0], hit[1]))
        g_scr = float(np.exp(-((px - geom.center_px[i, 0]) ** 2 +
                               (py - geom.center_px[i, 1]) ** 2)
                             / (2.0 * cfg.lowpass_sigma ** 2)))
        if g_obj >= g_scr:
            gval, depth = g_obj, hit[2]
        else:
            gval, depth = g_scr, float(geom.q[i, 2])
        if gval < GAUSSIAN_CUTOFF:
            continue
        rec = IntersectionRecord(
            surfel_id=int(i), depth=depth, g_value=gval,
            alpha_times_g=float(scene.opacities[i]) * gval,
        )
        out.append((rec, geom.colors[i]))
    return out


def render_view_reference(scene: Scene, cam: Camera,
                          cfg: Optional[RenderConfig] = None):
    """Slow per-pixel oracle built purely from the scalar operations."""
    cfg = cfg or RenderConfig()
    h, w = cam.height, cam.width
    color = np.zeros((h, w, 3))
    alpha = np.zeros((h, w))
    depth_med = np.full((h, w), SENTINEL_DEPTH)
    depth_corr = np.full((h, w), SENTINEL_DEPTH)
    for py in range(h):
        for px in range(w):
            recs = pixel_records(scene, cam, cfg, px, py)
            c, a, dm, dc, _ = render_pixel(recs, cfg, scene.background)
            color[py, px] = c
            alpha[py, px] = a
            depth_med[py, px] = dm
            depth_corr[py, px] = dc
    return color, alpha, depth_med, depth_corr


def normal_from_depth(depth: np.ndarray, cam: Camera) -> np.ndarray:
    """Camera-space normals from a z-depth map via finite differences.

    Central differences in the interior, one-sided at image borders; any
    pixel whose own depth or needed neighbors are sentinels gets a zero
    normal. Normals are oriented toward the camera.
    """
    h, w = depth.shape
    valid = depth > 0.0
    dirs = cam.pixel_ray_dirs()
    pts = depth[..., None] * dirs

    xs = np.arange(w)
    ys = np.arange(h)
    xl = np.maximum(xs - 1, 0)
    xr = np.minimum(xs + 1, w - 1)
    yl = np.maximum(ys - 1, 0)
    yr = np.minimum(ys + 1, h - 1)

    inv_x = np.zeros(w)
    span_x = (xr - xl).astype(np.float64)
    inv_x[span_x > 0] = 1.0 / span_x[span_x > 0]
    inv_y = np.zeros(h)
    span_y = (yr - yl).astype(np.float64)
    inv_y[span_y > 0] = 1.0 / span_y[span_y > 0]

    gx = (pts[:, xr] - pts[:, xl]) * inv_x[None, :, None]
    gy = (pts[yr] - pts[yl]) * inv_y[:, None, None]
    ok = (valid & valid[:, xl] & valid[:, xr] & valid[yl] & valid[yr]
          & (span_x > 0)[None, :] & (span_y > 0)[:, None])

    n = np.cross(gx, gy)
    norm = np.linalg.norm(n, axis=-1)
    ok &= norm > 0
    n = np.where(ok[..., None], n / np.maximum(norm, 1e-300)[..., None], 0.0)
    flip = np.sum(n * pts, axis=-1) > 0.0
    n = np.where(flip[..., None], -n, n)
    return n
