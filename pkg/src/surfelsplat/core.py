"""Core scene types: surfels, pinhole cameras, and view-dependent color.

A surfel is a flat elliptical Gaussian disk sitting in 3D: a center, an
orthonormal tangent frame spanning the disk plane, two positive scales, an
opacity, and spherical-harmonic color coefficients. Scenes store surfels in
struct-of-arrays form so the renderer can stay fully vectorized; the
``Surfel`` dataclass is the per-primitive view used for construction, I/O
and tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Real SH basis constants, degrees 0..3 (same layout as common splatting code).
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

SH_DC_OFFSET = 0.5
MAX_SH_DEGREE = 3


def num_sh_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def sh_degree_from_count(n: int) -> int:
    degree = int(round(np.sqrt(n))) - 1
    if num_sh_coeffs(degree) != n or not (0 <= degree <= MAX_SH_DEGREE):
        raise ValueError(f"coefficient count {n} is not (L+1)^2 for L in 0..{MAX_SH_DEGREE}")
    return degree


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the real SH basis at unit directions.

    dirs: (..., 3) unit vectors. Returns (..., (degree+1)^2) basis values.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    norms = np.linalg.norm(dirs, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= 1e-6):
        raise ValueError("sh_basis requires unit view directions")
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (num_sh_coeffs(degree),), dtype=np.float64)
    out[..., 0] = SH_C0
    if degree >= 1:
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[..., 4] = SH_C2[0] * xy
        out[..., 5] = SH_C2[1] * yz
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * xz
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = SH_C3[1] * xy * z
        out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Jacobian of sh_basis w.r.t. the (unnormalized-direction) components.

    Returns (..., n_coeffs, 3) with d basis_k / d dir_j at the given unit dirs.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    n = num_sh_coeffs(degree)
    grad = np.zeros(dirs.shape[:-1] + (n, 3), dtype=np.float64)
    zero = np.zeros_like(x)
    if degree >= 1:
        grad[..., 1, 1] = -SH_C1
        grad[..., 2, 2] = SH_C1
        grad[..., 3, 0] = -SH_C1
    if degree >= 2:
        grad[..., 4, 0] = SH_C2[0] * y
        grad[..., 4, 1] = SH_C2[0] * x
        grad[..., 5, 1] = SH_C2[1] * z
        grad[..., 5, 2] = SH_C2[1] * y
        grad[..., 6, 0] = SH_C2[2] * (-2.0 * x)
        grad[..., 6, 1] = SH_C2[2] * (-2.0 * y)
        grad[..., 6, 2] = SH_C2[2] * (4.0 * z)
        grad[..., 7, 0] = SH_C2[3] * z
        grad[..., 7, 2] = SH_C2[3] * x
        grad[..., 8, 0] = SH_C2[4] * (2.0 * x)
        grad[..., 8, 1] = SH_C2[4] * (-2.0 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        grad[..., 9, 0] = SH_C3[0] * (6.0 * x * y)
        grad[..., 9, 1] = SH_C3[0] * (3.0 * xx - 3.0 * yy)
        grad[..., 9, 2] = zero
        grad[..., 10, 0] = SH_C3[1] * y * z
        grad[..., 10, 1] = SH_C3[1] * x * z
        grad[..., 10, 2] = SH_C3[1] * x * y
        grad[..., 11, 0] = SH_C3[2] * (-2.0 * x * y)
        grad[..., 11, 1] = SH_C3[2] * (4.0 * zz - xx - 3.0 * yy)
        grad[..., 11, 2] = SH_C3[2] * (8.0 * y * z)
        grad[..., 12, 0] = SH_C3[3] * (-6.0 * x * z)
        grad[..., 12, 1] = SH_C3[3] * (-6.0 * y * z)
        grad[..., 12, 2] = SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
        grad[..., 13, 0] = SH_C3[4] * (4.0 * zz - 3.0 * xx - yy)
        grad[..., 13, 1] = SH_C3[4] * (-2.0 * x * y)
        grad[..., 13, 2] = SH_C3[4] * (8.0 * x * z)
        grad[..., 14, 0] = SH_C3[5] * (2.0 * x * z)
        grad[..., 14, 1] = SH_C3[5] * (-2.0 * y * z)
        grad[..., 14, 2] = SH_C3[5] * (xx - yy)
        grad[..., 15, 0] = SH_C3[6] * (3.0 * xx - 3.0 * yy)
        grad[..., 15, 1] = SH_C3[6] * (-6.0 * x * y)
        grad[..., 15, 2] = zero
    return grad


def sh_eval(coeffs: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """View-dependent RGB from SH coefficients.

    coeffs: (K, 3) with K = (L+1)^2; view_dir: unit 3-vector. Returns the
    DC-offset, non-negativity-clamped color. Batched forms (N, K, 3) with
    (N, 3) dirs are accepted.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    degree = sh_degree_from_count(coeffs.shape[-2])
    basis = sh_basis(view_dir, degree)
    raw = np.einsum("...k,...kc->...c", basis, coeffs) + SH_DC_OFFSET
    return np.maximum(raw, 0.0)


def normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def splat_normal(surfel: "Surfel", cam_pos: np.ndarray) -> np.ndarray:
    """Unit surfel normal, sign-flipped to face the given camera position."""
    n = np.cross(surfel.tangent_u, surfel.tangent_v)
    n = n / np.linalg.norm(n)
    if np.dot(n, np.asarray(cam_pos, dtype=np.float64) - surfel.center) < 0.0:
        n = -n
    return n


def orthonormalize_tangents(tangent_u: np.ndarray, tangent_v: np.ndarray):
    """Gram-Schmidt on (N, 3) tangent arrays; returns new arrays."""
    tu = tangent_u / np.linalg.norm(tangent_u, axis=-1, keepdims=True)
    tv = tangent_v - np.sum(tangent_v * tu, axis=-1, keepdims=True) * tu
    tv = tv / np.linalg.norm(tv, axis=-1, keepdims=True)
    return tu, tv


@dataclass
class Surfel:
    """One 2D Gaussian disk primitive (world units)."""

    center: np.ndarray          # (3,)
    tangent_u: np.ndarray       # (3,) unit
    tangent_v: np.ndarray       # (3,) unit, orthogonal to tangent_u
    scale: np.ndarray           # (2,) positive
    opacity: float              # in [0, 1]
    sh_coeffs: np.ndarray       # (K, 3), K = (L+1)^2

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.tangent_u = np.asarray(self.tangent_u, dtype=np.float64).reshape(3)
        self.tangent_v = np.asarray(self.tangent_v, dtype=np.float64).reshape(3)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(2)
        self.opacity = float(self.opacity)
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64).reshape(-1, 3)

    def validate(self, tol: float = 1e-6):
        if abs(np.linalg.norm(self.tangent_u) - 1.0) > tol:
            raise ValueError("tangent_u is not unit length")
        if abs(np.linalg.norm(self.tangent_v) - 1.0) > tol:
            raise ValueError("tangent_v is not unit length")
        if abs(np.dot(self.tangent_u, self.tangent_v)) > tol:
            raise ValueError("tangent frame is not orthogonal")
        if not np.all(self.scale > 0.0):
            raise ValueError("scale components must be positive")
        if not (0.0 <= self.opacity <= 1.0):
            raise ValueError("opacity outside [0, 1]")
        sh_degree_from_count(self.sh_coeffs.shape[0])


@dataclass
class Camera:
    """Pinhole camera: intrinsics in pixels plus a rigid world-to-camera pose.

    Convention: x_cam = R @ x_world + t, camera looks along +z, image x
    right / y down, pixel (row i, col j) samples the ray through (j, i).
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray        # (3, 3)
    translation: np.ndarray     # (3,)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def validate(self, tol: float = 1e-8):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > tol:
            raise ValueError(f"rotation is not orthonormal (max deviation {err:.3e})")

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_cam(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def cam_to_world(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return (pts - self.translation) @ self.rotation

    def pixel_ray_dirs(self) -> np.ndarray:
        """Camera-space ray directions, (H, W, 3), z component fixed to 1.

        With this parameterization the ray parameter t equals camera-space
        depth, so intersection depths come out as z-depth directly.
        """
        xs = (np.arange(self.width, dtype=np.float64) - self.cx) / self.fx
        ys = (np.arange(self.height, dtype=np.float64) - self.cy) / self.fy
        d = np.empty((self.height, self.width, 3), dtype=np.float64)
        d[..., 0] = xs[None, :]
        d[..., 1] = ys[:, None]
        d[..., 2] = 1.0
        return d

    @staticmethod
    def look_at(position, target, width, height, focal, up=(0.0, 0.0, 1.0),
                cx=None, cy=None) -> "Camera":
        position = np.asarray(position, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        z_axis = normalize(target - position)
        x_axis = np.cross(z_axis, np.asarray(up, dtype=np.float64))
        nx = np.linalg.norm(x_axis)
        if nx < 1e-12:
            raise ValueError("view direction is parallel to the up vector")
        x_axis = x_axis / nx
        y_axis = np.cross(z_axis, x_axis)
        rotation = np.stack([x_axis, y_axis, z_axis], axis=0)
        translation = -rotation @ position
        return Camera(
            width=width, height=height, fx=focal, fy=focal,
            cx=width / 2.0 if cx is None else cx,
            cy=height / 2.0 if cy is None else cy,
            rotation=rotation, translation=translation,
        )


@dataclass
class Scene:
    """Ordered surfel collection in struct-of-arrays layout."""

    centers: np.ndarray          # (N, 3)
    tangent_u: np.ndarray        # (N, 3)
    tangent_v: np.ndarray        # (N, 3)
    scales: np.ndarray           # (N, 2)
    opacities: np.ndarray        # (N,)
    sh: np.ndarray               # (N, K, 3)
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scene_radius: float = 1.0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        n = self.centers.shape[0]
        self.tangent_u = np.asarray(self.tangent_u, dtype=np.float64).reshape(n, 3)
        self.tangent_v = np.asarray(self.tangent_v, dtype=np.float64).reshape(n, 3)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 2)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        self.sh = np.asarray(self.sh, dtype=np.float64)
        if self.sh.ndim != 3 or self.sh.shape[0] != n or self.sh.shape[2] != 3:
            raise ValueError("sh must have shape (N, K, 3)")
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        self.scene_radius = float(self.scene_radius)

    def __len__(self) -> int:
        return self.centers.shape[0]

    def __getitem__(self, i: int) -> Surfel:
        return Surfel(
            center=self.centers[i].copy(),
            tangent_u=self.tangent_u[i].copy(),
            tangent_v=self.tangent_v[i].copy(),
            scale=self.scales[i].copy(),
            opacity=float(self.opacities[i]),
            sh_coeffs=self.sh[i].copy(),
        )

    @property
    def sh_degree(self) -> int:
        return sh_degree_from_count(self.sh.shape[1])

    @staticmethod
    def from_surfels(surfels, background=(0.0, 0.0, 0.0), scene_radius=1.0) -> "Scene":
        surfels = list(surfels)
        if not surfels:
            k = 1
            return Scene(
                centers=np.zeros((0, 3)), tangent_u=np.zeros((0, 3)),
                tangent_v=np.zeros((0, 3)), scales=np.zeros((0, 2)),
                opacities=np.zeros(0), sh=np.zeros((0, k, 3)),
                background=background, scene_radius=scene_radius,
            )
        k = surfels[0].sh_coeffs.shape[0]
        return Scene(
            centers=np.stack([s.center for s in surfels]),
            tangent_u=np.stack([s.tangent_u for s in surfels]),
            tangent_v=np.stack([s.tangent_v for s in surfels]),
            scales=np.stack([s.scale for s in surfels]),
            opacities=np.array([s.opacity for s in surfels]),
            sh=np.stack([s.sh_coeffs for s in surfels]).reshape(-1, k, 3),
            background=background, scene_radius=scene_radius,
        )

    def validate(self, tol: float = 1e-6):
        if self.scene_radius <= 0:
            raise ValueError("scene_radius must be positive")
        for i in range(len(self)):
            self[i].validate(tol)


def scene_radius_from_cameras(cameras) -> float:
    """Radius of the bounding sphere of the camera centers (centroid-based)."""
    centers = np.stack([c.position for c in cameras])
    centroid = centers.mean(axis=0)
    return float(np.linalg.norm(centers - centroid, axis=1).max())
