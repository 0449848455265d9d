"""Sliding-window voxel occupancy map with a truncated Euclidean distance field.

Occupancy is addressed by world position: voxel (i, j, k) covers the world
box [origin + idx, origin + idx + 1) * resolution, where `origin` is the
integer voxel index of the window's low corner.  Sliding the window changes
`origin` and copies the overlapping occupancy, so an occupied voxel never
moves in world coordinates.

The distance field stores, per voxel center, the Euclidean distance to the
nearest occupied voxel center, truncated at `truncation_radius`.  It is
computed exactly (per-axis min-convolution with squared integer offsets,
equivalent to a brute-force scan up to the truncation), then queried with
trilinear interpolation, whose analytic gradient feeds the planner.

Concurrency: single writer.  insert_cloud / slide_window / recompute mutate
under exclusive access; queries are read-only and safe to run concurrently
between mutations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import WORLD

_INT_INF = np.int64(1) << 40


class StaleFieldError(RuntimeError):
    """Distance field queried after occupancy changed without a recompute."""


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (n, 3) meters
    frame: str = WORLD

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.isfinite(pts).all():
            raise ValueError("point cloud must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


class OccupancyMap:
    """Binary-occupancy voxel window (hit-count threshold of one)."""

    def __init__(
        self,
        resolution: float = 0.2,
        window_size=(100, 100, 100),
        center=(0.0, 0.0, 0.0),
        truncation_radius: float = 2.0,
    ):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        if truncation_radius <= 0:
            raise ValueError("truncation_radius must be positive")
        size = np.asarray(window_size, dtype=int).reshape(3)
        if (size < 1).any():
            raise ValueError("window_size must be >= 1 voxel per axis")
        self.resolution = float(resolution)
        self.window_size = size
        self.truncation_radius = float(truncation_radius)
        self.origin = self._origin_for(np.asarray(center, dtype=float))
        self.occupied = np.zeros(size, dtype=bool)
        self._dist = np.full(size, self.truncation_radius)
        self._stale = False
        self._pending: list[np.ndarray] = []  # voxels occupied since _dist was valid
        self._needs_full = False
        self._kernel = None

    def _origin_for(self, center: np.ndarray) -> np.ndarray:
        return np.floor(center / self.resolution + 0.5).astype(np.int64) - self.window_size // 2

    # -- addressing ---------------------------------------------------------

    @property
    def center(self) -> np.ndarray:
        """World position of the window center (voxel-snapped)."""
        return (self.origin + self.window_size / 2.0) * self.resolution

    @property
    def stale(self) -> bool:
        return self._stale

    def world_to_index(self, points: np.ndarray) -> np.ndarray:
        """Integer voxel indices (window-relative) of world points."""
        return np.floor(np.asarray(points, float) / self.resolution).astype(np.int64) - self.origin

    def index_to_world(self, idx: np.ndarray) -> np.ndarray:
        """World coordinates of voxel centers."""
        return (np.asarray(idx) + self.origin + 0.5) * self.resolution

    def _in_window(self, idx: np.ndarray) -> np.ndarray:
        return ((idx >= 0) & (idx < self.window_size)).all(axis=-1)

    # -- mutation -----------------------------------------------------------

    def insert_cloud(self, cloud) -> np.ndarray:
        """Mark the voxels containing world-frame points occupied.

        Out-of-window points are dropped.  Returns the world centers of the
        voxels that became occupied, shape (k, 3); the distance field goes
        stale only if k > 0.
        """
        if isinstance(cloud, PointCloud):
            if cloud.frame != WORLD:
                raise ValueError(f"cloud must be in the world frame, got {cloud.frame!r}")
            pts = cloud.points
        else:
            pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
        if pts.shape[0] == 0:
            return np.empty((0, 3))
        idx = self.world_to_index(pts)
        idx = idx[self._in_window(idx)]
        if idx.shape[0] == 0:
            return np.empty((0, 3))
        i, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
        fresh = ~self.occupied[i, j, k]
        if not fresh.any():
            return np.empty((0, 3))
        new_idx = np.unique(idx[fresh], axis=0)
        self.occupied[new_idx[:, 0], new_idx[:, 1], new_idx[:, 2]] = True
        self._pending.append(new_idx)
        self._stale = True
        return self.index_to_world(new_idx)

    def slide_window(self, new_center) -> None:
        """Re-anchor the window; overlapping occupancy is preserved bit-exactly."""
        new_origin = self._origin_for(np.asarray(new_center, dtype=float))
        shift = new_origin - self.origin
        if not shift.any():
            return
        new_occ = np.zeros_like(self.occupied)
        src_lo = np.maximum(shift, 0)
        src_hi = np.minimum(self.window_size, self.window_size + shift)
        if (src_hi > src_lo).all():
            dst_lo = src_lo - shift
            dst_hi = src_hi - shift
            new_occ[
                dst_lo[0] : dst_hi[0], dst_lo[1] : dst_hi[1], dst_lo[2] : dst_hi[2]
            ] = self.occupied[
                src_lo[0] : src_hi[0], src_lo[1] : src_hi[1], src_lo[2] : src_hi[2]
            ]
        self.occupied = new_occ
        self.origin = new_origin
        self._stale = True
        self._needs_full = True

    def recompute_distance_field(self) -> None:
        """Exact truncated Euclidean distance transform of the occupancy."""
        trunc = self.truncation_radius
        self._pending = []
        self._needs_full = False
        if not self.occupied.any():
            self._dist = np.full(self.window_size, trunc)
            self._stale = False
            return
        reach = int(np.ceil(trunc / self.resolution))
        # Only the box within `reach` of occupied voxels can fall below the
        # truncation; everything else is exactly trunc.
        occ_idx = np.argwhere(self.occupied)
        lo = np.maximum(occ_idx.min(axis=0) - reach, 0)
        hi = np.minimum(occ_idx.max(axis=0) + reach + 1, self.window_size)
        sub = self.occupied[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
        d2 = np.where(sub, np.int64(0), _INT_INF)
        for axis in range(3):
            d2 = _axis_min_convolve(d2, axis, reach)
        np.minimum(d2, np.int64(reach) * reach + 1, out=d2)
        dist = np.full(self.window_size, trunc)
        dist[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = np.minimum(
            np.sqrt(d2.astype(float)) * self.resolution, trunc
        )
        self._dist = dist
        self._stale = False

    def refresh_distance_field(self, full_threshold: int = 512) -> None:
        """Bring the distance field up to date as cheaply as possible.

        Newly occupied voxels only ever lower distances, so while the window
        has not moved the field can be repaired exactly by stamping each new
        voxel's truncated distance kernel.  Falls back to the full transform
        after a slide or when too many voxels are pending.
        """
        if not self._stale:
            return
        n_pending = sum(p.shape[0] for p in self._pending)
        if self._needs_full or n_pending > full_threshold:
            self.recompute_distance_field()
            return
        kernel, reach = self._distance_kernel()
        n = self.window_size
        for batch in self._pending:
            for v in batch:
                lo = np.maximum(v - reach, 0)
                hi = np.minimum(v + reach + 1, n)
                klo = lo - (v - reach)
                khi = klo + (hi - lo)
                np.minimum(
                    self._dist[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]],
                    kernel[klo[0] : khi[0], klo[1] : khi[1], klo[2] : khi[2]],
                    out=self._dist[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]],
                )
        self._pending = []
        self._stale = False

    def _distance_kernel(self):
        reach = int(np.ceil(self.truncation_radius / self.resolution))
        if self._kernel is None or self._kernel.shape[0] != 2 * reach + 1:
            ax = np.arange(-reach, reach + 1)
            d2 = ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2
            self._kernel = np.minimum(
                np.sqrt(d2.astype(float)) * self.resolution, self.truncation_radius
            )
        return self._kernel, reach

    # -- queries ------------------------------------------------------------

    @property
    def distance_field(self) -> np.ndarray:
        if self._stale:
            raise StaleFieldError("distance field is stale; call recompute_distance_field()")
        return self._dist

    def query_distance(self, p) -> tuple[float, np.ndarray, bool]:
        """Interpolated obstacle distance and its gradient at a world point.

        Returns (distance, gradient, inside); out-of-window queries are
        clamped to the window boundary and flagged inside=False.
        """
        d, g, inside = self.query_distance_batch(np.asarray(p, float).reshape(1, 3))
        return float(d[0]), g[0], bool(inside[0])

    def query_distance_batch(self, points: np.ndarray):
        """Vectorized query_distance over an (n, 3) array of world points."""
        if self._stale:
            raise StaleFieldError("distance field is stale; call recompute_distance_field()")
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        # Continuous grid coordinates: voxel centers sit at integer grid coords.
        g = pts / self.resolution - self.origin - 0.5
        inside = ((g >= 0.0) & (g <= self.window_size - 1)).all(axis=1)
        base = np.clip(np.floor(g).astype(np.int64), 0, self.window_size - 2)
        frac = np.clip(g - base, 0.0, 1.0)

        fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
        corners = np.empty((pts.shape[0], 2, 2, 2))
        for di in (0, 1):
            for dj in (0, 1):
                for dk in (0, 1):
                    corners[:, di, dj, dk] = self._dist[
                        base[:, 0] + di, base[:, 1] + dj, base[:, 2] + dk
                    ]
        c_z = corners[..., 0] * (1 - fz)[:, None, None] + corners[..., 1] * fz[:, None, None]
        c_yz = c_z[:, :, 0] * (1 - fy)[:, None] + c_z[:, :, 1] * fy[:, None]
        dist = c_yz[:, 0] * (1 - fx) + c_yz[:, 1] * fx

        grad = np.empty_like(pts)
        grad[:, 0] = (c_yz[:, 1] - c_yz[:, 0]) / self.resolution
        c_xz = c_z[:, 0, :] * (1 - fx)[:, None] + c_z[:, 1, :] * fx[:, None]
        grad[:, 1] = (c_xz[:, 1] - c_xz[:, 0]) / self.resolution
        c_xy = corners[:, 0] * (1 - fx)[:, None, None] + corners[:, 1] * fx[:, None, None]
        c_xy = c_xy[:, 0, :] * (1 - fy)[:, None] + c_xy[:, 1, :] * fy[:, None]
        grad[:, 2] = (c_xy[:, 1] - c_xy[:, 0]) / self.resolution
        return dist, grad, inside

    # -- debug export -------------------------------------------------------

    def write_voxels_csv(self, path, include_free: bool = False) -> int:
        """Dump voxels as `x,y,z,occupied` rows; returns the row count."""
        if include_free:
            idx = np.argwhere(np.ones_like(self.occupied))
        else:
            idx = np.argwhere(self.occupied)
        centers = self.index_to_world(idx)
        occ = self.occupied[idx[:, 0], idx[:, 1], idx[:, 2]].astype(int)
        with open(path, "w") as fh:
            fh.write("x,y,z,occupied\n")
            for (x, y, z), o in zip(centers, occ):
                fh.write(f"{x:.6f},{y:.6f},{z:.6f},{o}\n")
        return idx.shape[0]


def _axis_min_convolve(d2: np.ndarray, axis: int, reach: int) -> np.ndarray:
    """out[i] = min over |s| <= reach of d2[i+s] + s*s along `axis`."""
    out = np.full_like(d2, _INT_INF)
    n = d2.shape[axis]
    for s in range(-reach, reach + 1):
        src_lo, src_hi = max(0, s), min(n, n + s)
        if src_lo >= src_hi:
            continue
        dst = [slice(None)] * 3
        src = [slice(None)] * 3
        dst[axis] = slice(src_lo - s, src_hi - s)
        src[axis] = slice(src_lo, src_hi)
        np.minimum(out[tuple(dst)], d2[tuple(src)] + s * s, out=out[tuple(dst)])
    return out
