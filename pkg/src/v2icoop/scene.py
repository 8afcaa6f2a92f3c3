"""Synthetic two-viewpoint scenes and their BEV rasterisation.

Both views are rasterised into one global grid. A cell is hidden from a
sensor when the segment from the sensor to the cell centre crosses the
interior of a box other than the one the cell belongs to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import intersection_area, point_in_box, segment_hits_box, to_box_frame

INPUT_CHANNELS = 3  # occupancy, height proxy, intensity proxy
VIEWS = ("vehicle", "infrastructure")


class SceneError(RuntimeError):
    pass


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    x_range: tuple = (-12.8, 12.8)
    y_range: tuple = (-12.8, 12.8)
    resolution: float = 0.4


@dataclass(frozen=True)
class GridGeometry:
    x_min: float
    y_min: float
    resolution: float
    height: int  # rows, along y
    width: int  # columns, along x

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def diagonal(self):
        return math.hypot(self.height * self.resolution, self.width * self.resolution)

    def cell_centers(self):
        """(X, Y) arrays of shape (H, W) in meters."""
        xs = self.x_min + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.y_min + (np.arange(self.height) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)

    def cell_of(self, x, y):
        """(row, col) of the cell containing the point."""
        return (int(math.floor((y - self.y_min) / self.resolution)),
                int(math.floor((x - self.x_min) / self.resolution)))

    def contains(self, x, y):
        r, c = self.cell_of(x, y)
        return 0 <= r < self.height and 0 <= c < self.width


def grid_geometry_from_config(config: GridConfig) -> GridGeometry:
    (x0, x1), (y0, y1), res = config.x_range, config.y_range, config.resolution
    if res <= 0 or x1 <= x0 or y1 <= y0:
        raise GeometryError(f"range and resolution must be positive: x={config.x_range} y={config.y_range} res={res}")
    cells = []
    for extent in (x1 - x0, y1 - y0):
        n = extent / res
        if abs(n - round(n)) > 1e-6:
            raise GeometryError(f"extent {extent} m is not a whole number of {res} m cells ({n:.4f})")
        cells.append(int(round(n)))
    return GridGeometry(x_min=float(x0), y_min=float(y0), resolution=float(res),
                        height=cells[1], width=cells[0])


@dataclass(frozen=True)
class GroundTruthBox:
    cx: float
    cy: float
    length: float
    width: float
    yaw: float
    cls: int = 0

    def as_array(self):
        return np.array([self.cx, self.cy, self.length, self.width, self.yaw])


@dataclass
class Scene:
    objects: list
    vehicle_pose: tuple
    infrastructure_pose: tuple

    def boxes(self):
        if not self.objects:
            return np.zeros((0, 5))
        return np.stack([o.as_array() for o in self.objects])

    def sensor(self, view):
        if view == "vehicle":
            return self.vehicle_pose
        if view == "infrastructure":
            return self.infrastructure_pose
        raise ValueError(f"unknown view {view!r}")


@dataclass(frozen=True)
class SceneConfig:
    min_objects: int = 3
    max_objects: int = 6
    length_range: tuple = (3.0, 4.6)
    width_range: tuple = (1.6, 2.0)
    min_separation: float = 1.0
    force_occlusion: bool = False
    vehicle_x: tuple = (-11.0, -8.0)
    vehicle_y: tuple = (-4.0, 4.0)
    infra_x: tuple = (8.0, 11.0)
    infra_y: tuple = (-10.0, 10.0)
    edge_margin: float = 1.5
    sensor_clearance: float = 2.0
    max_retries: int = 500


@dataclass
class BevObservation:
    grid: np.ndarray  # (H, W, 3)
    view: str
    visible: np.ndarray = field(default=None, repr=False)  # (H, W) bool, cells drawn


def wrap_angle(a):
    """Map to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def line_of_sight_blocked(boxes, ox, oy, px, py, skip=()):
    for i, b in enumerate(boxes):
        if i in skip:
            continue
        if bool(segment_hits_box(b, ox, oy, np.array(px), np.array(py))):
            return True
    return False


def _box_ok(box, placed, scene_cfg, geometry, sensors):
    cx, cy = box[0], box[1]
    m = scene_cfg.edge_margin
    x0 = geometry.x_min + m
    y0 = geometry.y_min + m
    x1 = geometry.x_min + geometry.width * geometry.resolution - m
    y1 = geometry.y_min + geometry.height * geometry.resolution - m
    if not (x0 <= cx < x1 and y0 <= cy < y1):
        return False
    grown = np.array([cx, cy, box[2] + scene_cfg.sensor_clearance * 2, box[3] + scene_cfg.sensor_clearance * 2, box[4]])
    for sx, sy, _ in sensors:
        if point_in_box(grown, sx, sy):
            return False
    sep = scene_cfg.min_separation
    inflated = np.array([cx, cy, box[2] + sep, box[3] + sep, box[4]])
    for other in placed:
        reach = (math.hypot(box[2], box[3]) + math.hypot(other[2], other[3])) / 2 + 2 * sep
        if math.hypot(other[0] - cx, other[1] - cy) > reach:
            continue
        if intersection_area(inflated, np.array([other[0], other[1], other[2] + sep, other[3] + sep, other[4]])) > 0:
            return False
    return True


def _random_box(rng, cfg, cx, cy, yaw=None):
    length = rng.uniform(*cfg.length_range)
    width = rng.uniform(*cfg.width_range)
    width = min(width, length)
    if yaw is None:
        yaw = rng.uniform(-math.pi, math.pi)
    return np.array([cx, cy, length, width, wrap_angle(yaw)])


def occluded_pairs(scene):
    """Indices of objects whose centre is hidden from the vehicle but seen by the infrastructure."""
    boxes = scene.boxes()
    vx, vy, _ = scene.vehicle_pose
    ix, iy, _ = scene.infrastructure_pose
    out = []
    for i, b in enumerate(boxes):
        hidden = line_of_sight_blocked(boxes, vx, vy, b[0], b[1], skip=(i,))
        seen = not line_of_sight_blocked(boxes, ix, iy, b[0], b[1], skip=(i,))
        if hidden and seen:
            out.append(i)
    return out


def generate_scene(scene_cfg: SceneConfig, geometry: GridGeometry, seed: int) -> Scene:
    """Deterministic scene for ``seed``; raises SceneError when placement keeps failing."""
    rng = np.random.default_rng(seed)
    n_target = int(rng.integers(scene_cfg.min_objects, scene_cfg.max_objects + 1))
    if scene_cfg.force_occlusion and n_target < 2:
        raise SceneError("force_occlusion needs at least 2 objects (occluder and hidden box)")
    x_span = geometry.width * geometry.resolution
    y_span = geometry.height * geometry.resolution

    for _ in range(scene_cfg.max_retries):
        vehicle = (rng.uniform(*scene_cfg.vehicle_x), rng.uniform(*scene_cfg.vehicle_y), rng.uniform(-0.3, 0.3))
        infra = (rng.uniform(*scene_cfg.infra_x), rng.uniform(*scene_cfg.infra_y), rng.uniform(-math.pi, math.pi))
        sensors = (vehicle, infra)
        placed = []
        if scene_cfg.force_occlusion:
            pair = _place_occlusion_pair(rng, scene_cfg, geometry, vehicle, infra)
            if pair is None:
                continue
            placed.extend(pair)
        attempts = 0
        while len(placed) < n_target and attempts < scene_cfg.max_retries:
            attempts += 1
            cx = geometry.x_min + rng.uniform(0, x_span)
            cy = geometry.y_min + rng.uniform(0, y_span)
            box = _random_box(rng, scene_cfg, cx, cy)
            if _box_ok(box, placed, scene_cfg, geometry, sensors):
                placed.append(box)
        if len(placed) < n_target:
            continue
        scene = Scene([GroundTruthBox(*map(float, b), cls=0) for b in placed], vehicle, infra)
        if scene_cfg.force_occlusion and not occluded_pairs(scene):
            continue
        return scene
    raise SceneError(
        f"could not place {n_target} boxes with min_separation={scene_cfg.min_separation} "
        f"(force_occlusion={scene_cfg.force_occlusion}) after {scene_cfg.max_retries} retries")


def _place_occlusion_pair(rng, cfg, geometry, vehicle, infra):
    vx, vy, _ = vehicle
    for _ in range(50):
        theta = rng.uniform(-0.6, 0.6)
        d1 = rng.uniform(4.0, 7.0)
        d2 = d1 + rng.uniform(3.5, 6.0)
        ux, uy = math.cos(theta), math.sin(theta)
        occluder = _random_box(rng, cfg, vx + d1 * ux, vy + d1 * uy,
                               yaw=theta + math.pi / 2 + rng.uniform(-0.3, 0.3))
        hidden = _random_box(rng, cfg, vx + d2 * ux, vy + d2 * uy)
        sensors = (vehicle, infra)
        if not _box_ok(occluder, [], cfg, geometry, sensors):
            continue
        if not _box_ok(hidden, [occluder], cfg, geometry, sensors):
            continue
        pair = [occluder, hidden]
        if not line_of_sight_blocked(pair, vx, vy, hidden[0], hidden[1], skip=(1,)):
            continue
        if line_of_sight_blocked(pair, infra[0], infra[1], hidden[0], hidden[1], skip=(1,)):
            continue
        return pair
    return None


def rasterize_view(scene: Scene, view: str, geometry: GridGeometry) -> BevObservation:
    """Draw the boxes visible from ``view`` into an (H, W, 3) grid."""
    ox, oy, _ = scene.sensor(view)
    grid = np.zeros((geometry.height, geometry.width, INPUT_CHANNELS))
    visible = np.zeros(geometry.shape, dtype=bool)
    boxes = scene.boxes()
    if len(boxes) == 0:
        return BevObservation(grid, view, visible)
    xs, ys = geometry.cell_centers()
    for i, b in enumerate(boxes):
        inside = point_in_box(b, xs, ys)
        if not inside.any():
            continue
        rows, cols = np.nonzero(inside)
        px, py = xs[rows, cols], ys[rows, cols]
        blocked = np.zeros(rows.shape, dtype=bool)
        for j, other in enumerate(boxes):
            if j != i:
                blocked |= segment_hits_box(other, ox, oy, px, py)
        keep = ~blocked
        rows, cols, px, py = rows[keep], cols[keep], px[keep], py[keep]
        u, v = to_box_frame(b, px, py)
        nu, nv = 2.0 * u / b[2], 2.0 * v / b[3]
        grid[rows, cols, 0] = 1.0
        grid[rows, cols, 1] = (0.6 + 0.2 * b[2]) * (1.0 - 0.3 * (nu * nu + nv * nv))
        grid[rows, cols, 2] = 0.4 * b[3] * (1.0 + 0.5 * nu)
        visible[rows, cols] = True
    return BevObservation(grid, view, visible)


# -- text fixtures -----------------------------------------------------------

def scene_to_text(scene: Scene) -> str:
    lines = [
        "# vehicle {!r} {!r} {!r}".format(*map(float, scene.vehicle_pose)),
        "# infrastructure {!r} {!r} {!r}".format(*map(float, scene.infrastructure_pose)),
    ]
    for o in scene.objects:
        lines.append(f"{o.cx!r} {o.cy!r} {o.length!r} {o.width!r} {o.yaw!r} {o.cls:d}")
    return "\n".join(lines) + "\n"


def scene_from_text(text: str) -> Scene:
    poses = {"vehicle": (0.0, 0.0, 0.0), "infrastructure": (0.0, 0.0, 0.0)}
    objects = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] in poses and len(parts) == 4:
                poses[parts[0]] = tuple(float(p) for p in parts[1:])
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"line {lineno}: expected 'cx cy l w yaw cls', got {line!r}")
        cx, cy, length, width, yaw = (float(p) for p in parts[:5])
        objects.append(GroundTruthBox(cx, cy, length, width, yaw, int(parts[5])))
    return Scene(objects, poses["vehicle"], poses["infrastructure"])
