"""
Quasi-static tabletop simulator

Objects are axis-aligned boxes moved kinematically along gripper waypoints.
A single frame stepper drives primitive execution, demonstration recording and
policy rollouts, so every consumer sees the same physics.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import geometry
from .config import RelationConfig, SimulationConfig
from .errors import (
    AmbiguousObject,
    EmptyPath,
    GripperBusy,
    GripperEmpty,
    NotArticulated,
    NotPressable,
    OutOfBounds,
    OverlappingSpawn,
    UnknownObject,
    WorldError,
)
from .models import (
    DEFAULT_STATE,
    STATE_LISTS,
    ActionFrame,
    ExecResult,
    GripperState,
    Kinematics,
    ObjectInstance,
    ObjectRecord,
    ObjectSpec,
    Observation,
    Pose,
    PrimitiveCall,
    SceneSpec,
    WorldState,
    split_label,
)

logger = logging.getLogger(__name__)

# gripper pointing down: x forward, z towards the table
DOWN = np.diag([1.0, -1.0, -1.0])
SPAWN_TOLERANCE = 1e-3
_EPS = 1e-9


@dataclass(frozen=True)
class _PlannedPose:
    pose: Pose
    closed: bool


class Simulator:
    """Deterministic world model executing the primitive action set"""

    def __init__(
        self,
        config: Optional[SimulationConfig] = None,
        relations: Optional[RelationConfig] = None,
    ):
        self.config = config or SimulationConfig()
        self.relations = relations or RelationConfig()

    # ========================================================================
    # SCENES AND OBSERVATION
    # ========================================================================

    def spawn_scene(self, spec: SceneSpec) -> WorldState:
        """
        Instantiate a scene

        Args:
            spec: object list, table bounds and seed

        Returns:
            WorldState with the gripper at its home pose

        Raises:
            OverlappingSpawn: two unrelated boxes interpenetrate
            OutOfBounds: an object center lies outside the table
        """
        counts: Dict[str, int] = {}
        objects: List[ObjectInstance] = []
        for i, obj_spec in enumerate(spec.objects):
            index = counts.get(obj_spec.category, 0)
            counts[obj_spec.category] = index + 1
            half = np.asarray(obj_spec.half_extents, dtype=float)
            if np.any(half <= 0.0):
                raise WorldError(f"{obj_spec.category}: half extents must be positive")
            objects.append(
                ObjectInstance(
                    id=f"obj{i}",
                    category=obj_spec.category,
                    instance_index=index,
                    state=self._initial_state(obj_spec.category, obj_spec.state),
                    pose=Pose(
                        np.asarray(obj_spec.position, dtype=float),
                        geometry.yaw_rotation(obj_spec.yaw),
                    ),
                    half_extents=half,
                    bbox_offset=np.asarray(obj_spec.bbox_offset, dtype=float),
                )
            )

        by_label = {obj.label: obj for obj in objects}
        for obj, obj_spec in zip(objects, spec.objects):
            obj.kinematics = self._initial_kinematics(obj_spec.kinematics, obj_spec, obj.state)
            if obj_spec.parent is not None:
                parent = by_label.get(obj_spec.parent)
                if parent is None:
                    raise UnknownObject(obj_spec.parent)
                obj.parent = parent.id

        world = WorldState(
            objects=objects,
            gripper=GripperState(pose=Pose(np.array(self.config.home_position, dtype=float), DOWN.copy())),
            table_bounds=spec.table_bounds,
            rng_seed=spec.seed,
            scene_id=spec.scene_id,
        )
        self._check_spawn(world)
        logger.debug("spawned scene %s with %d objects", spec.scene_id, len(objects))
        return world

    def _initial_state(self, category: str, state: Optional[str]) -> str:
        states = STATE_LISTS.get(category.split()[-1]) if category else None
        if states is None:
            if state not in (None, DEFAULT_STATE):
                raise WorldError(f"{category} has no state list, got {state!r}")
            return DEFAULT_STATE
        if state is None:
            return states[-1]
        if state not in states:
            raise WorldError(f"{category} state must be one of {states}, got {state!r}")
        return state

    def _initial_kinematics(self, kind: str, obj_spec: ObjectSpec, state: str) -> Kinematics:
        if kind == "prismatic":
            axis = np.asarray(obj_spec.axis, dtype=float)
            norm = np.linalg.norm(axis)
            if norm < _EPS:
                raise WorldError(f"{obj_spec.category}: prismatic axis must be non-zero")
            range_max = (
                obj_spec.range_max if obj_spec.range_max is not None else self.config.prismatic_range
            )
            current = range_max if state == "open" else 0.0
            unit = axis / norm
            return Kinematics(
                "prismatic", (float(unit[0]), float(unit[1]), float(unit[2])), float(range_max), float(current)
            )
        if kind not in ("free", "fixed"):
            raise WorldError(f"unsupported kinematics: {kind}")
        return Kinematics(kind)

    def _check_spawn(self, world: WorldState) -> None:
        (x0, x1), (y0, y1) = world.table_bounds
        for obj in world.objects:
            cx, cy, _ = obj.box_center
            if not (x0 <= cx <= x1 and y0 <= cy <= y1):
                raise OutOfBounds(f"{obj.label} at ({cx:.3f}, {cy:.3f}) is off the table")
        for i, a in enumerate(world.objects):
            for b in world.objects[i + 1:]:
                if a.parent == b.id or b.parent == a.id:
                    continue
                depth = geometry.interpenetration(a.aabb(), b.aabb())
                if depth > SPAWN_TOLERANCE:
                    raise OverlappingSpawn(
                        f"{a.label} and {b.label} interpenetrate by {depth * 1000:.1f} mm"
                    )

    def observe(self, world: WorldState) -> Observation:
        records = []
        for obj in world.objects:
            lo, hi = obj.aabb()
            records.append(
                ObjectRecord(
                    category=obj.category,
                    instance_index=obj.instance_index,
                    state=obj.state,
                    position=_triple(obj.pose.position),
                    x_range=(float(lo[0]), float(hi[0])),
                    y_range=(float(lo[1]), float(hi[1])),
                    z_range=(float(lo[2]), float(hi[2])),
                )
            )
        gripper = world.gripper
        return Observation(
            records=records,
            gripper_position=_triple(gripper.pose.position),
            gripper_closed=gripper.closed,
            holding=gripper.held is not None,
        )

    def resolve(self, world: WorldState, name: str) -> ObjectInstance:
        """Find an object by "category" or "category N" """
        category, index = split_label(name)
        if index is not None:
            for obj in world.objects:
                if obj.category == category and obj.instance_index == index:
                    return obj
        matches = [obj for obj in world.objects if obj.category == name.strip()]
        if len(matches) == 1:
            return matches[0]
        if len(matches) > 1:
            raise AmbiguousObject(name, len(matches))
        raise UnknownObject(name)

    # ========================================================================
    # PRIMITIVES
    # ========================================================================

    def exec_primitive(
        self,
        world: WorldState,
        call: PrimitiveCall,
        rng: Optional[np.random.Generator] = None,
    ) -> ExecResult:
        """
        Execute one primitive on a copy of the world

        Args:
            world: starting state, left untouched
            call: primitive invocation
            rng: jitter source; None executes the nominal waypoints

        Returns:
            ExecResult with the new world, the recorded action frames, the
            observation preceding each frame and the primitive's ok flag
        """
        world = world.copy()
        target = self._target_of(world, call)
        plan = self._waypoint_plan(world, call, target, rng)
        gripper = world.gripper
        path = [gripper.pose] + [p.pose for p in plan]
        schedule = [gripper.closed] + [p.closed for p in plan]
        motion = self.motion_to_actions(path, schedule)[1:]

        before = self._snapshot(world, call, target)
        observations = []
        for frame in motion:
            observations.append(self.observe(world))
            self.step(world, frame)
        ok = self._succeeded(world, call, target, before)
        if not ok:
            logger.debug("%s did not take effect", call.name)
        return ExecResult(world=world, motion=motion, observations=observations, ok=ok)

    def sample_waypoints(
        self,
        world: WorldState,
        call: PrimitiveCall,
        rng: Optional[np.random.Generator] = None,
    ) -> List[Pose]:
        target = self._target_of(world, call)
        return [p.pose for p in self._waypoint_plan(world, call, target, rng)]

    def gripper_schedule(
        self,
        world: WorldState,
        call: PrimitiveCall,
        rng: Optional[np.random.Generator] = None,
    ) -> List[bool]:
        target = self._target_of(world, call)
        return [p.closed for p in self._waypoint_plan(world, call, target, rng)]

    def _target_of(self, world: WorldState, call: PrimitiveCall) -> Optional[ObjectInstance]:
        """Resolve the call's object and check gripper preconditions"""
        gripper = world.gripper
        busy = gripper.held is not None or gripper.handle is not None
        if call.name in ("PlaceOn", "PlaceAt"):
            if gripper.held is None:
                raise GripperEmpty(f"{call.name} needs a held object")
            return self.resolve(world, call.obj_name) if call.name == "PlaceOn" else None
        if busy:
            raise GripperBusy(f"{call.name} needs an empty gripper")
        assert call.obj_name is not None
        obj = self.resolve(world, call.obj_name)
        if call.name in ("RevoluteJointOpen", "RevoluteJointClose"):
            raise NotArticulated(f"{obj.label} has no revolute joint")
        if call.name in ("PrismaticJointOpen", "PrismaticJointClose"):
            return self._handle_of(world, obj)
        if call.name == "Press" and not obj.category.endswith("button"):
            raise NotPressable(f"{obj.label} is not a button")
        return obj

    def _handle_of(self, world: WorldState, obj: ObjectInstance) -> ObjectInstance:
        if obj.kinematics.kind == "prismatic":
            for child in world.objects:
                if child.parent == obj.id and child.category.endswith("handle"):
                    return child
            raise NotArticulated(f"{obj.label} has no handle")
        if obj.parent is not None and world.get(obj.parent).kinematics.kind == "prismatic":
            return obj
        raise NotArticulated(f"{obj.label} is not attached to a prismatic joint")

    def _jitter(self, rng: Optional[np.random.Generator]) -> np.ndarray:
        if rng is None:
            return np.zeros(3)
        radius = self.config.jitter_radius * math.sqrt(rng.random())
        theta = 2.0 * math.pi * rng.random()
        return np.array([radius * math.cos(theta), radius * math.sin(theta), 0.0])

    def _pose(self, position: np.ndarray) -> Pose:
        return Pose(np.asarray(position, dtype=float), DOWN.copy())

    def _waypoint_plan(
        self,
        world: WorldState,
        call: PrimitiveCall,
        target: Optional[ObjectInstance],
        rng: Optional[np.random.Generator],
    ) -> List[_PlannedPose]:
        cfg = self.config
        jitter = self._jitter(rng)
        up = np.array([0.0, 0.0, cfg.clearance])

        def plan(*steps: Tuple[np.ndarray, bool]) -> List[_PlannedPose]:
            return [_PlannedPose(self._pose(position), closed) for position, closed in steps]

        if call.name == "Pick":
            assert target is not None
            top = _top_center(target) + jitter
            return plan(
                (top + up, False),
                (top, False),
                (top, True),
                (top + np.array([0.0, 0.0, cfg.z_lift]), True),
            )

        if call.name in ("PlaceOn", "PlaceAt"):
            held = world.get(world.gripper.held)  # type: ignore[arg-type]
            if call.name == "PlaceOn":
                assert target is not None
                center = _top_center(target) + jitter
                center[2] += held.box_half[2] + cfg.settle_eps
            else:
                assert call.place_pos is not None
                center = np.asarray(call.place_pos, dtype=float) + jitter
                center[:2] = self._clamp_xy(world, center[:2])
            release = center - held.bbox_offset - world.gripper.held_offset
            above = release + up
            return plan((above, True), (release, True), (release, False), (above, False))

        if call.name == "Push":
            assert target is not None and call.direction is not None
            direction = np.array([call.direction[0], call.direction[1], 0.0], dtype=float)
            u = direction / np.linalg.norm(direction)
            half = target.box_half + cfg.finger_radius
            contact = min(half[k] / abs(u[k]) for k in range(2) if abs(u[k]) > _EPS)
            center = target.box_center + jitter
            pre = center - u * (contact + cfg.push_margin)
            end = pre + u * (cfg.push_margin + float(call.distance or 0.0))
            above_pre = pre.copy()
            above_pre[2] = target.aabb()[1][2] + cfg.clearance
            above_end = end.copy()
            above_end[2] = above_pre[2]
            return plan(
                (above_pre, False),
                (pre, False),
                (pre, True),
                (end, True),
                (end, False),
                (above_end, False),
            )

        if call.name in ("PrismaticJointOpen", "PrismaticJointClose"):
            assert target is not None
            joint = world.get(target.parent)  # type: ignore[arg-type]
            goal = joint.kinematics.range_max if call.name == "PrismaticJointOpen" else 0.0
            grip = target.box_center + jitter
            pulled = grip + np.asarray(joint.kinematics.axis) * (goal - joint.kinematics.current)
            return plan(
                (grip + up, False),
                (grip, False),
                (grip, True),
                (pulled, True),
                (pulled, False),
                (pulled + up, False),
            )

        if call.name == "Press":
            assert target is not None
            button = target.box_center + jitter
            return plan(
                (button + up, False),
                (button, False),
                (button, True),
                (button, False),
                (button + up, False),
            )

        raise WorldError(f"primitive {call.name} cannot be planned")

    def _snapshot(
        self, world: WorldState, call: PrimitiveCall, target: Optional[ObjectInstance]
    ) -> Dict[str, object]:
        snapshot: Dict[str, object] = {"presses": world.press_events}
        if target is not None:
            snapshot["position"] = target.pose.position.copy()
        return snapshot

    def _succeeded(
        self,
        world: WorldState,
        call: PrimitiveCall,
        target: Optional[ObjectInstance],
        before: Dict[str, object],
    ) -> bool:
        gripper = world.gripper
        if call.name == "Pick":
            return target is not None and gripper.held == target.id
        if call.name in ("PlaceOn", "PlaceAt"):
            return gripper.held is None
        if call.name == "Push":
            assert target is not None
            moved = not np.array_equal(world.get(target.id).pose.position, before["position"])
            return moved or not (call.distance or 0.0) > 0.0
        if call.name in ("PrismaticJointOpen", "PrismaticJointClose"):
            assert target is not None
            joint = world.get(target.parent).kinematics  # type: ignore[arg-type]
            goal = joint.range_max if call.name == "PrismaticJointOpen" else 0.0
            return joint.current == goal
        if call.name == "Press":
            return world.press_events > before["presses"]  # type: ignore[operator]
        return False

    # ========================================================================
    # MOTION
    # ========================================================================

    def motion_to_actions(
        self, waypoints: Sequence[Pose], gripper_schedule: Sequence[bool]
    ) -> List[ActionFrame]:
        """
        Interpolate waypoints into 10-D action frames at the configured step length

        A segment of length L yields ceil(L / step) frames ending exactly on its
        endpoint; a zero-length segment yields a frame only when the gripper
        command changes.
        """
        if not waypoints:
            raise EmptyPath("no waypoints to interpolate")
        if len(waypoints) != len(gripper_schedule):
            raise ValueError("gripper schedule must match the waypoint count")

        frames = [_frame(waypoints[0].position, waypoints[0], gripper_schedule[0])]
        for i in range(1, len(waypoints)):
            start = waypoints[i - 1].position
            end = waypoints[i].position
            closed = gripper_schedule[i]
            length = float(np.linalg.norm(end - start))
            if length < _EPS:
                if closed != gripper_schedule[i - 1]:
                    frames.append(_frame(end, waypoints[i], closed))
                continue
            count = math.ceil(length / self.config.step_length - _EPS)
            for k in range(1, count + 1):
                position = end if k == count else start + (end - start) * (k / count)
                frames.append(_frame(position, waypoints[i], closed))
        return frames

    def step(
        self,
        world: WorldState,
        frame: ActionFrame,
        capture_margin: Optional[float] = None,
    ) -> None:
        """
        Advance the world by one action frame, in place

        The gripper moves first (carrying its held object, driving an attached
        handle, or sweeping free objects when closed and empty), then a change
        of the gripper command grasps, presses or releases.
        """
        margin = self.config.capture_margin if capture_margin is None else capture_margin
        gripper = world.gripper
        target = np.array(frame.position, dtype=float)
        delta = target - gripper.pose.position
        gripper.pose = Pose(
            target,
            geometry.rotation_from_rows(
                np.array(frame.rotation_rows[:3]), np.array(frame.rotation_rows[3:])
            ),
        )

        if gripper.held is not None:
            world.get(gripper.held).pose.position = target + gripper.held_offset
        elif gripper.handle is not None:
            self._drive_joint(world, world.get(gripper.handle), delta)
        elif gripper.closed:
            self._sweep(world, target, delta)

        closing = frame.gripper >= 0.5
        if closing and not gripper.closed:
            gripper.closed = True
            self._on_close(world, margin)
        elif not closing and gripper.closed:
            gripper.closed = False
            self._on_open(world)

    def _drive_joint(self, world: WorldState, handle: ObjectInstance, delta: np.ndarray) -> None:
        joint = world.get(handle.parent)  # type: ignore[arg-type]
        kin = joint.kinematics
        axis = np.asarray(kin.axis)
        wanted = kin.current + float(np.dot(delta, axis))
        current = min(max(wanted, 0.0), kin.range_max)
        if abs(current) < _EPS:
            current = 0.0
        elif abs(current - kin.range_max) < _EPS:
            current = kin.range_max
        moved = current - kin.current
        if moved == 0.0:
            return
        shift = axis * moved
        drawer_box = joint.aabb()
        riders = [
            obj for obj in world.objects
            if obj.id != joint.id and (
                obj.parent == joint.id
                or (
                    obj.kinematics.kind == "free"
                    and obj.id != world.gripper.held
                    and geometry.contains_point(drawer_box, obj.box_center)
                )
            )
        ]
        for obj in [joint] + riders:
            obj.pose.position = obj.pose.position + shift
        kin.current = current
        joint.state = "open" if current >= self.config.open_fraction * kin.range_max else "closed"

    def _sweep(self, world: WorldState, point: np.ndarray, delta: np.ndarray) -> None:
        """Closed empty fingers shove free objects out of their way"""
        direction = np.array([delta[0], delta[1], 0.0])
        norm = np.linalg.norm(direction)
        if norm < _EPS:
            return
        direction /= norm
        for obj in world.objects:
            if obj.kinematics.kind != "free":
                continue
            lo, hi = obj.aabb()
            padded = (lo - self.config.finger_radius, hi + self.config.finger_radius)
            if not geometry.contains_point(padded, point):
                continue
            travel = geometry.slab_exit(padded, point, direction)
            if not np.isfinite(travel) or travel <= 0.0:
                continue
            center = obj.box_center + direction * travel
            center[:2] = self._clamp_xy(world, center[:2])
            obj.move_box_to(center)

    def _on_close(self, world: WorldState, margin: float) -> None:
        gripper = world.gripper
        point = gripper.pose.position
        reach = margin + _EPS
        for obj in world.objects:
            if obj.category.endswith("button") and geometry.contains_point(obj.aabb(), point, reach):
                self._press(world, obj)
                return

        graspable = [
            obj for obj in world.objects
            if obj.kinematics.kind == "free"
            and float(np.max(obj.half_extents)) <= self.config.grasp_limit
            and geometry.contains_point(obj.aabb(), point, reach)
        ]
        if graspable:
            chosen = max(graspable, key=lambda obj: obj.aabb()[1][2])
            gripper.held = chosen.id
            gripper.held_offset = chosen.pose.position - point
            logger.debug("grasped %s", chosen.label)
            return

        for obj in world.objects:
            if obj.parent is None or not geometry.contains_point(obj.aabb(), point, reach):
                continue
            if world.get(obj.parent).kinematics.kind == "prismatic":
                gripper.handle = obj.id
                return

    def _on_open(self, world: WorldState) -> None:
        gripper = world.gripper
        if gripper.held is not None:
            obj = world.get(gripper.held)
            gripper.held = None
            gripper.held_offset = np.zeros(3)
            self.settle(world, obj)
        gripper.handle = None

    def _press(self, world: WorldState, button: ObjectInstance) -> None:
        world.press_events += 1
        if button.parent is None:
            return
        device = world.get(button.parent)
        if device.category != "catapult" or device.state == "triggered":
            return
        device.state = "triggered"
        launch = np.asarray(self.config.launch_displacement, dtype=float)
        for obj in self._resting_on(world, device):
            center = obj.box_center + launch
            center[:2] = self._clamp_xy(world, center[:2])
            obj.move_box_to(center)
            self.settle(world, obj)
            logger.debug("launched %s", obj.label)

    def _resting_on(self, world: WorldState, base: ObjectInstance) -> List[ObjectInstance]:
        base_box = base.aabb()
        resting = []
        for obj in world.objects:
            if obj.id == base.id or obj.kinematics.kind != "free" or obj.id == world.gripper.held:
                continue
            box = obj.aabb()
            gap = abs(box[0][2] - base_box[1][2])
            if gap <= self.relations.on_top_gap + _EPS and np.all(geometry.axis_overlaps(box, base_box)[:2] > 0):
                resting.append(obj)
        return resting

    def settle(self, world: WorldState, obj: ObjectInstance) -> None:
        """Drop an object onto the highest support under its footprint"""
        center = obj.box_center
        center[:2] = self._clamp_xy(world, center[:2])
        obj.move_box_to(center)
        box = obj.aabb()
        support = self.config.table_top_z
        for other in world.objects:
            if other.id == obj.id or other.id == world.gripper.held:
                continue
            other_box = other.aabb()
            if np.any(geometry.axis_overlaps(box, other_box)[:2] <= 0.0):
                continue
            if other_box[1][2] > center[2] + _EPS:
                continue
            if self._is_open_container(other) and geometry.footprint_contains(other_box, box):
                height = other_box[0][2] + self.config.container_floor
            else:
                height = other_box[1][2]
            support = max(support, float(height))
        center[2] = support + obj.box_half[2] + self.config.settle_eps
        obj.move_box_to(center)

    def _is_open_container(self, obj: ObjectInstance) -> bool:
        if obj.category.split()[-1] not in self.relations.containers:
            return False
        return obj.kinematics.kind != "prismatic" or obj.state == "open"

    def _clamp_xy(self, world: WorldState, xy: np.ndarray) -> np.ndarray:
        (x0, x1), (y0, y1) = world.table_bounds
        return np.array([min(max(xy[0], x0), x1), min(max(xy[1], y0), y1)])


def _top_center(obj: ObjectInstance) -> np.ndarray:
    center = obj.box_center.copy()
    center[2] = obj.aabb()[1][2]
    return center


def _triple(vector: np.ndarray) -> Tuple[float, float, float]:
    return (float(vector[0]), float(vector[1]), float(vector[2]))


def _frame(position: np.ndarray, pose: Pose, closed: bool) -> ActionFrame:
    rows = pose.rotation_rows()
    return ActionFrame(
        position=_triple(position),
        rotation_rows=tuple(float(v) for v in rows),  # type: ignore[arg-type]
        gripper=1.0 if closed else 0.0,
    )


# ============================================================================
# CONVENIENCE FUNCTIONS
# ============================================================================

def spawn_scene(spec: SceneSpec, config: Optional[SimulationConfig] = None) -> WorldState:
    return Simulator(config).spawn_scene(spec)


def observe(world: WorldState) -> Observation:
    return Simulator().observe(world)


def exec_primitive(
    world: WorldState,
    call: PrimitiveCall,
    rng: Optional[np.random.Generator] = None,
    config: Optional[SimulationConfig] = None,
) -> ExecResult:
    return Simulator(config).exec_primitive(world, call, rng)
