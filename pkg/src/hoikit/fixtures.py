"""Deterministic toy clips and a furnished room for pipeline tests and demos.

The toy corpus is built in a canonical frame: a small box rests at the
origin on a notional support of height 0.62, a person stands 0.27 m west,
leans in, grasps the box top with the right hand, lifts it, slides it along
+y, sets it down, and retracts. Poisoned variants break exactly one physics
filter each so that rejection attribution can be tested end to end.
"""

from __future__ import annotations

import numpy as np

from .body import JOINT_NAMES, REST_POSE, arm_chain_to_target, default_skeleton
from .geometry import RigidTransform
from .motion import HOISequence, MotionSequence, ObjectTrajectory
from .primitives import box_mesh, merge_meshes
from .scene import PlacementSurface, SceneGraph, SceneObject, SpatialRelation

TOY_VARIANTS = ("clean", "levitating", "out_of_bounds", "colliding")

_REST_HEIGHT = 0.62
_BOX_SIZE = (0.08, 0.08, 0.10)
# standing clearance must exceed the furniture's vertex spacing: the
# nearest-point penetration test can flag a sample near a convex corner
# whenever its tangential offset beats its outward clearance
_STAND_BACK = 0.35
_LEAN_MAX = np.radians(50.0)
_ARCH = 0.14
_CONTACT = 20
_RELEASE = 39
_FRAMES = 60

_UPPER_BLOCK = ("spine", "chest", "neck", "head",
                "left_shoulder", "left_elbow", "left_wrist", "left_hand",
                "right_shoulder")
_RIGHT_ARM = ("right_elbow", "right_wrist", "right_hand")

_ACTIONS = ("move", "lift", "carry", "inspect")
_CATEGORIES = ("cup", "bowl", "bottle", "book")


def _smoothstep(u: np.ndarray | float):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _pitch(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def toy_object_mesh():
    """Box with its local base at z = 0, so translation z is the base height."""
    return box_mesh(_BOX_SIZE, center=(0.0, 0.0, _BOX_SIZE[2] / 2.0),
                    subdivisions=2)


def _toy_trajectory(dy: float, fps: float) -> ObjectTrajectory:
    trans = np.tile([0.0, 0.0, _REST_HEIGHT], (_FRAMES, 1))
    for f in range(_CONTACT, 26):
        trans[f, 2] = _REST_HEIGHT + 0.02 * (f - _CONTACT + 1)
    for f in range(26, 34):
        trans[f, 1] = dy * (f - 25) / 8.0
        trans[f, 2] = _REST_HEIGHT + 0.12
    for f in range(34, _RELEASE + 1):
        trans[f, 1] = dy
        trans[f, 2] = _REST_HEIGHT + 0.12 - 0.02 * (f - 33)
    trans[_RELEASE + 1:] = [0.0, dy, _REST_HEIGHT]
    return ObjectTrajectory(np.tile(np.eye(3), (_FRAMES, 1, 1)), trans, fps)


def _lean_angle(f: int) -> float:
    if f <= 41:
        return float(_LEAN_MAX * _smoothstep((f - 2) / 16.0))
    return float(_LEAN_MAX * (1.0 - _smoothstep((f - 42) / 12.0)))


def _toy_motion(trajectory: ObjectTrajectory, fps: float) -> MotionSequence:
    skel = default_skeleton()
    name_idx = {n: i for i, n in enumerate(JOINT_NAMES)}
    rest = REST_POSE.copy()
    rest[:, 0] -= _STAND_BACK
    pelvis = rest[name_idx["pelvis"]]
    shoulder_rest = REST_POSE[name_idx["right_shoulder"]]
    l1 = np.linalg.norm(REST_POSE[name_idx["right_elbow"]] - shoulder_rest)
    l2 = np.linalg.norm(REST_POSE[name_idx["right_wrist"]]
                        - REST_POSE[name_idx["right_elbow"]])
    l3 = np.linalg.norm(REST_POSE[name_idx["right_hand"]]
                        - REST_POSE[name_idx["right_wrist"]])
    top = trajectory.translations + [0.0, 0.0, _BOX_SIZE[2]]

    joints = np.tile(rest, (_FRAMES, 1, 1))
    for f in range(_FRAMES):
        rot = _pitch(_lean_angle(f))
        block = list(_UPPER_BLOCK) + list(_RIGHT_ARM)
        for name in block:
            j = name_idx[name]
            joints[f, j] = pelvis + rot @ (rest[j] - pelvis)
        hand_rest = joints[f, name_idx["right_hand"]]

        if 4 <= f < _CONTACT:
            s = _smoothstep((f - 4) / 15.0)
            target = (1.0 - s) * hand_rest + s * top[0]
            target = target + [0.0, 0.0, _ARCH * np.sin(np.pi * s)]
        elif _CONTACT <= f <= _RELEASE:
            target = top[f]
        elif _RELEASE < f < 52:
            s = _smoothstep((f - _RELEASE) / 12.0)
            target = (1.0 - s) * top[_RELEASE + 1] + s * hand_rest
            target = target + [0.0, 0.0, _ARCH * np.sin(np.pi * s)]
        else:
            continue  # hanging arm from the leaned rest block

        shoulder = joints[f, name_idx["right_shoulder"]]
        elbow, wrist, hand = arm_chain_to_target(shoulder, target, l1, l2, l3,
                                                 bend_dir=(0.0, -1.0, 0.0))
        joints[f, name_idx["right_elbow"]] = elbow
        joints[f, name_idx["right_wrist"]] = wrist
        joints[f, name_idx["right_hand"]] = hand
    assert skel.n_joints == joints.shape[1]
    return MotionSequence(joints, fps)


def _poison(joints: np.ndarray, trans: np.ndarray, variant: str):
    name_idx = {n: i for i, n in enumerate(JOINT_NAMES)}
    if variant == "levitating":
        joints[:, :, 2] += 0.3
        trans[:, 2] += 0.3
    elif variant == "out_of_bounds":
        # -y walk: clears the room's lower bound from any placement. The
        # engaged arm subtree is exempt so the repair window sees the same
        # per-column history as the clean variant; otherwise the smoothing
        # denoiser's global modes drag the repaired approach into furniture.
        keep = [name_idx[n] for n in ("right_shoulder", "right_elbow",
                                      "right_wrist", "right_hand")]
        walk = [i for i in range(joints.shape[1]) if i not in keep]
        for f in range(44, _FRAMES):
            joints[f, walk, 1] -= 4.0 * _smoothstep((f - 44) / 15.0)
    elif variant == "colliding":
        for f in range(24, 37):
            joints[f, name_idx["left_wrist"]] = [0.0, 0.0, 0.34]
            joints[f, name_idx["left_hand"]] = [0.0, 0.0, 0.26]
    elif variant != "clean":
        raise ValueError(f"unknown variant {variant!r}; expected one of {TOY_VARIANTS}")


def toy_corpus(n: int = 4, variant: str = "clean", fps: float = 20.0) -> list:
    """n deterministic source clips in the canonical frame.

    Poisoned variants each violate exactly one filter: 'levitating' floats
    the whole clip 0.3 above the ground, 'out_of_bounds' walks the body off
    the scene after release, 'colliding' sweeps the free hand through the
    support pedestal while carrying.
    """
    if n < 1:
        raise ValueError("n must be positive")
    mesh = toy_object_mesh()
    clips = []
    for k in range(n):
        dy = 0.10 + 0.005 * (k % 4)
        trajectory = _toy_trajectory(dy, fps)
        motion = _toy_motion(trajectory, fps)
        joints = motion.joints.copy()
        trans = trajectory.translations.copy()
        _poison(joints, trans, variant)
        clips.append(HOISequence(
            motion=MotionSequence(joints, fps),
            trajectory=ObjectTrajectory(trajectory.rotations, trans, fps),
            object_mesh=mesh,
            text=f"source clip {k}",
            meta={"action": _ACTIONS[k % 4], "category": _CATEGORIES[k % 4],
                  "variant": variant},
        ))
    return clips


def _strip_table(cx: float, cy: float, top: float):
    """Narrow table: a 0.3 m deep slab on an inset pedestal, so a person
    standing 0.27 m west of the strip centerline clears both parts."""
    slab = box_mesh((0.3, 1.2, 0.06), center=(cx, cy, top - 0.03), subdivisions=8)
    pedestal = box_mesh((0.1, 1.16, top - 0.06),
                        center=(cx, cy, (top - 0.06) / 2.0), subdivisions=8)
    return merge_meshes([slab, pedestal])


def _strip_surface(owner: str, cx: float, cy: float, top: float) -> PlacementSurface:
    # sampling region much narrower than the slab keeps retargeted clips
    # clear of the furniture for any placement draw
    poly = np.array([[cx - 0.02, cy - 0.45, top], [cx + 0.02, cy - 0.45, top],
                     [cx + 0.02, cy + 0.45, top], [cx - 0.02, cy + 0.45, top]])
    return PlacementSurface(owner=owner, polygon=poly, height=top)


def room_scene() -> SceneGraph:
    """Floor, two tables, a desk, and two anchors, with one relation edge per
    support so every placement grounds uniquely."""
    ident = RigidTransform.identity()
    objects = (
        SceneObject("floor_0", "floor",
                    box_mesh((4.0, 4.0, 0.1), center=(2.0, 2.0, -0.05),
                             subdivisions=4), ident),
        SceneObject("table_0", "table", _strip_table(1.2, 1.2, 0.66), ident),
        SceneObject("table_1", "table", _strip_table(2.8, 1.2, 0.66), ident),
        SceneObject("desk_0", "desk", _strip_table(2.0, 2.8, 0.70), ident),
        SceneObject("door_0", "door",
                    box_mesh((0.05, 0.9, 2.0), center=(3.95, 2.0, 1.0),
                             subdivisions=2), ident),
        SceneObject("window_0", "window",
                    box_mesh((1.0, 0.05, 1.0), center=(2.0, 3.95, 1.5),
                             subdivisions=2), ident),
    )
    surfaces = (
        _strip_surface("table_0", 1.2, 1.2, 0.66),
        _strip_surface("table_1", 2.8, 1.2, 0.66),
        _strip_surface("desk_0", 2.0, 2.8, 0.70),
    )
    relations = (
        SpatialRelation("table_0", "near", "door_0"),
        SpatialRelation("table_1", "next_to", "door_0"),
        SpatialRelation("desk_0", "near", "window_0"),
    )
    return SceneGraph(objects, surfaces, relations,
                      bounds=np.array([[0.0, 0.0, -0.2], [4.0, 4.0, 2.6]]))
