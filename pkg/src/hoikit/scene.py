"""Scene graph, template text, referring-expression grounding, placement.

Interaction sentences follow one fixed template:

    A person <action> the <target> on a <surface> <relation> <article> <anchor>

The closed vocabularies live in plain-text files under data/vocab. Grounding
resolves a parsed sentence against a scene graph by exhaustive constraint
checking, so its answers are exact and order-independent.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import PointCloud, RigidTransform, TriMesh

RELATIONS = ("next_to", "near", "on", "above", "below")
RELATION_PHRASES = {"next_to": "next to", "near": "near", "on": "on",
                    "above": "above", "below": "below"}
# the pinned renderings use "next to a door" but "near the sofa"
RELATION_ARTICLES = {"next_to": "a", "near": "the", "on": "the",
                     "above": "the", "below": "the"}

# words that serve as template separators; no vocabulary item may use them
_RESERVED_WORDS = {"the", "a", "on", "near", "above", "below", "next", "person"}

SURFACE_PLANAR_TOL = 1e-3
SUPPORT_TOL = 1e-4
# objects rest this far above their surface so exact-boundary contact never
# counts as penetration under the strict normal test
REST_CLEARANCE = 5e-7


class VocabularyError(ValueError):
    pass


class TextParseError(ValueError):
    """Template mismatch; carries the failing clause and character position."""

    def __init__(self, message: str, position: int, clause: str):
        super().__init__(f"{message} (clause: {clause}, position {position})")
        self.position = position
        self.clause = clause


class GroundingError(ValueError):
    pass


class TargetNotFound(GroundingError):
    pass


class AmbiguousTarget(GroundingError):
    def __init__(self, candidates):
        self.candidates = tuple(sorted(candidates))
        super().__init__(f"multiple objects satisfy the description: {list(self.candidates)}")


class PlacementError(ValueError):
    pass


def _check_reserved(items, kind: str):
    for item in items:
        bad = set(item.split()) & _RESERVED_WORDS
        if bad:
            raise VocabularyError(f"{kind} entry {item!r} uses reserved word(s) {sorted(bad)}")


@dataclass(frozen=True)
class Vocabulary:
    """Closed word lists for the sentence template."""

    actions: tuple        # (base form, third-person form) pairs
    targets: tuple
    surfaces: tuple
    anchors: tuple

    def __post_init__(self):
        for name in ("actions", "targets", "surfaces", "anchors"):
            if not getattr(self, name):
                raise VocabularyError(f"empty vocabulary: {name}")
        _check_reserved([b for b, _ in self.actions], "action")
        _check_reserved([t for _, t in self.actions], "action")
        _check_reserved(self.targets, "target")
        _check_reserved(self.surfaces, "surface")
        _check_reserved(self.anchors, "anchor")
        bases = [b for b, _ in self.actions]
        if len(set(bases)) != len(bases):
            raise VocabularyError("duplicate action base forms")

    @functools.cached_property
    def _third_person(self) -> dict:
        return dict(self.actions)

    @functools.cached_property
    def _base_form(self) -> dict:
        return {third: base for base, third in self.actions}

    def third_person(self, base: str) -> str:
        if base not in self._third_person:
            raise VocabularyError(f"unknown action {base!r}")
        return self._third_person[base]

    def base_form(self, third: str) -> str:
        return self._base_form[third]

    @property
    def action_bases(self) -> tuple:
        return tuple(b for b, _ in self.actions)


def _read_lines(path) -> list:
    lines = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            lines.append(line)
    return lines


def load_vocabulary(directory=None) -> Vocabulary:
    """Load the four word lists from a directory (default: packaged data)."""
    if directory is None:
        directory = resources.files("hoikit") / "data" / "vocab"
    else:
        directory = Path(directory)
    actions = []
    for line in _read_lines(directory / "actions.txt"):
        parts = line.split("|")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise VocabularyError(f"malformed action line {line!r}; expected 'base|third-person'")
        actions.append((parts[0].strip(), parts[1].strip()))
    return Vocabulary(
        actions=tuple(actions),
        targets=tuple(_read_lines(directory / "targets.txt")),
        surfaces=tuple(_read_lines(directory / "surfaces.txt")),
        anchors=tuple(_read_lines(directory / "anchors.txt")),
    )


@functools.lru_cache(maxsize=1)
def default_vocabulary() -> Vocabulary:
    return load_vocabulary()


@dataclass(frozen=True)
class InteractionSpec:
    """One templated interaction description, stored with the base verb form."""

    action: str
    target_category: str
    surface_category: str
    relation: str
    anchor_category: str

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}; expected one of {RELATIONS}")
        for f in (self.action, self.target_category, self.surface_category,
                  self.anchor_category):
            if not f or not isinstance(f, str):
                raise ValueError("spec fields must be nonempty strings")


def render_text(spec: InteractionSpec, vocab: Vocabulary | None = None) -> str:
    vocab = vocab or default_vocabulary()
    for value, pool, kind in ((spec.target_category, vocab.targets, "target"),
                              (spec.surface_category, vocab.surfaces, "surface"),
                              (spec.anchor_category, vocab.anchors, "anchor")):
        if value not in pool:
            raise VocabularyError(f"unknown {kind} {value!r}")
    verb = vocab.third_person(spec.action)
    return (f"A person {verb} the {spec.target_category} on a {spec.surface_category} "
            f"{RELATION_PHRASES[spec.relation]} {RELATION_ARTICLES[spec.relation]} "
            f"{spec.anchor_category}")


def parse_text(text: str, vocab: Vocabulary | None = None) -> InteractionSpec:
    """Invert render_text; reject anything off-template with the failure spot.

    Structure is parsed first (the separators ' the ', ' on a ', and the
    relation phrase are reserved, so spans are unambiguous), vocabulary
    membership is checked second.
    """
    vocab = vocab or default_vocabulary()
    prefix = "A person "
    if not text.startswith(prefix):
        raise TextParseError("sentence must start with 'A person'", 0, "prefix")
    sep_the = text.find(" the ", len(prefix))
    if sep_the < 0:
        raise TextParseError("expected ' the <target>' after the action", len(text), "target")
    verb = text[len(prefix):sep_the]
    target_at = sep_the + len(" the ")
    sep_on = text.find(" on a ", target_at)
    if sep_on < 0:
        raise TextParseError("expected ' on a <surface>' after the target", len(text), "surface")
    target = text[target_at:sep_on]
    tail_at = sep_on + len(" on a ")

    rel, rel_at = None, len(text)
    for name in RELATIONS:
        i = text.find(f" {RELATION_PHRASES[name]} ", tail_at)
        if 0 <= i < rel_at:
            rel, rel_at = name, i
    if rel is None:
        raise TextParseError("expected a relation phrase after the surface", len(text), "relation")
    surface = text[tail_at:rel_at]
    after_rel = rel_at + len(RELATION_PHRASES[rel]) + 2
    article = RELATION_ARTICLES[rel] + " "
    if not text.startswith(article, after_rel):
        raise TextParseError(
            f"expected article {article.strip()!r} after {RELATION_PHRASES[rel]!r}",
            after_rel, "anchor")
    anchor = text[after_rel + len(article):]

    if verb not in vocab._base_form:
        raise TextParseError(f"unknown action {verb!r}", len(prefix), "action")
    if target not in vocab.targets:
        raise TextParseError(f"unknown target {target!r}", target_at, "target")
    if surface not in vocab.surfaces:
        raise TextParseError(f"unknown surface {surface!r}", tail_at, "surface")
    if anchor not in vocab.anchors:
        raise TextParseError(f"unknown anchor {anchor!r}", after_rel + len(article), "anchor")
    return InteractionSpec(vocab.base_form(verb), target, surface, rel, anchor)


def random_spec(rng: np.random.Generator, vocab: Vocabulary | None = None) -> InteractionSpec:
    vocab = vocab or default_vocabulary()
    return InteractionSpec(
        action=vocab.action_bases[rng.integers(len(vocab.actions))],
        target_category=vocab.targets[rng.integers(len(vocab.targets))],
        surface_category=vocab.surfaces[rng.integers(len(vocab.surfaces))],
        relation=RELATIONS[rng.integers(len(RELATIONS))],
        anchor_category=vocab.anchors[rng.integers(len(vocab.anchors))],
    )


@dataclass(frozen=True)
class SceneObject:
    id: str
    category: str
    geometry: object  # TriMesh or PointCloud
    pose: RigidTransform
    movable: bool = False

    def __post_init__(self):
        if not self.id:
            raise ValueError("object id must be nonempty")
        if not isinstance(self.geometry, (TriMesh, PointCloud)):
            raise TypeError("geometry must be a TriMesh or PointCloud")

    def local_points(self) -> np.ndarray:
        if isinstance(self.geometry, TriMesh):
            return self.geometry.vertices
        return self.geometry.points

    def world_points(self) -> np.ndarray:
        return self.pose.apply(self.local_points())

    def world_aabb(self):
        pts = self.world_points()
        return pts.min(axis=0), pts.max(axis=0)

    def base_height(self) -> float:
        return float(self.world_points()[:, 2].min())

    def centroid_xy(self) -> np.ndarray:
        return self.world_points()[:, :2].mean(axis=0)


@dataclass(frozen=True)
class PlacementSurface:
    """A horizontal support polygon owned by a scene object."""

    owner: str
    polygon: np.ndarray  # (K, 3) loop, z within SURFACE_PLANAR_TOL of height
    height: float

    def __post_init__(self):
        poly = np.asarray(self.polygon, dtype=np.float64)
        if poly.ndim != 2 or poly.shape[1] != 3 or poly.shape[0] < 3:
            raise ValueError("polygon must be (K, 3) with K >= 3")
        if not np.isfinite(poly).all():
            raise ValueError("polygon contains non-finite values")
        if np.abs(poly[:, 2] - self.height).max() > SURFACE_PLANAR_TOL:
            raise ValueError("polygon is not planar at the stated height")
        object.__setattr__(self, "polygon", poly)
        if self.area() <= 0.0:
            raise ValueError("polygon has zero area")

    def area(self) -> float:
        x, y = self.polygon[:, 0], self.polygon[:, 1]
        return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)

    def contains_xy(self, point) -> bool:
        """Even-odd crossing test in the xy plane."""
        x, y = float(point[0]), float(point[1])
        poly = self.polygon[:, :2]
        inside = False
        for i in range(len(poly)):
            x0, y0 = poly[i]
            x1, y1 = poly[(i + 1) % len(poly)]
            if (y0 > y) != (y1 > y):
                x_cross = x0 + (y - y0) / (y1 - y0) * (x1 - x0)
                if x < x_cross:
                    inside = not inside
        return inside

    def sample_xy(self, rng: np.random.Generator, max_tries: int = 10000) -> np.ndarray:
        """Uniform point inside the polygon via rejection from its bounding box."""
        lo = self.polygon[:, :2].min(axis=0)
        hi = self.polygon[:, :2].max(axis=0)
        for _ in range(max_tries):
            p = lo + rng.random(2) * (hi - lo)
            if self.contains_xy(p):
                return p
        raise PlacementError(f"could not sample inside surface of {self.owner!r}")


@dataclass(frozen=True)
class SpatialRelation:
    subject: str
    relation: str
    anchor: str

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")
        if self.subject == self.anchor:
            raise ValueError("relation subject and anchor must differ")


@dataclass(frozen=True)
class SceneGraph:
    """Immutable scene: objects, support surfaces, given relation edges, bounds."""

    objects: tuple
    surfaces: tuple = ()
    relations: tuple = ()
    bounds: np.ndarray = field(default_factory=lambda: np.array([[0.0, 0.0, 0.0],
                                                                 [5.0, 5.0, 3.0]]))

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        object.__setattr__(self, "relations", tuple(self.relations))
        bounds = np.asarray(self.bounds, dtype=np.float64)
        if bounds.shape != (2, 3) or not (bounds[0] < bounds[1]).all():
            raise ValueError("bounds must be (2, 3) with lo < hi")
        object.__setattr__(self, "bounds", bounds)
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate object ids in scene")
        known = set(ids)
        for s in self.surfaces:
            if s.owner not in known:
                raise ValueError(f"surface owner {s.owner!r} is not a scene object")
        for r in self.relations:
            if r.subject not in known or r.anchor not in known:
                raise ValueError(f"relation endpoint missing: {r.subject!r} -> {r.anchor!r}")

    def object_by_id(self, oid: str) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    @property
    def movable_objects(self) -> tuple:
        return tuple(o for o in self.objects if o.movable)

    def with_objects(self, new_objects) -> "SceneGraph":
        return replace(self, objects=tuple(self.objects) + tuple(new_objects))


def supporting_surfaces(obj: SceneObject, scene: SceneGraph,
                        tol: float = SUPPORT_TOL) -> list:
    """Surfaces the object rests on: base at surface height, centroid inside."""
    base = obj.base_height()
    cxy = obj.centroid_xy()
    return [s for s in scene.surfaces
            if abs(base - s.height) <= tol and s.contains_xy(cxy)]


def ground(spec: InteractionSpec, scene: SceneGraph,
           support_tol: float = SUPPORT_TOL) -> str:
    """Resolve the described object: category + support + relation must all hold.

    Returns the unique satisfying movable object id; raises TargetNotFound or
    AmbiguousTarget (with all candidate ids) otherwise.
    """
    relation_edges = {(r.subject, r.relation, r.anchor) for r in scene.relations}
    anchors_of_category = [o.id for o in scene.objects
                           if o.category == spec.anchor_category]
    candidates = []
    for obj in scene.objects:
        if not obj.movable or obj.category != spec.target_category:
            continue
        for surf in supporting_surfaces(obj, scene, support_tol):
            owner = scene.object_by_id(surf.owner)
            if owner.category != spec.surface_category:
                continue
            if any((surf.owner, spec.relation, a) in relation_edges
                   for a in anchors_of_category):
                candidates.append(obj.id)
                break
    candidates.sort()
    if not candidates:
        raise TargetNotFound(
            f"no {spec.target_category!r} on a {spec.surface_category!r} "
            f"{RELATION_PHRASES[spec.relation]} a {spec.anchor_category!r}")
    if len(candidates) > 1:
        raise AmbiguousTarget(candidates)
    return candidates[0]


def _aabbs_overlap(a, b) -> bool:
    return bool((np.maximum(a[0], b[0]) < np.minimum(a[1], b[1])).all())


def _next_id(scene: SceneGraph, category: str) -> str:
    taken = {o.id for o in scene.objects}
    n = 0
    while f"{category}_{n}" in taken:
        n += 1
    return f"{category}_{n}"


def _yaw_transform(yaw: float, translation) -> RigidTransform:
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return RigidTransform(rot, np.asarray(translation, dtype=np.float64))


def place_objects(scene: SceneGraph, category: str, prototype, count: int,
                  rng, surface_categories=None,
                  max_tries: int = 200) -> SceneGraph:
    """Drop `count` instances of a prototype onto distinct free surfaces.

    Positions are uniform inside each support polygon with a random yaw; the
    base rests REST_CLEARANCE above the surface. Bounding boxes of movable
    objects must not overlap (support furniture necessarily overlaps its own
    cargo, so fixed objects are exempt). Returns a new graph.
    """
    if count < 0:
        raise PlacementError("count must be nonnegative")
    if count == 0:
        return scene
    rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    occupied = set()
    for obj in scene.movable_objects:
        for s in supporting_surfaces(obj, scene):
            occupied.add(id(s))
    eligible = [s for s in scene.surfaces if id(s) not in occupied]
    if surface_categories is not None:
        allowed = set(surface_categories)
        eligible = [s for s in eligible
                    if scene.object_by_id(s.owner).category in allowed]
    if count > len(eligible):
        raise PlacementError(f"count {count} exceeds {len(eligible)} eligible surfaces")

    chosen = rng.choice(len(eligible), size=count, replace=False)
    boxes = [o.world_aabb() for o in scene.movable_objects]
    placed = []
    working = scene
    for idx in chosen:
        surf = eligible[int(idx)]
        ok = False
        for _ in range(max_tries):
            xy = surf.sample_xy(rng)
            yaw = rng.uniform(0.0, 2.0 * np.pi)
            proto_pts = prototype.vertices if isinstance(prototype, TriMesh) else prototype.points
            rot_min_z = (_yaw_transform(yaw, np.zeros(3)).apply(proto_pts))[:, 2].min()
            z = surf.height - rot_min_z + REST_CLEARANCE
            pose = _yaw_transform(yaw, [xy[0], xy[1], z])
            obj = SceneObject(_next_id(working, category), category, prototype,
                              pose, movable=True)
            box = obj.world_aabb()
            if all(not _aabbs_overlap(box, other) for other in boxes):
                boxes.append(box)
                placed.append(obj)
                working = working.with_objects([obj])
                ok = True
                break
        if not ok:
            raise PlacementError(
                f"could not place {category!r} on surface of {surf.owner!r} "
                f"without overlap after {max_tries} tries")
    return working
