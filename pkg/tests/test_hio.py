"""File-format round trips: bitwise array/checkpoint recovery, scene and
dataset text formats, viewer exports, and corruption handling."""

import functools

import numpy as np
import pytest

from hoikit.alignment import SynthesisConfig, synthesize_dataset
from hoikit.denoiser import ConditionBundle, TinyDenoiser
from hoikit.diffusion import NoiseSchedule
from hoikit.fixtures import room_scene, toy_corpus
from hoikit.geometry import PointCloud, RigidTransform, TriMesh
from hoikit.hio import (FormatError, ManifestInfo, export_joint_table,
                        export_obj, export_transform_table, load_checkpoint,
                        read_array, read_manifest, read_record, read_scene,
                        save_checkpoint, write_array, write_dataset,
                        write_record, write_scene)
from hoikit.interaction import scene_collision_cloud
from hoikit.primitives import box_mesh
from hoikit.scene import (SceneGraph, SceneObject, ground, parse_text)


class TestArrayContainer:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(5, 22, 3))
        path = tmp_path / "a.hoa"
        write_array(path, values, ("frame", "joint", "coord"))
        out, axes = read_array(path)
        assert axes == ("frame", "joint", "coord")
        assert out.dtype == np.float64
        assert np.array_equal(out, values)

    def test_one_dimensional(self, tmp_path):
        values = np.linspace(-3.0, 7.0, 11)
        path = tmp_path / "b.hoa"
        write_array(path, values, ("step",))
        out, axes = read_array(path)
        assert axes == ("step",)
        assert np.array_equal(out, values)

    def test_deterministic_bytes(self, tmp_path):
        values = np.random.default_rng(3).normal(size=(4, 6))
        write_array(tmp_path / "x.hoa", values, ("row", "col"))
        write_array(tmp_path / "y.hoa", values, ("row", "col"))
        assert (tmp_path / "x.hoa").read_bytes() == \
            (tmp_path / "y.hoa").read_bytes()

    def test_axis_count_mismatch(self, tmp_path):
        with pytest.raises(FormatError):
            write_array(tmp_path / "a.hoa", np.zeros((2, 3)), ("row",))

    def test_axis_name_with_whitespace(self, tmp_path):
        with pytest.raises(FormatError):
            write_array(tmp_path / "a.hoa", np.zeros(3), ("bad name",))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "a.hoa"
        write_array(path, np.zeros(3), ("step",))
        blob = path.read_bytes()
        path.write_bytes(b"XXXX" + blob[4:])
        with pytest.raises(FormatError):
            read_array(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "a.hoa"
        write_array(path, np.zeros(3), ("step",))
        blob = bytearray(path.read_bytes())
        blob[4:6] = (99).to_bytes(2, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            read_array(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "a.hoa"
        write_array(path, np.arange(6.0), ("step",))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            read_array(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "a.hoa"
        write_array(path, np.arange(6.0), ("step",))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            read_array(path)


class TestCheckpoint:
    def _pair(self):
        den = TinyDenoiser(12, rng=np.random.default_rng(7))
        sched = NoiseSchedule.linear(50)
        return den, sched

    def test_round_trip_bitwise(self, tmp_path):
        den, sched = self._pair()
        path = tmp_path / "model.hock"
        save_checkpoint(path, den, sched)
        den2, sched2 = load_checkpoint(path)
        assert den2.spec == den.spec
        assert set(den2.params) == set(den.params)
        for name in den.params:
            assert np.array_equal(den2.params[name], den.params[name]), name
        assert np.array_equal(sched2.beta, sched.beta)
        assert np.array_equal(sched2.alpha_bar, sched.alpha_bar)

    def test_loaded_model_forward_identical(self, tmp_path):
        den, sched = self._pair()
        path = tmp_path / "model.hock"
        save_checkpoint(path, den, sched)
        den2, _ = load_checkpoint(path)
        rng = np.random.default_rng(11)
        a_t = rng.normal(size=(7, 12))
        cond = ConditionBundle.build(text="move the box onto the table",
                                     points=rng.normal(size=(16, 3)))
        assert np.array_equal(den2(a_t, 5, cond), den(a_t, 5, cond))

    def test_deterministic_bytes(self, tmp_path):
        den, sched = self._pair()
        save_checkpoint(tmp_path / "a.hock", den, sched)
        save_checkpoint(tmp_path / "b.hock", den, sched)
        assert (tmp_path / "a.hock").read_bytes() == \
            (tmp_path / "b.hock").read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.hock"
        den, sched = self._pair()
        save_checkpoint(path, den, sched)
        path.write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "model.hock"
        den, sched = self._pair()
        save_checkpoint(path, den, sched)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(FormatError):
            load_checkpoint(path)


class TestScene:
    def test_round_trip_exact(self, tmp_path):
        scene = room_scene()
        path = tmp_path / "scene.txt"
        write_scene(path, scene)
        back = read_scene(path)
        assert np.array_equal(back.bounds, scene.bounds)
        assert len(back.objects) == len(scene.objects)
        for a, b in zip(back.objects, scene.objects):
            assert (a.id, a.category, a.movable) == (b.id, b.category, b.movable)
            assert np.array_equal(a.pose.rotation, b.pose.rotation)
            assert np.array_equal(a.pose.translation, b.pose.translation)
            assert np.array_equal(a.geometry.vertices, b.geometry.vertices)
            assert np.array_equal(a.geometry.faces, b.geometry.faces)
            if b.geometry.vertex_normals is None:
                assert a.geometry.vertex_normals is None
            else:
                assert np.array_equal(a.geometry.vertex_normals,
                                      b.geometry.vertex_normals)
        assert back.relations == scene.relations
        assert len(back.surfaces) == len(scene.surfaces)
        for a, b in zip(back.surfaces, scene.surfaces):
            assert a.owner == b.owner and a.height == b.height
            assert np.array_equal(a.polygon, b.polygon)

    def test_collision_cloud_preserved(self, tmp_path):
        scene = room_scene()
        path = tmp_path / "scene.txt"
        write_scene(path, scene)
        back = read_scene(path)
        a = scene_collision_cloud(scene, exclude_ids=("floor_0",))
        b = scene_collision_cloud(back, exclude_ids=("floor_0",))
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.normals, b.normals)

    def test_grounding_preserved(self, tmp_path):
        records, _ = _tiny_dataset()
        for i, record in enumerate(records):
            path = tmp_path / f"scene_{i}.txt"
            write_scene(path, record.scene)
            back = read_scene(path)
            spec = parse_text(record.text)
            assert spec == record.spec
            assert ground(spec, back) == record.target_id

    def test_point_cloud_geometry(self, tmp_path):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(40, 3))
        normals = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        cloud = PointCloud(pts, normals)
        scene = SceneGraph((SceneObject(
            "scan_0", "clutter", cloud, RigidTransform.identity()),))
        path = tmp_path / "scene.txt"
        write_scene(path, scene)
        back = read_scene(path)
        geom = back.objects[0].geometry
        assert isinstance(geom, PointCloud)
        assert np.array_equal(geom.points, pts)
        assert np.array_equal(geom.normals, normals)

    def test_deterministic_bytes(self, tmp_path):
        scene = room_scene()
        write_scene(tmp_path / "a.txt", scene)
        write_scene(tmp_path / "b.txt", scene)
        assert (tmp_path / "a.txt").read_bytes() == \
            (tmp_path / "b.txt").read_bytes()

    def test_bad_header(self, tmp_path):
        path = tmp_path / "scene.txt"
        path.write_text("not-a-scene 1\n")
        with pytest.raises(FormatError):
            read_scene(path)

    def test_unexpected_line(self, tmp_path):
        path = tmp_path / "scene.txt"
        write_scene(path, room_scene())
        path.write_text(path.read_text() + "banana 1 2 3\n")
        with pytest.raises(FormatError):
            read_scene(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "scene.txt"
        write_scene(path, room_scene())
        rows = path.read_text().splitlines()
        path.write_text("\n".join(rows[:len(rows) // 2]) + "\n")
        with pytest.raises(FormatError):
            read_scene(path)

    def test_whitespace_id_rejected(self, tmp_path):
        mesh = box_mesh((0.1, 0.1, 0.1))
        scene = SceneGraph((SceneObject(
            "bad id", "box", mesh, RigidTransform.identity()),))
        with pytest.raises(FormatError):
            write_scene(tmp_path / "scene.txt", scene)


@functools.lru_cache(maxsize=1)
def _tiny_dataset():
    corpus = toy_corpus(n=2)
    config = SynthesisConfig(distractors=1)
    return synthesize_dataset(corpus, [room_scene()], config, seed=0)


class TestDataset:
    def test_manifest_round_trip(self, tmp_path):
        records, stats = _tiny_dataset()
        assert len(records) == 2
        manifest = write_dataset(tmp_path / "out", records, stats)
        info = read_manifest(manifest)
        assert isinstance(info, ManifestInfo)
        assert info.attempted == stats.attempted
        assert info.emitted == stats.emitted
        assert info.rejections == stats.rejections
        assert info.failures == stats.failures
        assert len(info.records) == 2
        for i, (entry, record) in enumerate(zip(info.records, records)):
            assert entry.index == i
            assert entry.directory == f"records/{i:03d}"
            assert entry.target_id == record.target_id
            assert entry.text == record.text

    def test_record_round_trip(self, tmp_path):
        records, stats = _tiny_dataset()
        out = tmp_path / "out"
        write_dataset(out, records, stats)
        for i, record in enumerate(records):
            back = read_record(out / f"records/{i:03d}")
            assert back.job_id == record.job_id
            assert back.target_id == record.target_id
            assert back.text == record.text
            assert back.spec == record.spec
            assert back.reports == record.reports
            seq, ref = back.sequence, record.sequence
            assert np.array_equal(seq.motion.joints, ref.motion.joints)
            assert seq.motion.fps == ref.motion.fps
            assert np.array_equal(seq.trajectory.rotations,
                                  ref.trajectory.rotations)
            assert np.array_equal(seq.trajectory.translations,
                                  ref.trajectory.translations)
            assert seq.contact_frame == ref.contact_frame
            assert seq.release_frame == ref.release_frame
            assert seq.meta["engaged_hands"] == ref.meta["engaged_hands"]
            assert np.array_equal(seq.object_mesh.vertices,
                                  ref.object_mesh.vertices)
            assert [o.id for o in back.scene.objects] == \
                [o.id for o in record.scene.objects]

    def test_deterministic_bytes(self, tmp_path):
        records, stats = _tiny_dataset()
        a = write_dataset(tmp_path / "a", records, stats)
        b = write_dataset(tmp_path / "b", records, stats)
        assert a.read_bytes() == b.read_bytes()
        for name in ("record.txt", "scene.txt", "motion.hoa",
                     "rotations.hoa", "translations.hoa"):
            assert (tmp_path / "a/records/000" / name).read_bytes() == \
                (tmp_path / "b/records/000" / name).read_bytes()

    def test_empty_dataset(self, tmp_path):
        records, stats = _tiny_dataset()
        manifest = write_dataset(tmp_path / "out", [], stats)
        info = read_manifest(manifest)
        assert info.records == ()
        assert info.rejections == stats.rejections

    def test_bad_manifest_header(self, tmp_path):
        path = tmp_path / "manifest.txt"
        path.write_text("hoikit-manifest 9\nrecords 0\n")
        with pytest.raises(FormatError):
            read_manifest(path)

    def test_single_record_write(self, tmp_path):
        records, _ = _tiny_dataset()
        write_record(tmp_path / "rec", records[0])
        back = read_record(tmp_path / "rec")
        assert back.text == records[0].text


class TestExports:
    def test_obj_mesh(self, tmp_path):
        mesh = box_mesh((0.4, 0.3, 0.2), center=(0.1, 0.0, 0.1),
                        subdivisions=2)
        path = tmp_path / "mesh.obj"
        export_obj(path, mesh)
        v, vn, f = [], [], []
        for row in path.read_text().splitlines():
            parts = row.split()
            if parts[0] == "v":
                v.append([float(x) for x in parts[1:]])
            elif parts[0] == "vn":
                vn.append([float(x) for x in parts[1:]])
            elif parts[0] == "f":
                f.append([int(x) for x in parts[1:]])
        assert np.array_equal(np.array(v), mesh.vertices)
        assert np.array_equal(np.array(vn), mesh.vertex_normals)
        faces = np.array(f)
        assert faces.min() == 1 and faces.max() == len(mesh.vertices)
        assert np.array_equal(faces - 1, mesh.faces)

    def test_transform_table(self, tmp_path):
        seq = toy_corpus(n=1)[0]
        path = tmp_path / "traj.tsv"
        export_transform_table(path, seq.trajectory)
        rows = path.read_text().splitlines()
        assert rows[0].split("\t")[0] == "frame"
        assert len(rows) == seq.trajectory.n_frames + 1
        cells = rows[4].split("\t")
        assert int(cells[0]) == 3
        assert np.array_equal(
            np.array([float(x) for x in cells[1:10]]).reshape(3, 3),
            seq.trajectory.rotations[3])
        assert np.array_equal(np.array([float(x) for x in cells[10:]]),
                              seq.trajectory.translations[3])

    def test_joint_table(self, tmp_path):
        seq = toy_corpus(n=1)[0]
        names = [f"j{i:02d}" for i in range(seq.motion.n_joints)]
        path = tmp_path / "joints.tsv"
        export_joint_table(path, seq.motion, names)
        rows = path.read_text().splitlines()
        assert len(rows) == seq.motion.n_frames * seq.motion.n_joints + 1
        cells = rows[1].split("\t")
        assert cells[:2] == ["0", "j00"]
        assert np.array_equal(np.array([float(x) for x in cells[2:]]),
                              seq.motion.joints[0, 0])

    def test_joint_table_name_mismatch(self, tmp_path):
        seq = toy_corpus(n=1)[0]
        with pytest.raises(FormatError):
            export_joint_table(tmp_path / "x.tsv", seq.motion, ["only_one"])
