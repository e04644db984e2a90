"""Tests for the evaluation metrics against brute-force oracles."""

import warnings
from dataclasses import replace

import numpy as np
import pytest

from hoikit.alignment import (AlignmentParams, detect_contact_start,
                              detect_release, height_shift, repair_motion,
                              synthesize_dataset)
from hoikit.body import REST_POSE, BodyProxy, default_skeleton
from hoikit.denoiser import SmoothingDenoiser
from hoikit.diffusion import NoiseSchedule
from hoikit.fixtures import room_scene, toy_corpus
from hoikit.geometry import RigidTransform
from hoikit.metrics import (EvalConfig, MetricReport, evaluate_dataset,
                            fit_feature_gaussian, frame_realism,
                            frechet_gaussian, goal_distance,
                            motion_frechet_proxy, multimodality,
                            non_collision_score, physical_realism_proxy,
                            sequence_features)
from hoikit.motion import HOISequence, MotionSequence, ObjectTrajectory
from hoikit.primitives import box_mesh
from hoikit.scene import SceneGraph, SceneObject

SKEL = default_skeleton()
RH = SKEL.index("right_hand")


def make_seq(translations, joints=None, mesh=None, fps=20.0):
    trans = np.asarray(translations, dtype=np.float64)
    n = len(trans)
    if joints is None:
        joints = np.tile(REST_POSE, (n, 1, 1))
    if mesh is None:
        mesh = box_mesh((0.1, 0.1, 0.1), center=(0, 0, 0.05), subdivisions=2)
    rot = np.tile(np.eye(3), (n, 1, 1))
    return HOISequence(MotionSequence(joints, fps),
                       ObjectTrajectory(rot, trans, fps), mesh, "")


def crate_scene(center, size=(1.0, 1.0, 1.0), subdivisions=4):
    obj = SceneObject("crate_0", "crate",
                      box_mesh(size, center=center, subdivisions=subdivisions),
                      RigidTransform.identity())
    return SceneGraph((obj,), bounds=np.array([[-9.0, -9.0, -9.0], [9, 9, 9]]))


class TestGoalDistance:
    def test_touching_is_zero(self):
        body = BodyProxy(inflate=0.0)
        pts, _ = body.surface_samples(REST_POSE)
        mesh = box_mesh((0.1, 0.1, 0.1), center=(0, 0, 0.05), subdivisions=2)
        # park one object vertex on a body surface sample
        trans = np.tile(pts[0] - mesh.vertices[0], (3, 1))
        seq = make_seq(trans, mesh=mesh)
        assert goal_distance(seq) <= 1e-12

    def test_fixed_one_meter(self):
        body = BodyProxy(inflate=0.0)
        pts, _ = body.surface_samples(REST_POSE)
        star = pts[np.argmax(pts[:, 0])]
        mesh = box_mesh((0.1, 0.1, 0.1), center=(0, 0, 0.05), subdivisions=2)
        # min-x corner of the box sits exactly 1 m east of the easternmost
        # body sample; every other pair is strictly farther
        corner = mesh.vertices[np.lexsort(mesh.vertices.T[::-1])[0]]
        trans = np.tile(star + [1.0, 0.0, 0.0] - corner, (4, 1))
        seq = make_seq(trans, mesh=mesh)
        assert goal_distance(seq) == pytest.approx(1.0, abs=1e-9)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(3)
        body = BodyProxy(inflate=0.0)
        mesh = box_mesh((0.2, 0.3, 0.1), center=(0, 0, 0.05), subdivisions=2)
        for _ in range(10):
            n = int(rng.integers(2, 5))
            joints = np.tile(REST_POSE, (n, 1, 1)) + rng.normal(0, 0.05, (n, 21, 3))
            trans = rng.uniform(-1, 1, (n, 3))
            seq = make_seq(trans, joints, mesh)
            world = seq.trajectory.apply(mesh.vertices)
            expect = np.mean([
                np.linalg.norm(body.surface_samples(joints[f])[0][:, None]
                               - world[f][None], axis=-1).min()
                for f in range(n)])
            assert goal_distance(seq) == pytest.approx(expect, rel=1e-12)


class TestMultimodality:
    def test_identical_zero(self):
        a = np.tile(REST_POSE, (5, 1, 1))
        assert multimodality([a, a.copy(), a.copy()]) == 0.0

    def test_constant_offset(self):
        a = np.tile(REST_POSE, (5, 1, 1))
        b = a + [0.0, 0.0, 0.5]
        assert multimodality([a, b]) == 0.5

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        arrays = [rng.normal(size=(6, 21, 3)) for _ in range(4)]
        total, pairs = 0.0, 0
        for i in range(4):
            for j in range(i + 1, 4):
                d = np.sqrt(((arrays[i] - arrays[j]) ** 2).sum(-1))
                total += d.mean()
                pairs += 1
        assert multimodality(arrays) == pytest.approx(total / pairs, rel=1e-12)

    def test_accepts_motion_sequences(self):
        seqs = [s.motion for s in toy_corpus(3)]
        assert multimodality(seqs) > 0.0

    def test_validation(self):
        a = np.tile(REST_POSE, (5, 1, 1))
        with pytest.raises(ValueError):
            multimodality([a])
        with pytest.raises(ValueError):
            multimodality([a, a[:3]])


class TestPhysicalRealism:
    def test_clean_corpus_is_one(self):
        for seq in toy_corpus(3):
            assert physical_realism_proxy(seq) == 1.0

    def test_teleport_costs_one_frame(self):
        seq = toy_corpus(1)[0]
        joints = seq.motion.joints.copy()
        joints[30:, :, 0] += 5.0
        seq = replace(seq, motion=seq.motion.with_joints(joints))
        n = joints.shape[0]
        assert physical_realism_proxy(seq) == (n - 1) / n
        flags = frame_realism(seq)
        assert flags[30] == 0.0 and flags[29] == 1.0 and flags[31] == 1.0

    def test_score_decreases_with_violations(self):
        base = toy_corpus(1)[0]
        n = base.motion.n_frames
        prev = 1.0
        for k in (3, 9, 18, 30):
            joints = base.motion.joints.copy()
            joints[:k, RH, 2] += 0.3  # stretched hand bone
            seq = replace(base, motion=base.motion.with_joints(joints))
            score = physical_realism_proxy(seq)
            assert score < prev
            prev = score
        # k stretched frames plus the speed spike where the offset snaps back
        assert prev == (n - 31) / n

    def test_floating_body_flagged(self):
        seq = toy_corpus(1, "levitating")[0]
        assert physical_realism_proxy(seq) == 0.0

    def test_config_validation(self):
        for bad in (dict(foot_eps=0.0), dict(max_joint_speed=-1.0),
                    dict(bone_tolerance=0.0), dict(collision_margin=-0.1),
                    dict(k_samples=1)):
            with pytest.raises(ValueError):
                EvalConfig(**bad)


class TestNonCollision:
    def test_clear_is_hundred(self):
        scene = crate_scene((4, 0, 0.5))
        seq = make_seq(np.zeros((5, 3)))
        assert non_collision_score(seq, scene) == 100.0

    def test_object_through_wall_fraction(self):
        scene = crate_scene((3, 0, 0.5))
        trans = np.tile([0.0, 0.0, 0.5], (100, 1))
        trans[50:60] = [3.0, 0.0, 0.5]  # inside the crate
        seq = make_seq(trans)
        assert non_collision_score(seq, scene) == 90.0

    def test_body_penetration_counts(self):
        scene = crate_scene((2, 0, 0.5))
        joints = np.tile(REST_POSE, (4, 1, 1))
        joints[1:3, RH] = [2.0, 0.0, 0.5]
        seq = make_seq(np.tile([0.0, 0.0, 8.0], (4, 1)), joints)
        assert non_collision_score(seq, scene) == 50.0

    def test_matches_per_frame_oracle(self):
        from hoikit.interaction import penetration_set, scene_collision_cloud
        rng = np.random.default_rng(1)
        scene = crate_scene((1.0, 0.5, 0.5), size=(0.8, 0.8, 0.8))
        cloud = scene_collision_cloud(scene)
        body = BodyProxy(inflate=0.0)
        mesh = box_mesh((0.1, 0.1, 0.1), center=(0, 0, 0.05), subdivisions=2)
        for _ in range(5):
            n = 6
            joints = np.tile(REST_POSE, (n, 1, 1))
            joints[:, :, 0] += rng.uniform(0.0, 1.2, (n, 1))
            trans = rng.uniform([0, 0, 0], [1.5, 1.0, 1.0], (n, 3))
            seq = make_seq(trans, joints, mesh)
            world = seq.trajectory.apply(mesh.vertices)
            clean = 0
            for f in range(n):
                pts, _ = body.surface_samples(joints[f])
                if penetration_set(pts, cloud).size:
                    continue
                if penetration_set(world[f], cloud).size:
                    continue
                clean += 1
            assert non_collision_score(seq, scene) == 100.0 * clean / n


def toy_features(n=8):
    return np.stack([sequence_features(s) for s in toy_corpus(n)])


class TestFrechet:
    def test_identical_sets_zero(self):
        seqs = toy_corpus(4)
        assert motion_frechet_proxy(seqs, seqs) == 0.0

    def test_symmetry(self):
        a, b = toy_corpus(5), toy_corpus(4, "levitating")
        assert motion_frechet_proxy(a, b) == pytest.approx(
            motion_frechet_proxy(b, a), abs=1e-8)

    def test_matches_eigenvalue_oracle(self):
        rng = np.random.default_rng(2)
        fa = rng.normal(size=(12, 8))
        fb = rng.normal(loc=0.5, size=(10, 8))
        mu_a, cov_a = fa.mean(axis=0), np.cov(fa, rowvar=False)
        mu_b, cov_b = fb.mean(axis=0), np.cov(fb, rowvar=False)
        ridge = np.eye(8) * 1e-10
        eig = np.linalg.eigvals((cov_a + ridge) @ (cov_b + ridge))
        oracle = (np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b)
                  - 2.0 * np.sum(np.sqrt(np.clip(eig.real, 0.0, None))))
        got = frechet_gaussian(mu_a, cov_a, mu_b, cov_b)
        assert got == pytest.approx(oracle, rel=1e-6)

    def test_forced_greater_than_refined(self):
        orig = toy_corpus(8)
        sched = NoiseSchedule.linear(100)
        den = SmoothingDenoiser(sched, 0.25)
        rng = np.random.default_rng(7)
        forced, refined = [], []
        for k, s in enumerate(orig):
            s = replace(s, contact_frame=detect_contact_start(s),
                        release_frame=detect_release(s))
            dh = 0.04 if k % 2 == 0 else 0.08
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                forced.append(height_shift(s, AlignmentParams(0.62, 0.62 + dh,
                                                              t_w=1)))
            p = AlignmentParams(0.62, 0.62 + dh, t_w=8, t_noise=12)
            refined.append(repair_motion(height_shift(s, p), p, den, sched, rng))
        f_forced = motion_frechet_proxy(forced, orig)
        f_refined = motion_frechet_proxy(refined, orig)
        assert f_forced > f_refined > 0.0

    def test_feature_vector_shape_and_names(self):
        from hoikit.metrics import FEATURE_NAMES
        f = sequence_features(toy_corpus(1)[0])
        assert f.shape == (len(FEATURE_NAMES),) == (8,)
        assert np.isfinite(f).all()

    def test_fit_validation(self):
        with pytest.raises(ValueError):
            fit_feature_gaussian(toy_features(2)[:1])


class TestEvaluateDataset:
    def test_clean_records(self):
        records, _ = synthesize_dataset(toy_corpus(4), [room_scene()], seed=0)
        items = []
        for r in records:
            floor = tuple(o.id for o in r.scene.objects if o.category == "floor")
            items.append((r.sequence, r.scene, (r.target_id,) + floor))
        rep = evaluate_dataset(items)
        assert rep.physical_realism == 1.0
        assert rep.non_collision == 100.0
        assert rep.goal_distance > 0.0
        assert rep.multimodality > 0.0

    def test_report_validation(self):
        with pytest.raises(ValueError):
            MetricReport(-0.1, 0.0, 1.0, 100.0)
        with pytest.raises(ValueError):
            MetricReport(0.0, 0.0, 1.5, 100.0)
        with pytest.raises(ValueError):
            MetricReport(0.0, 0.0, 1.0, 101.0)
        with pytest.raises(ValueError):
            evaluate_dataset([])
