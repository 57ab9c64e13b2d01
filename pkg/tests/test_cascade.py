import numpy as np
import pytest

from bgsim.cascade import (BasePoint, NoDetectionError, StagePlan, assemble_persons,
                           _local_score, run_cascade, run_stage,
                           select_base_point)
from bgsim.synth import SceneSpec, generate_scene


class TestStagePlan:
    def test_cumulative(self, model15):
        plan = StagePlan.from_model(model15)
        assert plan.active(1) == {0, 1, 2, 3}
        assert plan.active(2) == {0, 1, 2, 3, 4, 5, 8, 9, 14}
        assert plan.active(3) == set(range(15))

    def test_rejects_overlap_and_range(self, model15):
        with pytest.raises(ValueError, match="overlap"):
            StagePlan(({0, 1}, {1, 2}))
        with pytest.raises(ValueError):
            StagePlan.from_model(model15).active(4)


class TestBasePoint:
    def test_strongest(self):
        maps = np.zeros((3, 4, 4))
        maps[2, 1, 3] = 0.9
        maps[0, 0, 0] = 0.8
        assert select_base_point(maps, {0, 2}) == (2, (3, 1), 0.9)

    def test_tie_lower_joint_then_row_major(self):
        maps = np.zeros((3, 4, 4))
        maps[1, 2, 0] = maps[1, 0, 3] = maps[2, 0, 0] = 0.7
        assert select_base_point(maps, {1, 2}) == (1, (3, 0), 0.7)

    def test_inactive_ignored(self):
        maps = np.zeros((2, 3, 3))
        maps[1, 1, 1] = 1.0
        assert select_base_point(maps, {0})[0] == 0

    def test_mask(self):
        maps = np.zeros((1, 3, 3))
        maps[0, 1, 1] = 1.0
        allowed = np.ones((1, 3, 3), bool)
        allowed[0, 1, 1] = False
        assert select_base_point(maps, {0}, allowed)[2] == 0.0
        with pytest.raises(ValueError):
            select_base_point(maps, {0}, np.zeros((1, 3, 3), bool))

    def test_errors(self):
        with pytest.raises(ValueError):
            select_base_point(np.zeros((1, 2, 2)), set())
        with pytest.raises(ValueError):
            select_base_point(np.zeros((1, 2, 2)), {3})


def clean_scene(seed, **kw):
    return generate_scene(SceneSpec(seed=seed, **kw))


class TestCascade:
    @pytest.mark.parametrize("seed", range(3))
    def test_clean_scene_recovered(self, model15, seed):
        scene = clean_scene(seed)
        person = run_cascade(model15, scene.stack)
        err = np.hypot(*(person.pose.positions - scene.gt_positions(0)).T)
        assert err.max() <= 1.0
        assert person.assigned.all() and len(person.per_stage_base) == 3
        assert all(isinstance(b, BasePoint) for b in person.per_stage_base)
        assert -1.0 <= person.agreement <= 1.0

    def test_first_base_in_stage_one(self, model15):
        person = run_cascade(model15, clean_scene(0).stack)
        assert person.per_stage_base[0].stage == 1
        assert person.per_stage_base[0].joint in {0, 1, 2, 3}

    def test_deterministic(self, model15):
        stack = clean_scene(1, occlusion_rate=0.2).stack
        a, b = run_cascade(model15, stack), run_cascade(model15, stack)
        assert np.array_equal(a.pose.positions, b.pose.positions) and a.score == b.score

    def test_stage_deferral(self, model15):
        stack = clean_scene(2, clutter=0.0).stack
        stack[[0, 1, 2, 3]] = 0.0
        state = run_stage(1, model15, stack)
        assert not state.assigned.any() and state.bases == []
        person = run_cascade(model15, stack)
        assert person.per_stage_base[0].stage == 2 and person.assigned.all()

    def test_no_detectable_joints(self, model15):
        with pytest.raises(NoDetectionError, match="no detectable joints"):
            run_cascade(model15, np.zeros((15, 20, 20)))

    def test_revisions_strictly_improve(self, model15):
        scene = clean_scene(3)
        stack = scene.stack
        s1 = run_stage(1, model15, stack)
        s2 = run_stage(2, model15, stack, s1)
        moved = [j for j in np.flatnonzero(s1.assigned)
                 if not np.array_equal(s1.positions[j], s2.positions[j])]
        assert moved
        for j in moved:
            old_pos = s2.positions.copy()
            old_pos[j] = s1.positions[j]
            old_occ = s2.occlusions.copy()
            old_occ[j] = s1.occlusions[j]
            new = _local_score(model15, stack, s2.positions, s2.occlusions, j, s2.assigned)
            old = _local_score(model15, stack, old_pos, old_occ, j, s2.assigned)
            assert new > old
        placed = np.flatnonzero(s2.assigned)
        assert np.array_equal(s2.positions[placed], scene.gt_positions(0)[placed])

    def test_occluded_joint_near_truth(self, model15):
        scene = clean_scene(7, occluded_per_person=1)
        j = int(np.flatnonzero(scene.gt_occlusions(0) == 2)[0])
        person = run_cascade(model15, scene.stack)
        assert np.hypot(*(person.pose.positions[j] - scene.gt_positions(0)[j])) <= 3.0


class TestAssemble:
    def test_zero_maps(self, model15):
        assert assemble_persons(model15, np.zeros((15, 16, 16))) == []

    def test_two_persons(self, model15):
        scene = generate_scene(SceneSpec(seed=11, n_persons=2, grid=(64, 48)), model15)
        persons = assemble_persons(model15, scene.stack)
        assert len(persons) == 2
        assert persons[0].score >= persons[1].score
        gts = [scene.gt_positions(p) for p in range(2)]
        for r in persons:
            errs = [np.hypot(*(r.pose.positions - g).T).mean() for g in gts]
            assert min(errs) <= 1.0

    def test_max_persons(self, model15):
        scene = generate_scene(SceneSpec(seed=11, n_persons=2, grid=(64, 48)), model15)
        assert len(assemble_persons(model15, scene.stack, max_persons=1)) == 1
