import json
from dataclasses import replace

import numpy as np
import pytest

from bgsim.skeleton import (EdgeKind, Joint, OcclusionState, PoseConfiguration, SkeletonModel,
                            default_model_path, dumps_model, farthest_joint, kinetic_bfs,
                            load_model, model_from_dict, model_to_dict, out_degree, save_model,
                            validate)
from conftest import chain_model, simple_edge

# hand count, rooted at the head: kinetic children plus contextual edges whose
# left endpoint is reached first
OUT_DEGREE_FROM_HEAD = {
    "head": 1, "neck": 3, "l_shoulder": 2, "r_shoulder": 1, "l_elbow": 2, "r_elbow": 1,
    "l_wrist": 1, "r_wrist": 0, "l_hip": 2, "r_hip": 1, "l_knee": 2, "r_knee": 1,
    "l_ankle": 1, "r_ankle": 0, "torso": 2,
}


def test_occlusion_codes():
    assert [int(s) for s in OcclusionState] == [0, 1, 2]


class TestDefaultModel:
    def test_valid(self, model15):
        assert validate(model15) == []

    def test_joint_names(self, model15):
        assert set(model15.names) == {
            "head", "neck", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist",
            "r_wrist", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle", "torso"}

    def test_stage_one(self, model15):
        names = model15.names
        assert {names[j] for j in model15.stage_sets()[0]} == {
            "head", "neck", "l_shoulder", "r_shoulder"}

    def test_stages_partition(self, model15):
        s = model15.stage_sets()
        assert not (s[0] & s[1] or s[0] & s[2] or s[1] & s[2])
        assert s[0] | s[1] | s[2] == set(range(15))

    def test_kinetic_tree_size(self, model15):
        assert len(model15.kinetic_edges()) == 14

    def test_contextual_pairs_are_left_right(self, model15):
        names = model15.names
        pairs = {(names[model15.edges[e].i], names[model15.edges[e].j])
                 for e in model15.contextual_edges()}
        assert pairs == {(f"l_{p}", f"r_{p}") for p in
                         ("shoulder", "elbow", "wrist", "hip", "knee", "ankle")}

    def test_four_types_everywhere(self, model15):
        assert {e.num_types for e in model15.edges} == {4}

    def test_out_degree_hand_count(self, model15):
        head = model15.joint_id("head")
        got = {name: out_degree(model15, j, head) for j, name in enumerate(model15.names)}
        assert got == OUT_DEGREE_FROM_HEAD


class TestValidate:
    def test_duplicate_edge(self):
        m = chain_model(3)
        bad = replace(m, edges=list(m.edges) + [simple_edge(1, 0, "contextual")])
        problems = validate(bad)
        assert len(problems) == 1 and "(1, 0)" in problems[0] and "duplicate" in problems[0]

    def test_kinetic_cycle(self):
        m = chain_model(3)
        bad = replace(m, edges=list(m.edges) + [simple_edge(0, 2)])
        assert any(p.startswith("ε_K not a tree") for p in validate(bad))

    def test_disconnected(self):
        m = chain_model(3)
        bad = replace(m, edges=[m.edges[0]])
        assert any("not connected" in p for p in validate(bad))

    def test_positive_quadratic(self):
        m = chain_model(2)
        bad = replace(m, edges=[simple_edge(0, 1, quad=0.5)])
        assert any("quadratic" in p for p in validate(bad))

    def test_non_contiguous_ids(self):
        m = chain_model(2)
        bad = replace(m, joints=[Joint(0, "a", 1), Joint(2, "b", 1)])
        assert any(p.startswith("joints") for p in validate(bad))

    def test_bad_table_shape(self):
        m = chain_model(2)
        e = simple_edge(0, 1)
        bad_edge = replace(e, occlusion_bias=np.zeros((1, 1, 3, 2)))
        assert any("occlusion_bias" in p for p in validate(replace(m, edges=[bad_edge])))

    def test_missing_stage(self):
        m = chain_model(2)
        bad = replace(m, joints=[Joint(0, "a", 1), Joint(1, "b", 5)])
        assert any("stage" in p for p in validate(bad))

    def test_self_loop(self):
        m = chain_model(2)
        assert any("self-loop" in p for p in
                   validate(replace(m, edges=list(m.edges) + [simple_edge(1, 1, "contextual")])))


class TestGraphHelpers:
    def test_chain_leaf_out_degree(self):
        m = chain_model(4)
        assert out_degree(m, 3, 0) == 0

    def test_star_center(self):
        joints = [Joint(k, f"j{k}", 1) for k in range(4)]
        m = SkeletonModel(joints, [simple_edge(0, k) for k in (1, 2, 3)], np.ones(4),
                          np.zeros((4, 3)), np.ones(4))
        assert out_degree(m, 0, 0) == 3

    def test_unknown_joint(self):
        with pytest.raises(ValueError):
            out_degree(chain_model(2), 5, 0)

    def test_bfs_depths(self):
        order, parent, depth = kinetic_bfs(chain_model(4), 1)
        assert order[0] == 1 and depth == {1: 0, 0: 1, 2: 1, 3: 2}
        assert parent[3] == (2, 2)

    def test_farthest(self, model15):
        head = model15.joint_id("head")
        assert model15.names[farthest_joint(model15, head)] == "l_ankle"

    def test_restrict(self, model15):
        sub, keep = model15.restrict(model15.stage_sets()[0])
        assert keep == sorted(model15.stage_sets()[0])
        assert sub.n_joints == 4 and validate(sub) == []
        assert len(sub.contextual_edges()) == 1


class TestSerialization:
    def test_file_round_trip_byte_identical(self, tmp_path):
        text = default_model_path().read_text(encoding="utf-8")
        m = load_model(default_model_path())
        assert dumps_model(m) == text
        save_model(m, tmp_path / "m.json")
        assert load_model(tmp_path / "m.json") == m

    def test_dict_round_trip(self):
        m = chain_model(3, contextual=[(0, 2)])
        assert model_from_dict(json.loads(json.dumps(model_to_dict(m)))) == m

    def test_top_level_keys(self):
        d = json.loads(default_model_path().read_text(encoding="utf-8"))
        assert {"joints", "edges", "unary", "oks_k", "stages"} <= set(d)

    def test_missing_key(self):
        d = model_to_dict(chain_model(2))
        del d["stages"]
        with pytest.raises(ValueError, match="stages"):
            model_from_dict(d)

    def test_invalid_file_rejected(self, tmp_path):
        m = chain_model(3)
        bad = replace(m, edges=list(m.edges) + [simple_edge(0, 2)])
        save_model(bad, tmp_path / "bad.json")
        with pytest.raises(ValueError, match="not a tree"):
            load_model(tmp_path / "bad.json")


def test_pose_configuration_key():
    a = PoseConfiguration([[1, 2], [3, 4]], [[0, 1]], [0, 2], 1.5)
    b = a.copy()
    b.score = -3.0
    assert a.same_as(b)
    b.positions[0, 0] = 9
    assert not a.same_as(b)


def test_edge_kind_parsing():
    assert simple_edge(0, 1, "contextual").kind is EdgeKind.CONTEXTUAL
