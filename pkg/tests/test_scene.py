import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boxseg.scene import (BACKGROUND, Instance, Scene, SceneConfig, SceneError,
                          SceneFormatError, SceneGenerationError, SceneVersionError,
                          generate_corpus, generate_scene, load_corpus, load_scene,
                          macc_oracle, overlap_fraction, partition_regions, save_corpus,
                          save_scene)
from conftest import hand_scene


def test_partition_examples():
    s = hand_scene()
    p = partition_regions(s)
    assert p.kind.tolist() == [1, 2, 0, 1, 2]
    assert p.single_idx.tolist() == [0, 3]
    assert p.single_owner.tolist() == [0, 1]
    assert p.overlap_idx.tolist() == [1, 4]
    assert p.background_idx.tolist() == [2]
    assert p.candidates(0).tolist() == [1, 2]
    assert p.m_l.sum(axis=1).tolist() == [1, 1]
    assert macc_oracle(p, s).tolist() == [2, 1]


def test_macc_oracle_flags_non_candidate():
    s = hand_scene()
    s.gt_instance[1] = 0     # box 0 does not contain point 1
    with pytest.raises(SceneError, match="not a box candidate"):
        macc_oracle(partition_regions(s), s)


def test_single_instance_has_no_overlap():
    s = generate_scene(SceneConfig(k_range=(1, 1)), 4)
    p = partition_regions(s)
    assert s.num_instances == 1 and p.num_overlap == 0
    assert (p.kind[s.gt_instance == 0] == 1).all()
    assert macc_oracle(p, s).size == 0


@pytest.mark.parametrize("seed", [0, 5, 17])
def test_generated_scene_invariants(seed):
    cfg = SceneConfig()
    s = generate_scene(cfg, seed)
    p = partition_regions(s)
    assert cfg.k_range[0] <= s.num_instances <= cfg.k_range[1]
    assert p.num_single + p.num_overlap + len(p.background_idx) == s.num_points
    assert np.all((s.points[:, 3:] >= 0) & (s.points[:, 3:] <= 1))
    for k, inst in enumerate(s.instances):
        own = s.xyz[s.gt_instance == k]
        assert len(own) >= 1
        assert np.array_equal(inst.box_min, own.min(axis=0))
        assert np.array_equal(inst.box_max, own.max(axis=0))
        assert np.all(inst.box_min < inst.box_max)
        assert 0 <= inst.class_id < cfg.num_classes
    assert p.num_overlap > 0
    truth = macc_oracle(p, s)
    assert np.all(p.inside[p.overlap_idx, truth])
    assert (s.gt_instance[p.background_idx] == BACKGROUND).all()


def test_determinism():
    cfg = SceneConfig()
    a, b = generate_scene(cfg, 11), generate_scene(cfg, 11)
    assert a == b and a.points.tobytes() == b.points.tobytes()
    assert not generate_scene(cfg, 12) == a


def test_overlap_fraction_over_100_seeds():
    cfg = SceneConfig()
    fr = np.array([overlap_fraction(generate_scene(cfg, s)) for s in range(100)])
    assert 0.10 <= fr.mean() <= 0.30
    assert fr.min() >= cfg.overlap_range[0] and fr.max() <= cfg.overlap_range[1]


def test_unreachable_overlap_reports_fraction():
    cfg = SceneConfig(overlap_range=(0.9, 0.95), max_retries=3)
    with pytest.raises(SceneGenerationError, match=r"overlap fraction \d\.\d+"):
        generate_scene(cfg, 0)


def test_invalid_config():
    with pytest.raises(ValueError):
        generate_scene(SceneConfig(k_range=(4, 2)), 0)
    with pytest.raises(ValueError):
        generate_scene(SceneConfig(overlap_range=(0.0, 0.3)), 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_partition_consistent_with_boxes(seed):
    cfg = SceneConfig(k_range=(2, 4), points_per_instance=(20, 40), background_points=30,
                      overlap_range=(0.01, 0.9))
    s = generate_scene(cfg, seed)
    p = partition_regions(s)
    count = np.stack([i.contains(s.xyz) for i in s.instances], axis=1).sum(axis=1)
    assert np.array_equal(np.minimum(count, 2), p.kind)
    assert np.all(p.inside[p.single_idx, p.single_owner])


def test_scene_round_trip(tmp_path):
    s = generate_scene(SceneConfig(), 3)
    save_scene(s, tmp_path / "s.json")
    back = load_scene(tmp_path / "s.json")
    assert back == s
    assert back.points.tobytes() == s.points.tobytes()


def test_corpus_round_trip(tmp_path):
    cfg = replace(SceneConfig(), points_per_instance=(20, 30), background_points=20,
                  overlap_range=(0.02, 0.6))
    corpus = generate_corpus(cfg, 3, seed=7)
    save_corpus(corpus, tmp_path)
    back = load_corpus(tmp_path)
    assert list(back) == [7, 8, 9]
    assert all(back[k] == corpus[k] for k in corpus)


def test_truncated_file(tmp_path):
    p = tmp_path / "s.json"
    save_scene(hand_scene(), p)
    p.write_text(p.read_text()[:40])
    with pytest.raises(SceneFormatError, match="line 1 column"):
        load_scene(p)


def test_version_mismatch_names_both(tmp_path):
    p = tmp_path / "s.json"
    save_scene(hand_scene(), p)
    doc = json.loads(p.read_text())
    doc["version"] = 99
    p.write_text(json.dumps(doc))
    with pytest.raises(SceneVersionError, match=r"99.*1"):
        load_scene(p)


@pytest.mark.parametrize("field,value,match", [
    ("points", [[1, 2, 3]], "N x 6"),
    ("gt_instance", [0], "shape"),
    ("instances", [], "empty"),
])
def test_malformed_fields(tmp_path, field, value, match):
    p = tmp_path / "s.json"
    save_scene(hand_scene(), p)
    doc = json.loads(p.read_text())
    doc[field] = value
    p.write_text(json.dumps(doc))
    with pytest.raises(SceneFormatError, match=match):
        load_scene(p)
