import json

import numpy as np
import pytest

from scialign import world as W


def test_render_deterministic():
    a, box_a = W.render_scene("ball", "top-of-frame", "simple", 7)
    b, box_b = W.render_scene("ball", "top-of-frame", "simple", 7)
    assert np.array_equal(a, b) and box_a == box_b


def test_render_green_apple_dominant():
    img, box = W.render_scene("apple", "green", "simple", 0)
    x1, y1, x2, y2 = box
    patch = img[y1:y2, x1:x2].astype(int)
    mask = W.subject_pixel_mask(img)[y1:y2, x1:x2]
    greens = patch[mask]
    assert (greens[:, 1] > greens[:, 0]).all() and (greens[:, 1] > greens[:, 2]).all()


def test_render_complex_differs_only_outside_box():
    simple, box = W.render_scene("apple", "green", "simple", 0)
    complex_, box_c = W.render_scene("apple", "green", "complex", 0)
    assert box == box_c
    x1, y1, x2, y2 = box
    assert np.array_equal(simple[y1:y2, x1:x2], complex_[y1:y2, x1:x2])
    diff = np.argwhere((simple != complex_).any(axis=2))
    assert len(diff) > 0
    for row, col in diff:
        assert not (y1 <= row < y2 and x1 <= col < x2)


def test_render_rejects_unknown_tokens():
    with pytest.raises(W.WorldError, match="zeppelin"):
        W.render_scene("zeppelin", "green")
    with pytest.raises(W.WorldError, match="plaid"):
        W.render_scene("apple", "plaid")


def test_box_tightness(world):
    for task_id, subject, condition in (
        ("ripeness", "apple", "unripe"),
        ("buoyancy", "cork", "in water"),
        ("rust", "nail", "weathered"),
    ):
        tup = W.realize_tuple(world.task(task_id), subject, condition, "simple", 5)
        mask = W.subject_pixel_mask(tup.explicit_image)
        x1, y1, x2, y2 = tup.subject_box
        # every one-pixel shrink loses at least one subject pixel
        assert mask[y1:y2, x1:x2].sum() == mask.sum()
        assert mask[y1, x1:x2].any() or mask[y1:y2, x1:x2][0].any()
        assert mask[y1:y2, x1].any()
        assert mask[y2 - 1, x1:x2].any()
        assert mask[y1:y2, x2 - 1].any()
        assert mask[y1, x1:x2].any()


def test_realize_tuple_paper_template_case(world):
    tup = W.realize_tuple(world.task("ripeness"), "apple", "unripe", "simple", 0)
    assert tup.implicit_prompt == "an unripe apple"
    assert "green" in tup.explicit_prompt.split()
    assert "red" in tup.superficial_prompt.split()


def test_realize_tuple_condition_oriented_constant(world):
    task = world.task("gravity")
    attrs = {task.outcome_map[(s, "no gravity")] for s in task.subjects}
    assert attrs == {"top-of-frame"}


def test_realize_tuple_subject_oriented_varies(world):
    task = world.task("buoyancy")
    float_attr = task.outcome_map[("cork", "in water")]
    sink_attr = task.outcome_map[("stone", "in water")]
    assert float_attr == "top-of-frame" and sink_attr == "bottom-of-frame"


def test_realize_tuple_rejects_missing_combo(world):
    with pytest.raises(W.WorldError, match="apple"):
        W.realize_tuple(world.task("buoyancy"), "apple", "in water")


def test_tuple_soundness_all_tasks(world):
    for task in world.tasks.values():
        for subject in task.subjects[:2]:
            for condition in task.conditions:
                for complexity in ("simple", "complex"):
                    tup = W.realize_tuple(task, subject, condition, complexity, 9)
                    assert world.oracle_verdict(tup, tup.explicit_image) == "explicit_like"
                    assert world.oracle_verdict(tup, tup.superficial_image) == "superficial_like"


def test_oracle_verdict_gray_is_neither(world, sample_tuple):
    gray = np.full((32, 32, 3), 128, dtype=np.uint8)
    assert world.oracle_verdict(sample_tuple, gray) == "neither"


def test_st_ct_structure(world):
    orientations = {t.task_id: t.orientation for t in world.tasks.values()}
    subject_oriented = [t for t in world.tasks.values() if t.orientation == "subject_oriented"]
    condition_oriented = [t for t in world.tasks.values() if t.orientation == "condition_oriented"]
    assert len(subject_oriented) >= 2 and len(condition_oriented) >= 2
    for task in condition_oriented:
        for c in task.conditions:
            assert len({task.outcome_map[(s, c)] for s in task.subjects}) == 1
    for task in subject_oriented:
        assert any(
            len({task.outcome_map[(s, c)] for s in task.subjects}) > 1
            for c in task.conditions
        )
    domains = {t.domain for t in world.tasks.values()}
    assert domains == {"physics", "chemistry", "biology"}


def test_manifest_counts_match_product(world, tmp_path):
    cfg = W.WorldConfig(seed=2, train_per_combo=1, test_per_combo=1)
    manifest = W.build_dataset(world, cfg, tmp_path / "d")
    combos = sum(len(t.subjects) * len(t.conditions) for t in world.tasks.values())
    assert len(manifest.tuples) == combos


def test_build_deterministic(world, tmp_path):
    cfg = W.WorldConfig(seed=5, train_per_combo=1, test_per_combo=1)
    a = W.build_dataset(world, cfg, tmp_path / "a")
    b = W.build_dataset(world, cfg, tmp_path / "b")
    text_a = (tmp_path / "a/manifest.jsonl").read_bytes()
    text_b = (tmp_path / "b/manifest.jsonl").read_bytes()
    assert text_a == text_b
    img = a.tuples[0].explicit_path
    assert (tmp_path / "a" / img).read_bytes() == (tmp_path / "b" / img).read_bytes()


def test_splits_disjoint_and_complex(small_manifest):
    seen: dict[tuple, str] = {}
    for t in small_manifest.tuples:
        key = (t.task_id, t.subject, t.condition)
        assert seen.setdefault(key, t.split) == t.split
    assert all(t.complexity == "complex" for t in small_manifest.tuples
               if t.split == "test_complex")
    assert all(t.complexity == "simple" for t in small_manifest.tuples
               if t.split in ("train", "test_simple"))


def test_manifest_roundtrip(small_manifest):
    loaded = W.load_manifest(small_manifest.root)
    assert len(loaded.tuples) == len(small_manifest.tuples)
    a, b = loaded.tuples[0], small_manifest.tuples[0]
    assert a.implicit_prompt == b.implicit_prompt
    assert np.array_equal(a.explicit_image, b.explicit_image)
    assert a.subject_box == tuple(b.subject_box)
    with open(small_manifest.root / "manifest.jsonl") as fh:
        record = json.loads(fh.readline())
    for field in ("implicit_prompt", "explicit_prompt", "superficial_prompt",
                  "explicit_image", "superficial_image", "subject_box", "task_id", "split"):
        assert field in record


def test_vocabulary_closed(world, small_manifest):
    vocab = set(small_manifest.vocabulary)
    for t in small_manifest.tuples:
        for prompt in (t.implicit_prompt, t.explicit_prompt, t.superficial_prompt):
            assert set(prompt.split()) <= vocab


def test_subject_extraction(world):
    assert world.subject_of("an unripe apple") == "apple"
    assert world.subject_of("a cork in water") == "cork"
    with pytest.raises(W.WorldError):
        world.subject_of("a mystery thing")


def test_detect_box_matches_render(world, sample_tuple):
    assert W.detect_box(sample_tuple.explicit_image) == sample_tuple.subject_box
    assert W.detect_box(np.full((32, 32, 3), 210, dtype=np.uint8)) is None
