"""Two-tier benchmark harness: scene/reality grading, gated normalisation,
per-domain reports, and the relative-improvement metric.

Grading is rubric-driven and judge-pluggable.  A judge returns a scene score
in {0, 1, 2} (is the described content present?) and a raw reality score in
{0, 1, 2, 3} (is the scientifically implied outcome depicted?).  Scientific
correctness is only meaningful once the scene itself is right, so any image
without a full scene score has its reality score gated to zero before
aggregation.  Reports normalise the gated reality score to [0, 100].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .world import SciTuple, World, describe_attribute

SCENE_MAX = 2
REALITY_MAX = 3


class JudgeProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class GradingRubric:
    prompt: str
    scene_criteria: dict[int, str]
    reality_criteria: dict[int, str]
    context: SciTuple | None = None  # ground-truth hook for the oracle judge

    def __post_init__(self):
        if sorted(self.scene_criteria) != list(range(SCENE_MAX + 1)):
            raise ValueError("scene criteria must cover scores 0..2")
        if sorted(self.reality_criteria) != list(range(REALITY_MAX + 1)):
            raise ValueError("reality criteria must cover scores 0..3")


@dataclass
class GradeRecord:
    scene_score: int
    raw_reality: int
    gated_reality: int
    judge_id: str
    image_ref: str = ""
    rationale: str = ""


@dataclass
class BenchmarkReport:
    normalized_overall: float
    per_domain: dict[str, float]
    per_task: dict[str, float]
    n_prompts: int
    images_per_prompt: int
    n_failed: int
    model_id: str
    split: str

    def to_dict(self) -> dict:
        return {
            "normalized_overall": self.normalized_overall,
            "per_domain": self.per_domain,
            "per_task": self.per_task,
            "n_prompts": self.n_prompts,
            "images_per_prompt": self.images_per_prompt,
            "n_failed": self.n_failed,
            "model_id": self.model_id,
            "split": self.split,
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def rubric_for(tup: SciTuple, world: World) -> GradingRubric:
    """Build the per-tuple grading rubric from the world's ground truth."""
    task = world.task(tup.task_id)
    right = describe_attribute(tup.subject, task.outcome_map[(tup.subject, tup.condition)])
    wrong = describe_attribute(tup.subject, task.superficial_attribute)
    return GradingRubric(
        prompt=tup.implicit_prompt,
        scene_criteria={
            0: f"No {tup.subject} is visible anywhere in the image.",
            1: f"A {tup.subject} may be present but it is unclear or the scene is cluttered "
               f"beyond recognition.",
            2: f"The image clearly shows one {tup.subject} as the main content.",
        },
        reality_criteria={
            0: f"The image shows {wrong}, the surface-level reading.",
            1: f"The {tup.subject} is shown with an appearance that matches neither reading.",
            2: f"The image mostly shows {right}, with visible inaccuracies.",
            3: f"The image clearly shows {right}.",
        },
        context=tup,
    )


class OracleJudge:
    """Scripted judge backed by the world's ground truth.

    Verdict mapping: an explicit-like image earns full scene and reality
    scores, a superficial-like image earns the scene score but zero reality,
    anything else earns nothing.
    """

    judge_id = "oracle"

    def __init__(self, world: World):
        self.world = world

    def verdict(self, image: np.ndarray, rubric: GradingRubric) -> tuple[int, int, str]:
        if rubric.context is None:
            raise JudgeProtocolError("oracle judge needs rubric context")
        kind = self.world.oracle_verdict(rubric.context, image)
        if kind == "explicit_like":
            return SCENE_MAX, REALITY_MAX, "subject shows the implied outcome"
        if kind == "superficial_like":
            return SCENE_MAX, 0, "subject shows the surface-level reading"
        return 0, 0, "no recognisable subject"


def grade(judge, image: np.ndarray, rubric: GradingRubric, image_ref: str = "") -> GradeRecord:
    """Run one judge verdict and apply the scene gate deterministically."""
    scene, reality, rationale = judge.verdict(image, rubric)
    judge_id = getattr(judge, "judge_id", type(judge).__name__)
    if scene not in range(SCENE_MAX + 1) or reality not in range(REALITY_MAX + 1):
        raise JudgeProtocolError(
            f"judge {judge_id!r} returned out-of-range scores ({scene}, {reality})"
        )
    gated = reality if scene == SCENE_MAX else 0
    return GradeRecord(scene_score=scene, raw_reality=reality, gated_reality=gated,
                       judge_id=judge_id, image_ref=image_ref, rationale=rationale)


def normalized_score(records: list[GradeRecord]) -> float:
    if not records:
        raise ValueError("no grade records to aggregate")
    return float(np.mean([r.gated_reality for r in records]) / REALITY_MAX * 100.0)


def _conditioning_prompt(tup: SciTuple, source: str) -> str:
    if source == "implicit":
        return tup.implicit_prompt
    if source == "explicit":
        return tup.explicit_prompt
    if source == "superficial":
        return tup.superficial_prompt
    raise ValueError(f"unknown conditioning prompt source {source!r}")


def run_benchmark(generator, tuples: list[SciTuple], images_per_prompt: int,
                  judge, world: World, seed: int = 0,
                  model_id: str = "model", split: str = "test",
                  condition_source: str = "implicit") -> BenchmarkReport:
    """Grade ``images_per_prompt`` generations per prompt.

    ``generator(prompt, seed) -> image``; generation failures exclude the
    image from the mean and are counted in the report.  Images are graded
    against the implicit prompt's rubric regardless of which prompt variant
    conditioned the generator.
    """
    if not tuples:
        raise ValueError("empty benchmark split")
    records: list[GradeRecord] = []
    by_domain: dict[str, list[GradeRecord]] = {}
    by_task: dict[str, list[GradeRecord]] = {}
    failed = 0
    for i, tup in enumerate(tuples):
        rubric = rubric_for(tup, world)
        for j in range(images_per_prompt):
            try:
                image = generator(_conditioning_prompt(tup, condition_source),
                                  seed * 1000003 + i * 101 + j)
            except Exception:
                failed += 1
                continue
            rec = grade(judge, image, rubric, image_ref=f"{tup.task_id}/{i}/{j}")
            records.append(rec)
            by_domain.setdefault(tup.domain, []).append(rec)
            by_task.setdefault(tup.task_id, []).append(rec)
    return BenchmarkReport(
        normalized_overall=normalized_score(records),
        per_domain={k: normalized_score(v) for k, v in sorted(by_domain.items())},
        per_task={k: normalized_score(v) for k, v in sorted(by_task.items())},
        n_prompts=len(tuples),
        images_per_prompt=images_per_prompt,
        n_failed=failed,
        model_id=model_id,
        split=split,
    )


def reward_benchmark(generator, tuples: list[SciTuple], images_per_prompt: int,
                     reward_model, seed: int = 0,
                     condition_source: str = "implicit") -> float:
    """Mean reward-model score of generated images against their implicit
    prompts; the scalar fed into the relative-improvement metric.

    ``condition_source`` picks the prompt variant the generator sees (the
    explicit-prompt ceiling uses "explicit"); scoring always uses the
    implicit prompt so numbers stay comparable.
    """
    if not tuples:
        raise ValueError("empty benchmark split")
    scores = []
    for i, tup in enumerate(tuples):
        for j in range(images_per_prompt):
            image = generator(_conditioning_prompt(tup, condition_source),
                              seed * 1000003 + i * 101 + j)
            scores.append(reward_model.score(tup.implicit_prompt, image))
    return float(np.mean(scores))


def relative_improvement(base_ip: float, base_ep: float, fine_ip: float) -> float:
    """Fraction of the implicit-explicit gap closed by fine-tuning.

    (fine_ip - base_ip) / (base_ep - base_ip); 1.0 means the gap is fully
    closed, values outside [0, 1] are possible.
    """
    denom = base_ep - base_ip
    if denom == 0:
        raise ValueError("relative improvement is undefined when the base "
                         "explicit and implicit scores coincide")
    return (fine_ip - base_ip) / denom


def order_swapped_two_choice(judge, prompt: str, correct_image: np.ndarray,
                             other_image: np.ndarray) -> float:
    """Accuracy contribution of one two-choice query, averaged over both
    presentation orders to cancel slot bias.

    ``judge(prompt, first_image, second_image) -> 1 | 2``.  Returns 0.0,
    0.5, or 1.0; inconsistent verdicts score 0.5 and are not an error.
    """
    first = 1.0 if judge(prompt, correct_image, other_image) == 1 else 0.0
    second = 1.0 if judge(prompt, other_image, correct_image) == 2 else 0.0
    return (first + second) / 2.0
