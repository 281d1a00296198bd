"""Procedurally generated synthetic science world.

Every downstream component (reward model, generator, benchmark) is exercised
against this world, so it is built to be fully deterministic and to carry its
own ground truth: each training unit pairs an implicit prompt (the visual
outcome must be inferred, e.g. "an unripe apple") with an explicit prompt
("a green apple"), a superficial prompt ("a red apple"), and rendered images
for the explicit and superficial readings, plus exact subject bounding boxes.

Prompts are whitespace-separated token strings over a closed vocabulary.
Images are 32x32x3 uint8 rasters.  Subjects are saturated or dark shapes on a
light low-saturation background, so a pixel test recovers the subject mask
exactly; background clutter in the "complex" setting stays below the
saturation/luminance thresholds and outside the subject box.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

RESOLUTION = 32
CHANNELS = 3

# Subject fill colors.  All entries are either saturated (channel spread > 35)
# or dark (mean < 150) so the subject-pixel test below recognises them.
PALETTE = {
    "red": (200, 30, 30),
    "green": (30, 170, 40),
    "blue": (30, 60, 200),
    "yellow": (220, 200, 40),
    "orange": (230, 140, 30),
    "purple": (140, 40, 170),
    "brown": (140, 90, 40),
    "gray": (90, 90, 90),
    "cyan": (40, 180, 190),
}
SPECKLE_RGB = (110, 60, 25)  # nearest palette entry must stay "brown"

POSITION_ATTRIBUTES = ("top-of-frame", "middle-of-frame", "bottom-of-frame")
COLOR_ATTRIBUTES = tuple(PALETTE) + ("speckled-brown",)
ATTRIBUTES = COLOR_ATTRIBUTES + POSITION_ATTRIBUTES

# Vertical centers for position attributes; +-jitter keeps the subject
# centroid inside its third of the frame (thirds at rows 32/3 and 64/3).
_POSITION_CENTER = {"top-of-frame": 6, "middle-of-frame": 16, "bottom-of-frame": 26}

_SHAPES = ("circle", "square", "triangle", "diamond", "ring", "cross")

_SUBJECT_PIXEL_SPREAD = 35  # channel max-min above this -> subject
_SUBJECT_PIXEL_DARK = 150   # mean intensity below this -> subject
_MIN_SUBJECT_PIXELS = 8
_MODAL_SHARE = 0.5

_BACKGROUND_RANGE = (200, 236)   # uniform light backdrop
_CLUTTER_RANGE = (155, 199)      # complex-scene clutter, never subject-like


class WorldError(ValueError):
    """Raised for unknown tokens or inconsistent world definitions."""


def _attr_phrase(attribute: str) -> str:
    if attribute in PALETTE:
        return attribute
    if attribute == "speckled-brown":
        return "speckled brown"
    return {
        "top-of-frame": "at the top",
        "middle-of-frame": "in the middle",
        "bottom-of-frame": "at the bottom",
    }[attribute]


def describe_attribute(subject: str, attribute: str) -> str:
    """Prompt text for a subject realised with the given visual attribute."""
    if attribute in COLOR_ATTRIBUTES:
        return f"a {_attr_phrase(attribute)} {subject}"
    return f"a {subject} {_attr_phrase(attribute)}"


@dataclass(frozen=True)
class TaskSpec:
    """One task family: subjects x conditions with a total outcome map."""

    task_id: str
    domain: str                      # physics | chemistry | biology
    orientation: str                 # subject_oriented | condition_oriented
    subjects: tuple[str, ...]
    conditions: tuple[str, ...]
    outcome_map: dict[tuple[str, str], str]
    superficial_attribute: str       # the task's default visual prototype
    implicit_templates: dict[str, str]  # condition -> template with {subject}

    def validate(self) -> None:
        if self.domain not in ("physics", "chemistry", "biology"):
            raise WorldError(f"task {self.task_id}: unknown domain {self.domain!r}")
        if self.orientation not in ("subject_oriented", "condition_oriented"):
            raise WorldError(f"task {self.task_id}: bad orientation {self.orientation!r}")
        for subject in self.subjects:
            for condition in self.conditions:
                if (subject, condition) not in self.outcome_map:
                    raise WorldError(
                        f"task {self.task_id}: outcome_map is missing ({subject!r}, {condition!r})"
                    )
        for (subject, condition), attr in self.outcome_map.items():
            if attr not in ATTRIBUTES:
                raise WorldError(f"task {self.task_id}: unknown attribute {attr!r}")
            if attr == self.superficial_attribute:
                raise WorldError(
                    f"task {self.task_id}: outcome for ({subject!r}, {condition!r}) equals "
                    f"the superficial prototype {attr!r}"
                )
        for condition in self.conditions:
            attrs = {self.outcome_map[(s, condition)] for s in self.subjects}
            if self.orientation == "condition_oriented" and len(attrs) != 1:
                raise WorldError(
                    f"task {self.task_id}: condition {condition!r} maps subjects to "
                    f"{sorted(attrs)}, expected a single attribute"
                )
        if self.orientation == "subject_oriented":
            varied = any(
                len({self.outcome_map[(s, c)] for s in self.subjects}) > 1
                for c in self.conditions
            )
            if not varied:
                raise WorldError(f"task {self.task_id}: subject_oriented but outcomes never vary")

    def implicit_prompt(self, subject: str, condition: str) -> str:
        return self.implicit_templates[condition].format(subject=subject)


@dataclass
class SciTuple:
    """One training/benchmark unit with its ground truth."""

    task_id: str
    domain: str
    orientation: str
    subject: str
    condition: str
    implicit_prompt: str
    explicit_prompt: str
    superficial_prompt: str
    explicit_image: np.ndarray
    superficial_image: np.ndarray
    subject_box: tuple[int, int, int, int]       # box of the explicit image
    superficial_box: tuple[int, int, int, int]   # box of the superficial image
    split: str = "train"
    complexity: str = "simple"
    nuisance_seed: int = 0
    explicit_path: str | None = None
    superficial_path: str | None = None

    def to_record(self) -> dict:
        return {
            "task_id": self.task_id,
            "domain": self.domain,
            "orientation": self.orientation,
            "subject": self.subject,
            "condition": self.condition,
            "implicit_prompt": self.implicit_prompt,
            "explicit_prompt": self.explicit_prompt,
            "superficial_prompt": self.superficial_prompt,
            "explicit_image": self.explicit_path,
            "superficial_image": self.superficial_path,
            "subject_box": list(self.subject_box),
            "superficial_box": list(self.superficial_box),
            "split": self.split,
            "complexity": self.complexity,
            "nuisance_seed": self.nuisance_seed,
        }


def _subject_registry() -> dict[str, dict]:
    reg: dict[str, dict] = {}
    base_colors = ("red", "blue", "green", "yellow", "purple", "orange", "cyan", "brown")
    names = [
        # buoyancy (floaters then sinkers)
        "cork", "balloon", "beachball", "log", "stone", "anchor", "coin", "brick",
        # gravity
        "ball", "cup", "book", "hammer", "mug", "shoe",
        # magnetism (magnetic then non-magnetic)
        "screw", "paperclip", "wrench", "eraser", "feather", "crayon",
        # flame test metals
        "copper", "barium", "lithium", "strontium", "sodium", "potassium",
        # rust
        "nail", "chain", "pipe", "gate", "horseshoe", "anvil",
        # ripeness
        "apple", "tomato", "cherry", "strawberry", "pepper", "plum",
        # etiolation
        "fern", "basil", "ivy", "mint", "daisy", "rose",
    ]
    for i, name in enumerate(names):
        reg[name] = {
            "shape": _SHAPES[i % len(_SHAPES)],
            "color": base_colors[i % len(base_colors)],
        }
    return reg


SUBJECTS = _subject_registry()


def _build_default_tasks() -> tuple[TaskSpec, ...]:
    def task(task_id, domain, orientation, mapping, superficial, template, conditions=None):
        subjects = tuple(sorted({s for s, _ in mapping}))
        conds = conditions or tuple(sorted({c for _, c in mapping}))
        templates = template if isinstance(template, dict) else {c: template for c in conds}
        return TaskSpec(
            task_id=task_id,
            domain=domain,
            orientation=orientation,
            subjects=subjects,
            conditions=conds,
            outcome_map=dict(mapping),
            superficial_attribute=superficial,
            implicit_templates=templates,
        )

    floats = ("cork", "balloon", "beachball", "log")
    sinks = ("stone", "anchor", "coin", "brick")
    buoyancy = task(
        "buoyancy", "physics", "subject_oriented",
        {(s, "in water"): "top-of-frame" for s in floats}
        | {(s, "in water"): "bottom-of-frame" for s in sinks},
        "middle-of-frame",
        "a {subject} in water",
    )

    gravity = task(
        "gravity", "physics", "condition_oriented",
        {(s, "no gravity"): "top-of-frame" for s in ("ball", "cup", "book", "hammer", "mug", "shoe")},
        "bottom-of-frame",
        "a {subject} with no gravity",
    )

    magnetic = ("screw", "paperclip", "wrench")
    nonmagnetic = ("eraser", "feather", "crayon")
    magnetism = task(
        "magnetism", "physics", "subject_oriented",
        {(s, "near a magnet"): "top-of-frame" for s in magnetic}
        | {(s, "near a magnet"): "bottom-of-frame" for s in nonmagnetic},
        "middle-of-frame",
        "a {subject} near a magnet",
    )

    flame_colors = {
        "copper": "green", "barium": "green", "lithium": "red",
        "strontium": "red", "sodium": "yellow", "potassium": "purple",
    }
    flame = task(
        "flame_color", "chemistry", "subject_oriented",
        {(s, "burning"): c for s, c in flame_colors.items()},
        "orange",
        "burning {subject} powder",
    )

    rust = task(
        "rust", "chemistry", "condition_oriented",
        {(s, "weathered"): "speckled-brown" for s in ("nail", "chain", "pipe", "gate", "horseshoe", "anvil")},
        "gray",
        "a weathered {subject}",
    )

    fruits = ("apple", "tomato", "cherry", "strawberry", "pepper", "plum")
    ripeness = task(
        "ripeness", "biology", "condition_oriented",
        {(s, "unripe"): "green" for s in fruits}
        | {(s, "overripe"): "brown" for s in fruits},
        "red",
        {"unripe": "an unripe {subject}", "overripe": "an overripe {subject}"},
    )

    plants = ("fern", "basil", "ivy", "mint", "daisy", "rose")
    etiolation = task(
        "etiolation", "biology", "condition_oriented",
        {(s, "grown in darkness"): "yellow" for s in plants},
        "green",
        "a {subject} grown in darkness",
    )

    return (buoyancy, gravity, magnetism, flame, rust, ripeness, etiolation)


class World:
    """A fixed universe of tasks plus the oracles derived from it."""

    def __init__(self, tasks: tuple[TaskSpec, ...] | None = None):
        self.tasks: dict[str, TaskSpec] = {}
        for t in tasks if tasks is not None else _build_default_tasks():
            t.validate()
            if t.task_id in self.tasks:
                raise WorldError(f"duplicate task id {t.task_id!r}")
            self.tasks[t.task_id] = t
        for t in self.tasks.values():
            for s in t.subjects:
                if s not in SUBJECTS:
                    raise WorldError(f"task {t.task_id}: unknown subject {s!r}")

    def task(self, task_id: str) -> TaskSpec:
        try:
            return self.tasks[task_id]
        except KeyError:
            raise WorldError(f"unknown task {task_id!r}") from None

    def vocabulary(self) -> tuple[str, ...]:
        """Closed token vocabulary covering every prompt the world can emit."""
        tokens: set[str] = set()
        for t in self.tasks.values():
            for s in t.subjects:
                for c in t.conditions:
                    tokens.update(t.implicit_prompt(s, c).split())
                    tokens.update(describe_attribute(s, t.outcome_map[(s, c)]).split())
                    tokens.update(describe_attribute(s, t.superficial_attribute).split())
                tokens.update(f"a {s}".split())
        return tuple(sorted(tokens))

    def subject_of(self, prompt: str) -> str:
        """Rule-based subject extraction from a world prompt."""
        for token in prompt.split():
            if token in SUBJECTS:
                return token
        raise WorldError(f"no known subject in prompt {prompt!r}")

    def oracle_verdict(self, tup: SciTuple, image: np.ndarray) -> str:
        """Classify an image as explicit_like / superficial_like / neither."""
        task = self.task(tup.task_id)
        explicit_attr = task.outcome_map[(tup.subject, tup.condition)]
        measured = measure_attribute(image)
        if measured is None:
            return "neither"
        if _attribute_matches(measured, explicit_attr):
            return "explicit_like"
        if _attribute_matches(measured, task.superficial_attribute):
            return "superficial_like"
        return "neither"


def subject_pixel_mask(image: np.ndarray) -> np.ndarray:
    """Boolean mask of pixels that belong to a rendered subject."""
    arr = np.asarray(image, dtype=np.int32)
    spread = arr.max(axis=-1) - arr.min(axis=-1)
    mean = arr.mean(axis=-1)
    return (spread > _SUBJECT_PIXEL_SPREAD) | (mean < _SUBJECT_PIXEL_DARK)


def detect_box(image: np.ndarray) -> tuple[int, int, int, int] | None:
    """Ground-truth subject detector: bounding box of subject pixels.

    Returns (x1, y1, x2, y2) with x horizontal in [0, W], y vertical in
    [0, H], upper bounds exclusive; None when no subject is visible.
    """
    mask = subject_pixel_mask(image)
    if mask.sum() < 4:
        return None
    ys, xs = np.nonzero(mask)
    return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def measure_attribute(image: np.ndarray) -> dict | None:
    """Measure the dominant color and vertical placement of the subject."""
    mask = subject_pixel_mask(image)
    n = int(mask.sum())
    if n < _MIN_SUBJECT_PIXELS:
        return None
    pixels = np.asarray(image, dtype=np.float64)[mask]
    names = list(PALETTE)
    centers = np.array([PALETTE[c] for c in names], dtype=np.float64)
    dists = np.abs(pixels[:, None, :] - centers[None, :, :]).sum(axis=2)
    nearest = dists.argmin(axis=1)
    counts = np.bincount(nearest, minlength=len(names))
    modal_idx = int(counts.argmax())
    ys = np.nonzero(mask)[0]
    centroid_row = float(ys.mean())
    third = RESOLUTION / 3.0
    if centroid_row < third:
        position = "top-of-frame"
    elif centroid_row < 2 * third:
        position = "middle-of-frame"
    else:
        position = "bottom-of-frame"
    return {
        "color": names[modal_idx],
        "color_share": counts[modal_idx] / n,
        "position": position,
        "n_pixels": n,
    }


def _attribute_matches(measured: dict, attribute: str) -> bool:
    if attribute in POSITION_ATTRIBUTES:
        return measured["position"] == attribute
    target = "brown" if attribute == "speckled-brown" else attribute
    return measured["color"] == target and measured["color_share"] >= _MODAL_SHARE


def _draw_shape(canvas: np.ndarray, shape: str, cx: float, cy: float, half: int,
                rgb: tuple[int, int, int]) -> np.ndarray:
    """Paint a filled shape; returns the boolean mask of painted pixels."""
    h, w = canvas.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    if shape == "circle":
        mask = dx * dx + dy * dy <= half * half
    elif shape == "square":
        mask = (np.abs(dx) <= half) & (np.abs(dy) <= half * 0.85)
    elif shape == "triangle":
        mask = (dy >= -half) & (dy <= half) & (np.abs(dx) <= (dy + half) / 2.0 + 0.5)
    elif shape == "diamond":
        mask = np.abs(dx) + np.abs(dy) <= half
    elif shape == "ring":
        r2 = dx * dx + dy * dy
        mask = (r2 <= half * half) & (r2 >= (half * 0.45) ** 2)
    elif shape == "cross":
        mask = ((np.abs(dx) <= half * 0.35) & (np.abs(dy) <= half)) | (
            (np.abs(dy) <= half * 0.35) & (np.abs(dx) <= half)
        )
    else:
        raise WorldError(f"unknown shape {shape!r}")
    canvas[mask] = rgb
    return mask


def render_scene(subject: str, attribute: str, complexity: str = "simple",
                 nuisance_seed: int = 0) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """Render a subject realising a visual attribute.

    Deterministic for fixed inputs.  "complex" adds seeded clutter strictly
    outside the subject box; the box interior is byte-identical to the simple
    render with the same seed.
    """
    if subject not in SUBJECTS:
        raise WorldError(f"unknown subject {subject!r}")
    if attribute not in ATTRIBUTES:
        raise WorldError(f"unknown attribute {attribute!r}")
    if complexity not in ("simple", "complex"):
        raise WorldError(f"unknown complexity {complexity!r}")

    ss = np.random.SeedSequence([int(nuisance_seed) & 0xFFFFFFFF])
    scene_ss, clutter_ss = ss.spawn(2)
    rng = np.random.default_rng(scene_ss)

    shade = int(rng.integers(*_BACKGROUND_RANGE))
    canvas = np.full((RESOLUTION, RESOLUTION, CHANNELS), shade, dtype=np.uint8)

    info = SUBJECTS[subject]
    if attribute in POSITION_ATTRIBUTES:
        rgb = PALETTE[info["color"]]
        cy = _POSITION_CENTER[attribute] + int(rng.integers(-1, 2))
    else:
        fill = "brown" if attribute == "speckled-brown" else attribute
        rgb = PALETTE[fill]
        cy = _POSITION_CENTER["middle-of-frame"] + int(rng.integers(-2, 3))
    cx = 16 + int(rng.integers(-2, 3))
    half = int(rng.integers(5, 7))

    mask = _draw_shape(canvas, info["shape"], cx, cy, half, rgb)
    if attribute == "speckled-brown":
        idx = np.argwhere(mask)
        k = max(1, int(0.2 * len(idx)))
        chosen = idx[rng.choice(len(idx), size=k, replace=False)]
        canvas[chosen[:, 0], chosen[:, 1]] = SPECKLE_RGB

    ys, xs = np.nonzero(mask)
    box = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)

    if complexity == "complex":
        crng = np.random.default_rng(clutter_ss)
        protect = np.zeros((RESOLUTION, RESOLUTION), dtype=bool)
        protect[box[1]:box[3], box[0]:box[2]] = True
        for _ in range(int(crng.integers(6, 11))):
            ch, cw = int(crng.integers(3, 9)), int(crng.integers(3, 9))
            top = int(crng.integers(0, RESOLUTION - ch))
            left = int(crng.integers(0, RESOLUTION - cw))
            base = int(crng.integers(*_CLUTTER_RANGE))
            tint = crng.integers(-10, 11, size=3)
            color = np.clip(base + tint, _CLUTTER_RANGE[0], _CLUTTER_RANGE[1] - 1)
            region = np.zeros((RESOLUTION, RESOLUTION), dtype=bool)
            region[top:top + ch, left:left + cw] = True
            region &= ~protect
            canvas[region] = color.astype(np.uint8)

    return canvas, box


def realize_tuple(task: TaskSpec, subject: str, condition: str,
                  complexity: str = "simple", seed: int = 0,
                  split: str = "train") -> SciTuple:
    """Build the full prompt/image tuple for one (subject, condition) pair."""
    if (subject, condition) not in task.outcome_map:
        raise WorldError(
            f"task {task.task_id}: ({subject!r}, {condition!r}) is not in the outcome map"
        )
    outcome = task.outcome_map[(subject, condition)]
    explicit_image, explicit_box = render_scene(subject, outcome, complexity, seed)
    superficial_image, superficial_box = render_scene(
        subject, task.superficial_attribute, complexity, seed
    )
    return SciTuple(
        task_id=task.task_id,
        domain=task.domain,
        orientation=task.orientation,
        subject=subject,
        condition=condition,
        implicit_prompt=task.implicit_prompt(subject, condition),
        explicit_prompt=describe_attribute(subject, outcome),
        superficial_prompt=describe_attribute(subject, task.superficial_attribute),
        explicit_image=explicit_image,
        superficial_image=superficial_image,
        subject_box=explicit_box,
        superficial_box=superficial_box,
        split=split,
        complexity=complexity,
        nuisance_seed=seed,
    )


@dataclass
class WorldConfig:
    seed: int = 0
    train_per_combo: int = 30
    test_per_combo: int = 40
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    tasks: tuple[str, ...] | None = None  # None -> all default tasks

    def resolved_tasks(self, world: World) -> list[TaskSpec]:
        if self.tasks is None:
            return list(world.tasks.values())
        return [world.task(t) for t in self.tasks]


@dataclass
class DatasetManifest:
    root: Path
    tuples: list[SciTuple]
    vocabulary: tuple[str, ...]

    def split(self, name: str) -> list[SciTuple]:
        out = [t for t in self.tuples if t.split == name]
        if not out:
            raise WorldError(f"split {name!r} is empty")
        return out

    @property
    def splits(self) -> tuple[str, ...]:
        return tuple(sorted({t.split for t in self.tuples}))


def _tuple_seed(global_seed: int, task_id: str, subject: str, condition: str, variant: int) -> int:
    key = f"{global_seed}|{task_id}|{subject}|{condition}|{variant}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "big")


def _assign_splits(task: TaskSpec, fractions, rng) -> dict[tuple[str, str], str]:
    combos = [(s, c) for s in task.subjects for c in task.conditions]
    order = rng.permutation(len(combos))
    n = len(combos)
    n_train = max(1, round(fractions[0] * n))
    n_simple = max(1, round(fractions[1] * n))
    if n_train + n_simple >= n:
        n_train = max(1, n - 2)
        n_simple = 1
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            split = "train"
        elif rank < n_train + n_simple:
            split = "test_simple"
        else:
            split = "test_complex"
        assignment[combos[idx]] = split
    return assignment


def build_tuples(world: World, config: WorldConfig) -> list[SciTuple]:
    """Generate all tuples for a config, without touching the filesystem."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
    tuples: list[SciTuple] = []
    seen: set[tuple[str, str, str]] = set()
    for task in config.resolved_tasks(world):
        assignment = _assign_splits(task, config.split_fractions, rng)
        for (subject, condition), split in sorted(assignment.items()):
            identity = (task.task_id, subject, condition)
            if identity in seen:
                raise WorldError(f"duplicate tuple identity across splits: {identity}")
            seen.add(identity)
            complexity = "complex" if split == "test_complex" else "simple"
            count = config.train_per_combo if split == "train" else config.test_per_combo
            for variant in range(count):
                seed = _tuple_seed(config.seed, task.task_id, subject, condition, variant)
                tuples.append(
                    realize_tuple(task, subject, condition, complexity, seed, split)
                )
    return tuples


def build_dataset(world: World, config: WorldConfig, out_dir: str | Path) -> DatasetManifest:
    """Generate the dataset and write the JSONL manifest plus PNG images."""
    out = Path(out_dir)
    images = out / "images"
    images.mkdir(parents=True, exist_ok=True)
    tuples = build_tuples(world, config)
    for i, t in enumerate(tuples):
        stem = f"{t.task_id}_{t.subject}_{t.condition.replace(' ', '-')}_{i:05d}"
        t.explicit_path = f"images/{stem}_e.png"
        t.superficial_path = f"images/{stem}_s.png"
        Image.fromarray(t.explicit_image).save(out / t.explicit_path)
        Image.fromarray(t.superficial_image).save(out / t.superficial_path)
    vocab = world.vocabulary()
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for t in tuples:
            fh.write(json.dumps(t.to_record(), sort_keys=True) + "\n")
    with open(out / "vocab.json", "w", encoding="utf-8") as fh:
        json.dump(list(vocab), fh, indent=0, sort_keys=True)
    return DatasetManifest(root=out, tuples=tuples, vocabulary=vocab)


def load_manifest(root: str | Path) -> DatasetManifest:
    root = Path(root)
    tuples = []
    with open(root / "manifest.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            tuples.append(
                SciTuple(
                    task_id=rec["task_id"],
                    domain=rec["domain"],
                    orientation=rec["orientation"],
                    subject=rec["subject"],
                    condition=rec["condition"],
                    implicit_prompt=rec["implicit_prompt"],
                    explicit_prompt=rec["explicit_prompt"],
                    superficial_prompt=rec["superficial_prompt"],
                    explicit_image=np.asarray(Image.open(root / rec["explicit_image"])),
                    superficial_image=np.asarray(Image.open(root / rec["superficial_image"])),
                    subject_box=tuple(rec["subject_box"]),
                    superficial_box=tuple(rec["superficial_box"]),
                    split=rec["split"],
                    complexity=rec["complexity"],
                    nuisance_seed=rec["nuisance_seed"],
                    explicit_path=rec["explicit_image"],
                    superficial_path=rec["superficial_image"],
                )
            )
    with open(root / "vocab.json", encoding="utf-8") as fh:
        vocab = tuple(json.load(fh))
    return DatasetManifest(root=root, tuples=tuples, vocabulary=vocab)
