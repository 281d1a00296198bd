"""JSON-over-HTTP adapters for external services.

Three optional integrations share one tiny transport:

* detector:   POST {base}/detect   {"image_png_b64": str, "phrase": str}
              -> {"boxes": [[x1, y1, x2, y2], ...], "scores": [float, ...]}
* subject:    POST {base}/subject  {"prompt": str} -> {"subject": str}
* judge:      POST {base}/grade    {"instruction": str, "prompt": str,
              "scene_grading": str, "reality_grading": str,
              "image_png_b64": str}
              -> {"description": str, "scene score": int, "reality score": int}

All endpoints speak UTF-8 JSON.  A malformed judge reply is retried once and
then raised as a protocol error.  Tests run these adapters against a local
mock server; nothing in the core training or evaluation paths requires them.
"""

from __future__ import annotations

import base64
import io
import json

import numpy as np
import requests
from PIL import Image

from .bench import GradingRubric, JudgeProtocolError

DEFAULT_TIMEOUT = 10.0


def image_to_b64(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def b64_to_image(payload: str) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(base64.b64decode(payload))))


def _post(url: str, payload: dict, timeout: float = DEFAULT_TIMEOUT) -> dict:
    resp = requests.post(url, json=payload, timeout=timeout)
    resp.raise_for_status()
    return resp.json()


class DetectorClient:
    """Open-vocabulary detector adapter: subject phrase -> boxes."""

    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def detect(self, image: np.ndarray, phrase: str) -> list[tuple[tuple[int, int, int, int], float]]:
        reply = _post(f"{self.base_url}/detect",
                      {"image_png_b64": image_to_b64(image), "phrase": phrase},
                      self.timeout)
        boxes = [tuple(int(v) for v in box) for box in reply.get("boxes", [])]
        scores = [float(s) for s in reply.get("scores", [])]
        return list(zip(boxes, scores))

    def best_box(self, image: np.ndarray, phrase: str) -> tuple[int, int, int, int] | None:
        hits = self.detect(image, phrase)
        if not hits:
            return None
        return max(hits, key=lambda pair: pair[1])[0]


class SubjectClient:
    """Language-model adapter that extracts the subject token from a prompt."""

    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def extract(self, prompt: str) -> str:
        reply = _post(f"{self.base_url}/subject", {"prompt": prompt}, self.timeout)
        subject = reply.get("subject")
        if not isinstance(subject, str) or not subject:
            raise JudgeProtocolError(f"subject adapter returned {reply!r}")
        return subject


JUDGE_INSTRUCTION = (
    "You are grading a generated image against a prompt. First check the "
    "scene composition criteria; if the scene is not fully satisfied, the "
    "reality score must be 0. Only when the scene earns its full score, "
    "grade how faithfully the image depicts the outcome the prompt implies, "
    "ignoring style and minor background detail. Describe the image first, "
    "then score strictly by the given criteria.\n"
    "Input: {{\"Prompt\": {prompt!r}, \"Scene Grading\": {scene!r}, "
    "\"Reality Grading\": {reality!r}, \"Image\": <attached>}}\n"
    "Reply with JSON: {{\"description\": str, \"scene score\": int, "
    "\"reality score\": int}}"
)


class HttpJudge:
    """External judge adapter implementing the benchmark verdict interface."""

    def __init__(self, base_url: str, judge_id: str = "http", timeout: float = DEFAULT_TIMEOUT):
        self.base_url = base_url.rstrip("/")
        self.judge_id = judge_id
        self.timeout = timeout

    def _payload(self, image: np.ndarray, rubric: GradingRubric) -> dict:
        scene = " ".join(f"{k} points: {v}" for k, v in sorted(rubric.scene_criteria.items()))
        reality = " ".join(f"{k} points: {v}" for k, v in sorted(rubric.reality_criteria.items()))
        return {
            "instruction": JUDGE_INSTRUCTION.format(prompt=rubric.prompt, scene=scene,
                                                    reality=reality),
            "prompt": rubric.prompt,
            "scene_grading": scene,
            "reality_grading": reality,
            "image_png_b64": image_to_b64(image),
        }

    def verdict(self, image: np.ndarray, rubric: GradingRubric) -> tuple[int, int, str]:
        payload = self._payload(image, rubric)
        last_error: Exception | None = None
        for _ in range(2):  # one retry on parse failure
            reply = _post(f"{self.base_url}/grade", payload, self.timeout)
            try:
                return (int(reply["scene score"]), int(reply["reality score"]),
                        str(reply.get("description", "")))
            except (KeyError, TypeError, ValueError) as err:
                last_error = err
        raise JudgeProtocolError(
            f"judge {self.judge_id!r} reply could not be parsed: {last_error}"
        )
