"""Vehicle description extraction and question refinement.

A VQA backend is asked a fixed canonical question about the input
photograph; the answer becomes the text prompt that drives every
downstream generation stage. An optional greedy search over a bank of
question templates can replace the canonical question when a scoring
signal (text-reference or image-feedback) is available.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from .backends.base import (
    EmbedBackend,
    EmbeddingVector,
    GenerationBackend,
    GenerationRequest,
    SegmentBackend,
    VQABackend,
)
from .errors import EmptyAnswerError
from .images import as_raster

CANONICAL_QUESTION = (
    "What are the model, manufacture, production year, "
    "and main features of this vehicle?"
)

# Progression from vague to specific; the canonical question is last.
DEFAULT_TEMPLATES = (
    "What is this image?",
    "What is the vehicle in this image?",
    "What are the model and manufacture of this vehicle?",
    CANONICAL_QUESTION,
)

ATTRIBUTE_SLOTS = ("model", "manufacture", "year", "features")

DEFAULT_EPSILON = 0.01
DEFAULT_MAX_ITERS = 5

# score(image, question, answer) -> scalar in [-1, 1]
Scorer = Callable[[np.ndarray, str, str], float]


def template_slots(question: str) -> frozenset:
    """Which vehicle attribute slots a template asks about."""
    q = question.lower()
    return frozenset(s for s in ATTRIBUTE_SLOTS if s in q)


@dataclass(frozen=True)
class VehiclePrompt:
    """A question/answer pair with the refinement history that produced it."""

    question: str
    answer: str
    refinement_trace: Tuple[Tuple[str, str, float], ...]
    score: float = 0.0

    def __post_init__(self):
        if not self.refinement_trace:
            raise ValueError("refinement_trace must be non-empty")
        for _, _, s in self.refinement_trace:
            if not -1.0 <= s <= 1.0:
                raise ValueError(f"trace score {s} outside [-1, 1]")
        last = self.refinement_trace[-1][2]
        if self.score != last:
            raise ValueError(
                f"score {self.score} does not match last trace entry {last}"
            )

    @classmethod
    def from_text(cls, answer: str) -> "VehiclePrompt":
        """Prompt built from user-supplied text with no VQA exchange."""
        if not answer.strip():
            raise EmptyAnswerError("prompt text is empty")
        return cls(
            question="",
            answer=answer,
            refinement_trace=(("", answer, 0.0),),
            score=0.0,
        )

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "answer": self.answer,
            "refinement_trace": [list(t) for t in self.refinement_trace],
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VehiclePrompt":
        return cls(
            question=d["question"],
            answer=d["answer"],
            refinement_trace=tuple(
                (q, a, float(s)) for q, a, s in d["refinement_trace"]
            ),
            score=float(d["score"]),
        )


@dataclass(frozen=True)
class QuestionTemplateBank:
    """Ordered question templates; always contains the canonical question."""

    templates: Tuple[str, ...] = DEFAULT_TEMPLATES

    def __post_init__(self):
        if not self.templates:
            raise ValueError("template bank must be non-empty")
        if CANONICAL_QUESTION not in self.templates:
            raise ValueError("template bank must contain the canonical question")

    @property
    def canonical_index(self) -> int:
        return self.templates.index(CANONICAL_QUESTION)

    @classmethod
    def from_file(cls, path) -> "QuestionTemplateBank":
        with open(path, "r", encoding="utf-8") as fh:
            items = json.load(fh)
        if not isinstance(items, list) or not all(
            isinstance(s, str) for s in items
        ):
            raise ValueError(f"{path}: template bank file must be a JSON "
                             "list of strings")
        return cls(templates=tuple(items))

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(list(self.templates), fh, indent=2, ensure_ascii=False)
            fh.write("\n")


def extract_description(image: np.ndarray, vqa: VQABackend) -> VehiclePrompt:
    """Ask the canonical question and wrap the answer as a prompt."""
    image = as_raster(image)
    answer = vqa.answer(image, CANONICAL_QUESTION)
    if not answer or not answer.strip():
        raise EmptyAnswerError("VQA backend returned an empty answer")
    return VehiclePrompt(
        question=CANONICAL_QUESTION,
        answer=answer,
        refinement_trace=((CANONICAL_QUESTION, answer, 0.0),),
        score=0.0,
    )


def refine_question(
    image: np.ndarray,
    bank: QuestionTemplateBank,
    vqa: VQABackend,
    scorer: Scorer,
    max_iters: int = DEFAULT_MAX_ITERS,
    epsilon: float = DEFAULT_EPSILON,
) -> VehiclePrompt:
    """Greedy search over the template bank.

    Each iteration scores every not-yet-tried template (candidate scoring
    is independent and could run concurrently), then sweeps the results in
    bank order, accepting any candidate that beats the running best. Only
    accepted candidates enter the trace, so trace scores are strictly
    increasing and the final prompt is the last entry. Stops when an
    iteration improves the best score by less than ``epsilon`` (the first
    iteration's baseline is its first candidate) or after ``max_iters``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if not bank.templates:
        raise ValueError("template bank is empty")

    image = as_raster(image)
    untried = list(bank.templates)
    trace: List[Tuple[str, str, float]] = []
    best: Optional[Tuple[str, str, float]] = None

    for _ in range(max_iters):
        if not untried:
            break
        scored = []
        for question in untried:
            answer = vqa.answer(image, question)
            scored.append((question, answer, float(scorer(image, question, answer))))
        untried = []

        baseline = best[2] if best is not None else scored[0][2]
        for cand in scored:
            if best is None or cand[2] > best[2]:
                best = cand
                trace.append(cand)
        if best[2] - baseline < epsilon:
            break

    assert best is not None
    return VehiclePrompt(
        question=best[0],
        answer=best[1],
        refinement_trace=tuple(trace),
        score=best[2],
    )


def make_scorer(
    mode: str,
    embed: EmbedBackend,
    text2image: Optional[GenerationBackend] = None,
    reference_caption: Optional[str] = None,
    seed: int = 0,
) -> Scorer:
    """Build one of the two refinement scorers.

    "txt2txt" compares the answer against a reference caption in text
    embedding space; "img2img" generates an image from the answer and
    compares it against the original photograph in image embedding space.
    """
    if mode == "txt2txt":
        if not reference_caption:
            raise ValueError("txt2txt scoring requires a reference caption")
        ref_vec = embed.embed_text(reference_caption)

        def score_txt(image, question, answer):
            return embed.embed_text(answer).cosine(ref_vec)

        return score_txt

    if mode == "img2img":
        if text2image is None:
            raise ValueError("img2img scoring requires a text2image backend")

        def score_img(image, question, answer):
            generated = text2image.generate(
                GenerationRequest(prompt=answer, seed=seed)
            )
            return embed.embed_image(image).cosine(embed.embed_image(generated))

        return score_img

    raise ValueError(f"unknown scorer mode {mode!r}")


def subject_embedding(
    image: np.ndarray,
    prompt: VehiclePrompt,
    segment: SegmentBackend,
    embed: EmbedBackend,
    warnings: Optional[List[str]] = None,
) -> EmbeddingVector:
    """Multimodal embedding of the background-masked image and the answer.

    An empty segmentation mask degrades gracefully: the unmasked image is
    used and a "degraded-mask" warning is appended to ``warnings``.
    """
    if not prompt.answer.strip():
        raise ValueError("prompt answer is empty")
    image = as_raster(image)
    result = segment.segment_foreground(image)
    if result.is_empty or not result.mask.any():
        if warnings is not None:
            warnings.append("degraded-mask")
        masked = image
    else:
        mask = result.mask
        if image.ndim == 3:
            mask = mask[:, :, None]
        masked = (image * mask).astype(np.uint8)
    return embed.embed_multimodal(masked, prompt.answer)


def prompt_file_name(instance_id: str) -> str:
    return f"{instance_id}_prompt.json"


def save_prompt(prompt: VehiclePrompt, out_dir, instance_id: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / prompt_file_name(instance_id)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(prompt.to_dict(), fh, indent=2, sort_keys=True,
                  ensure_ascii=False)
        fh.write("\n")
    return path


def load_prompt(path) -> VehiclePrompt:
    with open(path, "r", encoding="utf-8") as fh:
        return VehiclePrompt.from_dict(json.load(fh))
