"""Two-turn locate-and-focus episode runner.

Turn 1 shows every presented frame (labeled "Frame {i}:") and asks for a
keyframe selection; turn 2 carries turn 1 back as an assistant message and
shows only the selected keyframes. Persistent anchoring failure falls back to
uniformly spaced keyframes (or direct answering), flagged on the trajectory.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .backends import Backend, GenerationRequest, ImagePart, Message, TextPart, request_digest
from .data_model import DatasetManifest, Sample, uniform_indices
from .errors import (BackendTimeout, BackendUnavailable, ConfigError, EmptySelection,
                     MissingActionBlock, ResponseEmpty, UnparsableAction)
from .grammar import (Answer, KeyframeSet, SelectKeyframes, Turn, parse_turn,
                      render_turn, validate_keyframes)

ANCHOR_TEMPLATES = {
    "default": (
        "You are given {n} video frames, each labeled with its index, and a question "
        "about text visible in the video. First write your analysis inside "
        "<reasoning></reasoning>. Then output exactly one action inside "
        "<action></action> choosing the frames whose visible text is needed to answer, "
        "in the form: select key frame: [id1, id2, ...]"
    ),
}

ANSWER_TEMPLATES = {
    "default": (
        "These are the keyframes you selected, labeled with their indices. Read the "
        "text in them carefully and answer the question. Write your analysis inside "
        "<reasoning></reasoning>, then output exactly one action inside "
        "<action></action> in the form: answer: <your answer>"
    ),
}

DIRECT_TEMPLATE = (
    "You are given {n} video frames, each labeled with its index, and a question "
    "about text visible in the video. Write your analysis inside "
    "<reasoning></reasoning>, then output exactly one action inside "
    "<action></action> in the form: answer: <your answer>"
)


@dataclass(frozen=True)
class EngineConfig:
    keyframe_cap: int = 8
    max_attempts: int = 5
    parallelism: int = 1
    anchor_template_id: str = "default"
    answer_template_id: str = "default"
    fallback_policy: str = "uniform"  # "uniform" | "direct"
    temperature: float = 0.0
    max_new_tokens: int = 512
    seed: Optional[int] = None
    backoff_base_s: float = 0.1

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.anchor_template_id not in ANCHOR_TEMPLATES:
            raise ConfigError(f"unknown anchor template {self.anchor_template_id!r}")
        if self.answer_template_id not in ANSWER_TEMPLATES:
            raise ConfigError(f"unknown answer template {self.answer_template_id!r}")
        if self.fallback_policy not in ("uniform", "direct"):
            raise ConfigError(f"unknown fallback policy {self.fallback_policy!r}")


@dataclass(frozen=True)
class Trajectory:
    sample_id: str
    turn1: Turn
    keyframes: KeyframeSet
    turn2: Turn
    used_fallback: bool
    attempts_turn1: int
    attempts_turn2: int
    transcript_digests: tuple[str, ...] = ()


def derive_seed(base: Optional[int], sample_id: str, stage: str, attempt: int) -> Optional[int]:
    """Per-call seed, stable across runs so replay digests line up."""
    if base is None:
        return None
    key = f"{base}:{sample_id}:{stage}:{attempt}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "big")


def build_anchor_prompt(sample: Sample, config: EngineConfig) -> tuple[Message, ...]:
    parts: list = [TextPart(ANCHOR_TEMPLATES[config.anchor_template_id].format(n=len(sample.frames)))]
    for frame in sample.frames:
        parts.append(TextPart(f"Frame {frame.index}:"))
        parts.append(ImagePart(path=frame.source_path, index=frame.index))
    parts.append(TextPart(f"Question: {sample.question}"))
    return (Message(role="user", parts=tuple(parts)),)


def build_answer_prompt(sample: Sample, turn1: Turn, keyframes: KeyframeSet,
                        config: EngineConfig) -> tuple[Message, ...]:
    assistant = Message(role="assistant", parts=(TextPart(render_turn(turn1)),))
    parts: list = [TextPart(ANSWER_TEMPLATES[config.answer_template_id])]
    by_index = {f.index: f for f in sample.frames}
    for fid in keyframes.ids:
        frame = by_index[fid]
        parts.append(TextPart(f"Frame {frame.index}:"))
        parts.append(ImagePart(path=frame.source_path, index=frame.index))
    parts.append(TextPart(f"Question: {sample.question}"))
    return (assistant, Message(role="user", parts=tuple(parts)))


def build_direct_prompt(sample: Sample, config: EngineConfig) -> tuple[Message, ...]:
    parts: list = [TextPart(DIRECT_TEMPLATE.format(n=len(sample.frames)))]
    for frame in sample.frames:
        parts.append(TextPart(f"Frame {frame.index}:"))
        parts.append(ImagePart(path=frame.source_path, index=frame.index))
    parts.append(TextPart(f"Question: {sample.question}"))
    return (Message(role="user", parts=tuple(parts)),)


def complete_with_retry(backend: Backend, request: GenerationRequest,
                        config: EngineConfig) -> str:
    """Exponential backoff on transient backend errors; parse errors are not retried here."""
    last: Exception | None = None
    for attempt in range(config.max_attempts):
        try:
            return backend.complete(request)
        except (BackendUnavailable, BackendTimeout, ResponseEmpty) as e:
            last = e
            if attempt + 1 < config.max_attempts:
                time.sleep(config.backoff_base_s * (2 ** attempt))
    raise last


def run_episode(sample: Sample, backend: Backend, config: EngineConfig) -> Trajectory:
    digests: list[str] = []
    frame_count = len(sample.frames)

    def call(messages: tuple[Message, ...], stage: str, attempt: int) -> str:
        req = GenerationRequest(
            messages=messages,
            max_new_tokens=config.max_new_tokens,
            temperature=config.temperature,
            seed=derive_seed(config.seed, sample.sample_id, stage, attempt),
        )
        digests.append(request_digest(req))
        return complete_with_retry(backend, req, config)

    # turn 1: keyframe anchoring
    turn1: Optional[Turn] = None
    keyframes: Optional[KeyframeSet] = None
    attempts1 = 0
    anchor = build_anchor_prompt(sample, config)
    for attempt in range(config.max_attempts):
        attempts1 = attempt + 1
        raw = call(anchor, "anchor", attempt)
        try:
            t = parse_turn(raw)
            if not isinstance(t.action, SelectKeyframes):
                raise UnparsableAction(render_turn(t), raw=raw)
            keyframes = validate_keyframes(t.action, frame_count, config.keyframe_cap)
            turn1 = t
            break
        except (MissingActionBlock, UnparsableAction, EmptySelection):
            continue

    used_fallback = turn1 is None
    if used_fallback:
        if config.fallback_policy == "direct":
            return _direct_answer_episode(sample, backend, config, call, digests, attempts1)
        ids = tuple(uniform_indices(frame_count, config.keyframe_cap))
        keyframes = KeyframeSet(ids=ids)
        turn1 = Turn(reasoning="", action=SelectKeyframes(frame_ids=ids), raw="")

    # turn 2: keyframe-conditioned answering
    answer_prompt = build_answer_prompt(sample, turn1, keyframes, config)
    turn2, attempts2, answered = _answer_loop(answer_prompt, call, "answer", config)
    return Trajectory(
        sample_id=sample.sample_id, turn1=turn1, keyframes=keyframes, turn2=turn2,
        used_fallback=used_fallback or not answered,
        attempts_turn1=attempts1, attempts_turn2=attempts2,
        transcript_digests=tuple(digests),
    )


def _answer_loop(messages, call, stage: str, config: EngineConfig) -> tuple[Turn, int, bool]:
    attempts = 0
    last_raw = ""
    for attempt in range(config.max_attempts):
        attempts = attempt + 1
        last_raw = call(messages, stage, attempt)
        try:
            t = parse_turn(last_raw)
            if isinstance(t.action, Answer):
                return t, attempts, True
        except (MissingActionBlock, UnparsableAction):
            pass
    return Turn(reasoning="", action=Answer(text=""), raw=last_raw), attempts, False


def _direct_answer_episode(sample, backend, config, call, digests, attempts1) -> Trajectory:
    prompt = build_direct_prompt(sample, config)
    turn2, attempts2, _ = _answer_loop(prompt, call, "direct", config)
    all_ids = tuple(f.index for f in sample.frames)
    return Trajectory(
        sample_id=sample.sample_id,
        turn1=Turn(reasoning="", action=SelectKeyframes(frame_ids=all_ids), raw=""),
        keyframes=KeyframeSet(ids=all_ids),
        turn2=turn2, used_fallback=True,
        attempts_turn1=attempts1, attempts_turn2=attempts2,
        transcript_digests=tuple(digests),
    )


def trajectory_record(traj: Trajectory) -> dict:
    return {
        "sample_id": traj.sample_id,
        "turn1_raw": traj.turn1.raw,
        "keyframe_ids": list(traj.keyframes.ids),
        "dropped": [[fid, reason] for fid, reason in traj.keyframes.dropped],
        "turn2_raw": traj.turn2.raw,
        "answer": traj.turn2.action.text if isinstance(traj.turn2.action, Answer) else "",
        "used_fallback": traj.used_fallback,
        "attempts": [traj.attempts_turn1, traj.attempts_turn2],
        "digests": list(traj.transcript_digests),
    }


def read_log(path: str | Path) -> list[dict]:
    records = []
    path = Path(path)
    if not path.exists():
        return records
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def run_batch(manifest: DatasetManifest, backend: Backend, config: EngineConfig,
              log_path: str | Path) -> list[dict]:
    """Run episodes over the manifest with bounded parallelism.

    The log is resumable: already-logged sample_ids are skipped. New records
    are appended in manifest order regardless of completion order. Returns
    the full record list (prior + new) in manifest order.
    """
    log_path = Path(log_path)
    existing = {r["sample_id"]: r for r in read_log(log_path)}
    todo = [s for s in manifest.samples if s.sample_id not in existing]

    def one(sample: Sample) -> dict:
        try:
            return trajectory_record(run_episode(sample, backend, config))
        except (BackendUnavailable, BackendTimeout, ResponseEmpty) as e:
            return {"sample_id": sample.sample_id, "error": str(e)}

    new_records: list[dict] = []
    if todo:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            # pool.map preserves submission order, so the log stays in manifest order
            new_records = list(pool.map(one, todo))
        log_path.parent.mkdir(parents=True, exist_ok=True)
        with log_path.open("a", encoding="utf-8") as fh:
            for rec in new_records:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    merged = dict(existing)
    merged.update({r["sample_id"]: r for r in new_records})
    return [merged[s.sample_id] for s in manifest.samples if s.sample_id in merged]
