"""Training-corpus builders.

SFT: rerun episodes with stochastic decoding until the trajectory both uses a
valid keyframe selection and produces a judged-correct answer (up to five
attempts), then freeze the canonical two-turn rendering as the target.

RL: keep only samples with mixed outcomes over repeated attempts — all-correct
and all-wrong samples carry no group-relative learning signal.

Both pipelines are resumable and idempotent: sample_ids already present in the
output file are skipped on rerun.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from .backends import Backend
from .data_model import DatasetManifest, Sample
from .engine import EngineConfig, Trajectory, run_episode
from .errors import BackendTimeout, BackendUnavailable, ResponseEmpty
from .grammar import Answer, SelectKeyframes, parse_trajectory_text, render_turn
from .metrics import anls, exact_accuracy

Judge = Callable[[str, Sequence[str]], bool]


def default_judge(pred: str, golds: Sequence[str]) -> bool:
    """Exact match or per-answer ANLS >= 0.5: keeps near-miss trajectories."""
    return exact_accuracy(pred, golds) == 1 or anls(pred, golds) >= 0.5


@dataclass(frozen=True)
class SftRecord:
    sample_id: str
    prompt: dict          # anchor prompt descriptor (template id, question, frame count)
    target: str           # canonical two-turn rendering
    teacher_id: str
    attempts: int


@dataclass(frozen=True)
class RlRecord:
    sample_id: str
    correct_count: int
    attempt_answers: tuple[str, ...]


@dataclass
class CurationStats:
    kept: int = 0
    dropped: int = 0
    skipped: int = 0  # already present in output (resume)
    failed: int = 0   # backend failures

    @property
    def total(self) -> int:
        return self.kept + self.dropped + self.skipped + self.failed

    def yield_line(self) -> str:
        denom = self.total or 1
        return f"kept {100.0 * (self.kept + self.skipped) / denom:.1f}% of inputs"


def _existing_ids(path: Optional[Path]) -> set[str]:
    if path is None or not path.exists():
        return set()
    ids = set()
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                ids.add(json.loads(line)["sample_id"])
    return ids


def _append(path: Optional[Path], obj: dict) -> None:
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def _sft_target(traj: Trajectory) -> str:
    return render_turn(traj.turn1) + "\n" + render_turn(traj.turn2)


def _check_target(target: str, golds: Sequence[str], judge: Judge) -> bool:
    # re-checked at write time: target must round-trip and its answer must pass
    turns = parse_trajectory_text(target)
    if len(turns) != 2 or not isinstance(turns[0].action, SelectKeyframes):
        return False
    if not isinstance(turns[1].action, Answer):
        return False
    return judge(turns[1].action.text, golds)


def generate_sft_corpus(manifest: DatasetManifest, teacher_backend: Backend,
                        engine_config: EngineConfig, judge: Judge = default_judge,
                        max_attempts: int = 5, out_path: str | Path | None = None,
                        teacher_id: str = "teacher") -> tuple[list[SftRecord], CurationStats]:
    """Per sample: stochastic episodes until one passes (valid selection + judged
    answer), at most max_attempts; never-passing samples are dropped."""
    out = Path(out_path) if out_path is not None else None
    done = _existing_ids(out)
    records: list[SftRecord] = []
    stats = CurationStats()
    # one-shot episodes: parse retries are curation attempts, not engine retries
    episode_config = replace(engine_config, max_attempts=1, fallback_policy="uniform")
    for sample in manifest.samples:
        if sample.sample_id in done:
            stats.skipped += 1
            continue
        accepted: Optional[SftRecord] = None
        try:
            for attempt in range(1, max_attempts + 1):
                cfg = replace(episode_config,
                              seed=None if engine_config.seed is None
                              else engine_config.seed + attempt)
                traj = run_episode(sample, teacher_backend, cfg)
                if traj.used_fallback:
                    continue  # fallback keyframes are not valid supervision
                target = _sft_target(traj)
                if not _check_target(target, sample.gold_answers, judge):
                    continue
                accepted = SftRecord(
                    sample_id=sample.sample_id,
                    prompt={"template": engine_config.anchor_template_id,
                            "question": sample.question,
                            "n_frames": len(sample.frames)},
                    target=target, teacher_id=teacher_id, attempts=attempt)
                break
        except (BackendUnavailable, BackendTimeout, ResponseEmpty):
            stats.failed += 1
            continue
        if accepted is None:
            stats.dropped += 1
            continue
        stats.kept += 1
        records.append(accepted)
        _append(out, {
            "sample_id": accepted.sample_id,
            "frames": [f.source_path for f in sample.frames],
            "question": sample.question,
            "target": accepted.target,
            "teacher": accepted.teacher_id,
            "attempts": accepted.attempts,
        })
    return records, stats


def filter_rl_corpus(manifest: DatasetManifest, model_backend: Backend,
                     engine_config: EngineConfig, judge: Judge = default_judge,
                     attempts: int = 5, out_path: str | Path | None = None,
                     ) -> tuple[list[RlRecord], CurationStats]:
    """Retain samples whose repeated outcomes are mixed: 0 < correct < attempts.

    Malformed or fallback answers count as incorrect.
    """
    out = Path(out_path) if out_path is not None else None
    done = _existing_ids(out)
    records: list[RlRecord] = []
    stats = CurationStats()
    episode_config = replace(engine_config, max_attempts=1, fallback_policy="uniform")
    for sample in manifest.samples:
        if sample.sample_id in done:
            stats.skipped += 1
            continue
        answers: list[str] = []
        correct = 0
        try:
            for attempt in range(1, attempts + 1):
                cfg = replace(episode_config,
                              seed=None if engine_config.seed is None
                              else engine_config.seed + attempt)
                traj = run_episode(sample, model_backend, cfg)
                answer = (traj.turn2.action.text
                          if isinstance(traj.turn2.action, Answer) else "")
                answers.append(answer)
                if answer and judge(answer, sample.gold_answers):
                    correct += 1
        except (BackendUnavailable, BackendTimeout, ResponseEmpty):
            stats.failed += 1
            continue
        if 0 < correct < attempts:
            rec = RlRecord(sample_id=sample.sample_id, correct_count=correct,
                           attempt_answers=tuple(answers))
            records.append(rec)
            stats.kept += 1
            _append(out, {"sample_id": rec.sample_id,
                          "correct_count": rec.correct_count,
                          "attempt_answers": list(rec.attempt_answers)})
        else:
            stats.dropped += 1
    return records, stats
