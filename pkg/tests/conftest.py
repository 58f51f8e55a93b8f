import json
from pathlib import Path

import pytest

from vtagent.backends import FunctionBackend, GenerationRequest, ImagePart, TextPart
from vtagent.data_model import DatasetManifest, FrameRef, Sample

# smallest valid PNG (1x1, black)
PNG_BYTES = bytes.fromhex(
    "89504e470d0a1a0a0000000d49484452000000010000000108060000001f15c489"
    "0000000d49444154789c626001000000ffff03000006000557bfabd40000000049454e44ae426082"
)


@pytest.fixture
def frame_factory(tmp_path):
    def make(video_id: str, count: int) -> list[FrameRef]:
        vdir = tmp_path / "frames" / video_id
        vdir.mkdir(parents=True, exist_ok=True)
        refs = []
        for i in range(count):
            p = vdir / f"{i:04d}.png"
            p.write_bytes(PNG_BYTES)
            refs.append(FrameRef(index=i, source_path=str(p)))
        return refs
    return make


@pytest.fixture
def sample_factory(frame_factory):
    def make(sample_id="q000", video_id=None, n_frames=4, question="what does the sign say?",
             answers=("stop",), keyframes=None, split="toy-val"):
        video_id = video_id or f"v_{sample_id}"
        return Sample(
            sample_id=sample_id,
            video_id=video_id,
            frames=tuple(frame_factory(video_id, n_frames)),
            question=question,
            gold_answers=tuple(answers),
            pseudo_keyframes=frozenset(keyframes) if keyframes is not None else None,
            split_tag=split,
        )
    return make


@pytest.fixture
def manifest_factory(sample_factory, tmp_path):
    def make(n_samples=3, n_frames=4, **kwargs):
        samples = tuple(
            sample_factory(sample_id=f"q{i:03d}", question=f"question {i}?",
                           answers=(f"answer {i}",), n_frames=n_frames, **kwargs)
            for i in range(n_samples)
        )
        return DatasetManifest(samples=samples, source_uri="memory")
    return make


def request_question(request: GenerationRequest) -> str:
    for part in request.messages[-1].parts:
        if isinstance(part, TextPart) and part.text.startswith("Question: "):
            return part.text[len("Question: "):]
    raise AssertionError("no question part in request")


def request_stage(request: GenerationRequest) -> str:
    """anchor | answer | frame, inferred from the prompt template text."""
    first = request.messages[-1].parts[0]
    assert isinstance(first, TextPart)
    if first.text.startswith("These are the keyframes"):
        images = [p for p in request.messages[-1].parts if isinstance(p, ImagePart)]
        return "frame" if len(images) == 1 and len(request.messages) == 1 else "answer"
    return "anchor" if "select key frame" in first.text else "direct"


def request_image_count(request: GenerationRequest) -> int:
    return sum(1 for m in request.messages for p in m.parts if isinstance(p, ImagePart))


@pytest.fixture
def oracle_backend_factory():
    """Backend that always emits a valid selection then the gold answer."""
    def make(manifest: DatasetManifest, select_ids=(0,)):
        golds = {s.question: s.gold_answers[0] for s in manifest.samples}

        def fn(request: GenerationRequest) -> str:
            stage = request_stage(request)
            if stage == "anchor":
                ids = ", ".join(str(i) for i in select_ids)
                return (f"<reasoning>frames {ids} look relevant</reasoning>\n"
                        f"<action>select key frame: [{ids}]</action>")
            gold = golds[request_question(request)]
            return f"<reasoning>the text is visible</reasoning>\n<action>answer: {gold}</action>"

        return FunctionBackend(fn, backend_id="oracle")
    return make


def write_manifest_file(manifest: DatasetManifest, path: Path) -> Path:
    from vtagent.data_model import write_manifest
    write_manifest(manifest, path)
    return path
