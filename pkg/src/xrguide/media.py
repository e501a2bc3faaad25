"""Pre-task asset acquisition: retrieval, relevance filtering, keyframes,
segmentation, and a content-addressed cache keyed to plan steps.

Everything network-ish hides behind small interfaces so the whole pipeline
runs offline: OfflineProvider reads a manifest mapping queries to local
files, MockSegmentation answers from a label->bbox table, and relevance
scoring goes through whatever gateway mode is configured.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol, Sequence

from .errors import (
    DecodeError,
    NoObjectFound,
    ProviderUnavailable,
    SegmentationUnavailable,
    XRGuideError,
)
from .gateway import Gateway
from .prompt_engine import parse_relevance_answer, render_relevance_prompt

logger = logging.getLogger(__name__)

DEFAULT_RELEVANCE_THRESHOLD = 0.5
DEFAULT_MAX_RESULTS = 8
DEFAULT_KEYFRAMES = 5


class AssetKind(str, Enum):
    IMAGE = "Image"
    VIDEO_CLIP = "VideoClip"
    KEYFRAME = "Keyframe"
    MASK = "Mask"


@dataclass(frozen=True)
class AssetRef:
    digest: str
    kind: AssetKind
    source_url: Optional[str] = None
    step_index: Optional[int] = None
    parent_digest: Optional[str] = None  # masks and keyframes point at their source

    def to_wire(self) -> dict:
        return {
            "digest": self.digest,
            "kind": self.kind.value,
            "sourceUrl": self.source_url,
            "stepIndex": self.step_index,
            "parentDigest": self.parent_digest,
        }


@dataclass(frozen=True)
class RelevanceJudgment:
    asset: AssetRef
    score: float  # -1.0 sentinel marks a failed scoring call
    reason: str


class AssetStore:
    """Content-addressed byte store; storing the same bytes twice is a no-op."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._refs: dict[str, AssetRef] = {}

    @staticmethod
    def digest_of(data: bytes) -> str:
        return hashlib.sha256(data).hexdigest()

    def put(
        self,
        data: bytes,
        kind: AssetKind,
        source_url: Optional[str] = None,
        step_index: Optional[int] = None,
        parent_digest: Optional[str] = None,
    ) -> AssetRef:
        digest = self.digest_of(data)
        path = self.root / digest
        with self._lock:
            if not path.exists():
                path.write_bytes(data)
            ref = AssetRef(
                digest=digest,
                kind=kind,
                source_url=source_url,
                step_index=step_index,
                parent_digest=parent_digest,
            )
            self._refs.setdefault(digest, ref)
            return self._refs[digest]

    def get(self, digest: str) -> bytes:
        path = self.root / digest
        if not path.exists():
            raise KeyError(f"no asset with digest {digest}")
        return path.read_bytes()

    def has(self, digest: str) -> bool:
        return (self.root / digest).exists()


# -------------------------------------------------------------------------
# Retrieval
# -------------------------------------------------------------------------


class RetrievalProvider(Protocol):
    def search(self, query: str) -> list[tuple[bytes, str]]:
        """Return (bytes, source_url) hits for a query, best first."""
        ...


class OfflineProvider:
    """Fixture-backed provider: a JSON manifest maps query -> local files.

    Manifest format: {"queries": {"<query>": ["relative/file.png", ...]},
    "default": ["fallback.png", ...]}. Paths resolve against the manifest's
    directory.
    """

    def __init__(self, manifest_path: str | Path):
        self.manifest_path = Path(manifest_path)
        if not self.manifest_path.exists():
            raise ProviderUnavailable(f"manifest {manifest_path} not found")
        with open(self.manifest_path, encoding="utf-8") as fh:
            self.manifest = json.load(fh)
        self.base = self.manifest_path.parent

    def search(self, query: str) -> list[tuple[bytes, str]]:
        names = self.manifest.get("queries", {}).get(query)
        if names is None:
            names = self.manifest.get("default", [])
        hits = []
        for name in names:
            path = self.base / name
            if path.exists():
                hits.append((path.read_bytes(), f"file://{path}"))
        return hits


def build_queries(goal: str, steps: Sequence[str]) -> list[str]:
    """One goal-level query plus one per step; deterministic construction."""
    queries = [goal.strip()]
    for step in steps:
        queries.append(f"{step.strip()} - {goal.strip()}")
    return queries


def retrieve(
    query: str,
    provider: RetrievalProvider,
    store: AssetStore,
    kind: AssetKind = AssetKind.IMAGE,
    step_index: Optional[int] = None,
    max_results: int = DEFAULT_MAX_RESULTS,
) -> list[AssetRef]:
    """Fetch up to max_results assets for the query into the cache.

    Duplicate bytes collapse to one AssetRef. Provider failure raises
    ProviderUnavailable; an empty result set is non-fatal and just logged.
    """
    try:
        hits = provider.search(query)
    except XRGuideError:
        raise
    except Exception as exc:
        raise ProviderUnavailable(f"provider failed for {query!r}: {exc}") from exc
    refs: list[AssetRef] = []
    seen: set[str] = set()
    for data, url in hits:
        digest = AssetStore.digest_of(data)
        if digest in seen:
            continue
        seen.add(digest)
        hit_kind = AssetKind.VIDEO_CLIP if url.endswith(".clip.json") else kind
        refs.append(store.put(data, hit_kind, source_url=url, step_index=step_index))
        if len(refs) >= max_results:
            break
    if not refs:
        logger.warning("no retrieval results for query %r", query)
    return refs


def filter_relevance(
    assets: Sequence[AssetRef],
    step: str,
    gateway: Gateway,
    threshold: float = DEFAULT_RELEVANCE_THRESHOLD,
) -> tuple[list[AssetRef], list[RelevanceJudgment]]:
    """Keep assets scoring >= threshold, ranked by score desc, digest asc.

    A failed scoring call drops the asset with a -1 sentinel judgment rather
    than aborting the step.
    """
    judgments: list[RelevanceJudgment] = []
    for asset in assets:
        prompt = render_relevance_prompt(step, asset.digest)
        try:
            response, _ = gateway.call(prompt)
            answer = parse_relevance_answer(response)
            judgments.append(RelevanceJudgment(asset, answer.score, answer.reason))
        except XRGuideError as exc:
            logger.warning("relevance scoring failed for %s: %s", asset.digest[:12], exc)
            judgments.append(RelevanceJudgment(asset, -1.0, f"scoring failed: {exc}"))
    kept = [j for j in judgments if j.score >= threshold]
    kept.sort(key=lambda j: (-j.score, j.asset.digest))
    return [j.asset for j in kept], judgments


# -------------------------------------------------------------------------
# Keyframes
# -------------------------------------------------------------------------


class VideoDecoder(Protocol):
    def duration(self, data: bytes) -> float: ...

    def frame_at(self, data: bytes, t: float) -> bytes: ...


class ManifestVideoDecoder:
    """Offline decoder for fixture 'videos': a JSON clip listing its frames.

    Clip format: {"duration": 10.0, "frames": [{"t": 0.0, "file": "f0.png"}]};
    frame_at returns the frame whose timestamp is closest to the request.
    """

    def __init__(self, base: str | Path):
        self.base = Path(base)

    def _clip(self, data: bytes) -> dict:
        try:
            clip = json.loads(data.decode("utf-8"))
            assert isinstance(clip.get("duration"), (int, float))
            assert isinstance(clip.get("frames"), list) and clip["frames"]
            return clip
        except (ValueError, AssertionError, UnicodeDecodeError) as exc:
            raise DecodeError(f"unreadable clip fixture: {exc}") from exc

    def duration(self, data: bytes) -> float:
        return float(self._clip(data)["duration"])

    def frame_at(self, data: bytes, t: float) -> bytes:
        clip = self._clip(data)
        best = min(clip["frames"], key=lambda f: abs(float(f["t"]) - t))
        path = self.base / best["file"]
        if not path.exists():
            raise DecodeError(f"clip frame file missing: {best['file']}")
        return path.read_bytes()


def keyframe_times(duration: float, n: int) -> list[float]:
    """Uniform timestamps: first at 0, last at duration; n=1 takes the midpoint."""
    if n <= 0:
        return []
    if n == 1:
        return [duration / 2.0]
    return [duration * i / (n - 1) for i in range(n)]


def extract_keyframes(
    video: AssetRef,
    store: AssetStore,
    decoder: VideoDecoder,
    n: int = DEFAULT_KEYFRAMES,
) -> list[AssetRef]:
    data = store.get(video.digest)
    duration = decoder.duration(data)
    refs = []
    seen: set[str] = set()
    for t in keyframe_times(duration, n):
        frame_bytes = decoder.frame_at(data, t)
        ref = store.put(
            frame_bytes,
            AssetKind.KEYFRAME,
            source_url=video.source_url,
            step_index=video.step_index,
            parent_digest=video.digest,
        )
        # coarse clips can repeat a frame across sample times; keep one
        if ref.digest not in seen:
            seen.add(ref.digest)
            refs.append(ref)
    return refs


# -------------------------------------------------------------------------
# Segmentation
# -------------------------------------------------------------------------

Polygon = list[tuple[int, int]]  # vertices in normalized [0, 1000] coords


class SegmentationBackend(Protocol):
    def segment(self, image: bytes, label: str) -> list[Polygon]: ...


class MockSegmentation:
    """Offline stand-in: answers from a label -> normalized bbox table."""

    def __init__(self, boxes: dict[str, tuple[int, int, int, int]]):
        self.boxes = boxes

    def segment(self, image: bytes, label: str) -> list[Polygon]:
        key = label.strip().lower()
        if key not in self.boxes:
            raise NoObjectFound(label)
        x0, y0, x1, y1 = self.boxes[key]
        return [[(x0, y0), (x1, y0), (x1, y1), (x0, y1)]]


class HttpSegmentation:
    """Client for the segmentation service: POST {imageB64, label} -> {polygons}."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def segment(self, image: bytes, label: str) -> list[Polygon]:
        import base64
        import urllib.request

        body = json.dumps(
            {"imageB64": base64.b64encode(image).decode("ascii"), "label": label}
        ).encode()
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except OSError as exc:
            raise SegmentationUnavailable(str(exc)) from exc
        if "polygons" not in payload or not payload["polygons"]:
            raise NoObjectFound(label)
        return [[(int(x), int(y)) for x, y in poly] for poly in payload["polygons"]]


def segment(
    image: AssetRef, label: str, client: SegmentationBackend, store: AssetStore
) -> AssetRef:
    """Segment a label in an image; the mask is cached as a polygon-list asset."""
    polygons = client.segment(store.get(image.digest), label)
    for poly in polygons:
        for (x, y) in poly:
            if not (0 <= x <= 1000 and 0 <= y <= 1000):
                raise SegmentationUnavailable(f"backend returned out-of-range vertex ({x},{y})")
    mask_doc = json.dumps(
        {"label": label, "parent": image.digest, "polygons": [[list(v) for v in p] for p in polygons]},
        sort_keys=True,
    ).encode()
    return store.put(
        mask_doc,
        AssetKind.MASK,
        source_url=image.source_url,
        step_index=image.step_index,
        parent_digest=image.digest,
    )


def load_mask(store: AssetStore, mask: AssetRef) -> dict:
    return json.loads(store.get(mask.digest).decode("utf-8"))


# -------------------------------------------------------------------------
# Step-level pre-fetch
# -------------------------------------------------------------------------


@dataclass
class StepAssets:
    images: list[AssetRef] = field(default_factory=list)
    judgments: list[RelevanceJudgment] = field(default_factory=list)
    mask: Optional[AssetRef] = None


@dataclass
class MediaPipeline:
    store: AssetStore
    provider: RetrievalProvider
    gateway: Gateway
    segmentation: Optional[SegmentationBackend] = None
    decoder: Optional[VideoDecoder] = None
    threshold: float = DEFAULT_RELEVANCE_THRESHOLD
    max_results: int = DEFAULT_MAX_RESULTS
    keyframes: int = DEFAULT_KEYFRAMES

    def goal_references(self, goal: str) -> list[AssetRef]:
        try:
            return retrieve(goal, self.provider, self.store, max_results=self.max_results)
        except ProviderUnavailable as exc:
            logger.warning("goal retrieval unavailable, planning imageless: %s", exc)
            return []

    def prefetch_step(
        self, step_index: int, instruction: str, goal: str, mask_label: Optional[str] = None
    ) -> StepAssets:
        """Retrieve, filter, and (when requested) segment assets for one step.

        Keyframe extraction kicks in when filtering leaves a step imageless
        and a video clip plus decoder are available.
        """
        out = StepAssets()
        query = build_queries(goal, [instruction])[1]
        try:
            candidates = retrieve(
                query,
                self.provider,
                self.store,
                step_index=step_index,
                max_results=self.max_results,
            )
        except ProviderUnavailable as exc:
            logger.warning("step %d retrieval unavailable: %s", step_index, exc)
            candidates = []
        images = [a for a in candidates if a.kind is AssetKind.IMAGE]
        videos = [a for a in candidates if a.kind is AssetKind.VIDEO_CLIP]
        kept, judgments = filter_relevance(images, instruction, self.gateway, self.threshold)
        out.judgments = judgments
        if not kept and videos and self.decoder is not None:
            frames = extract_keyframes(videos[0], self.store, self.decoder, self.keyframes)
            kept, more = filter_relevance(frames, instruction, self.gateway, self.threshold)
            out.judgments += more
        out.images = kept
        if mask_label and self.segmentation is not None and kept:
            try:
                out.mask = segment(kept[0], mask_label, self.segmentation, self.store)
            except (NoObjectFound, SegmentationUnavailable) as exc:
                logger.warning("segmentation skipped for step %d: %s", step_index, exc)
        return out
