from dataclasses import dataclass
from enum import Enum
from typing import List, Mapping, Optional, Sequence

import numpy as np

from core.errors import SampleError
from core.numerics import DTYPE, Tensor, mul, sigmoid


# --- DATA STRUCTURES ---
class StreamId(str, Enum):
    QUERY_ORIGINAL = "query_original"
    QUERY_MASK = "query_mask"
    EXEMPLAR_ORIGINAL = "exemplar_original"
    EXEMPLAR_MASK = "exemplar_mask"

    @property
    def video(self) -> str:
        return self.value.split("_")[0]

    @property
    def is_mask(self) -> bool:
        return self.value.endswith("_mask")

    @property
    def code(self) -> str:
        """Two-letter key used in dataset files (qo, qm, eo, em)."""
        return self.value[0] + self.value.split("_")[1][0]

    @classmethod
    def from_code(cls, code: str) -> "StreamId":
        for stream in cls:
            if stream.code == code:
                return stream
        raise SampleError(f"Unknown stream code '{code}'")


@dataclass(frozen=True)
class FeatureStream:
    stream_id: StreamId
    values: np.ndarray  # T x D

    def __post_init__(self):
        values = np.asarray(self.values, dtype=DTYPE)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise SampleError(f"Stream {self.stream_id.value} must be a non-empty T x D matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise SampleError(f"Stream {self.stream_id.value} contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def snippets(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FusedStream:
    video: str  # "query" or "exemplar"
    values: np.ndarray  # T x D


@dataclass(frozen=True)
class StageBoundaries:
    """t1 opens the twist stage, t2 opens the entry stage: forward=[0,t1), twist=[t1,t2), entry=[t2,T)."""

    t1: int
    t2: int

    def is_valid(self, snippets: int) -> bool:
        return 0 < self.t1 < self.t2 < snippets

    def check(self, snippets: int) -> "StageBoundaries":
        if not self.is_valid(snippets):
            raise SampleError(f"Invalid stage boundaries ({self.t1}, {self.t2}) for T={snippets}; need 0 < t1 < t2 < T")
        return self

    def intervals(self, snippets: int) -> List[tuple]:
        return [(0, self.t1), (self.t1, self.t2), (self.t2, snippets)]


@dataclass(frozen=True)
class Sample:
    """One query/exemplar pair with its supervision targets."""

    sample_id: str
    streams: Mapping[StreamId, FeatureStream]
    fused: Mapping[str, FusedStream]
    boundaries: StageBoundaries
    exemplar_boundaries: StageBoundaries
    mask_targets: np.ndarray  # T x D_m of {0, 1}
    y_query: float
    y_exemplar: float
    action_type: int = 0
    confounder: float = 0.0

    @property
    def snippets(self) -> int:
        return self.streams[StreamId.QUERY_ORIGINAL].snippets

    @property
    def dim(self) -> int:
        return self.streams[StreamId.QUERY_ORIGINAL].dim


# --- OPERATIONS ---
def fuse(original: Tensor, mask: Tensor) -> Tensor:
    """Differentiable gate F = O * sigmoid(M), elementwise."""
    return mul(original, sigmoid(mask))


def sigmoid_fuse(original: FeatureStream, mask: FeatureStream) -> FusedStream:
    if original.stream_id.is_mask or not mask.stream_id.is_mask:
        raise SampleError(f"Expected an original and a mask stream, got {original.stream_id.value} and {mask.stream_id.value}")
    if original.stream_id.video != mask.stream_id.video:
        raise SampleError(f"Streams belong to different videos: {original.stream_id.value} vs {mask.stream_id.value}")
    if original.values.shape != mask.values.shape:
        raise SampleError(f"Shape mismatch between {original.values.shape} and {mask.values.shape}")
    fused = fuse(Tensor(original.values), Tensor(mask.values))
    return FusedStream(original.stream_id.video, fused.data)


def make_sample(
    streams: Mapping[StreamId, FeatureStream],
    boundaries: StageBoundaries,
    mask_targets,
    y_query: float,
    y_exemplar: float,
    sample_id: str = "0",
    exemplar_boundaries: Optional[StageBoundaries] = None,
    action_type: int = 0,
    confounder: float = 0.0,
) -> Sample:
    missing = [s.value for s in StreamId if s not in streams]
    if missing:
        raise SampleError(f"Missing stream(s): {', '.join(missing)}")

    shapes = {s: streams[s].values.shape for s in StreamId}
    first = shapes[StreamId.QUERY_ORIGINAL]
    for stream, shape in shapes.items():
        if shape[0] != first[0]:
            raise SampleError(f"Inconsistent snippet count: {stream.value} has T={shape[0]}, expected {first[0]}")
        if shape[1] != first[1]:
            raise SampleError(f"Inconsistent feature dim: {stream.value} has D={shape[1]}, expected {first[1]}")

    snippets = first[0]
    boundaries.check(snippets)
    exemplar_boundaries = (exemplar_boundaries or boundaries).check(snippets)

    targets = np.asarray(mask_targets, dtype=DTYPE)
    if targets.ndim != 2 or targets.shape[0] != snippets:
        raise SampleError(f"Mask targets must be T x D_m with T={snippets}, got shape {targets.shape}")
    if not np.all((targets == 0) | (targets == 1)):
        raise SampleError("Mask targets must be 0/1")

    fused = {
        "query": sigmoid_fuse(streams[StreamId.QUERY_ORIGINAL], streams[StreamId.QUERY_MASK]),
        "exemplar": sigmoid_fuse(streams[StreamId.EXEMPLAR_ORIGINAL], streams[StreamId.EXEMPLAR_MASK]),
    }
    return Sample(
        sample_id=str(sample_id),
        streams=dict(streams),
        fused=fused,
        boundaries=boundaries,
        exemplar_boundaries=exemplar_boundaries,
        mask_targets=targets,
        y_query=float(y_query),
        y_exemplar=float(y_exemplar),
        action_type=int(action_type),
        confounder=float(confounder),
    )


# --- BATCHING ---
@dataclass
class SampleBatch:
    """Stacked constant tensors for a list of samples (leading axis = sample)."""

    samples: List[Sample]
    query_original: Tensor
    query_mask: Tensor
    exemplar_original: Tensor
    exemplar_mask: Tensor
    mask_targets: Tensor
    y_query: np.ndarray
    y_exemplar: np.ndarray

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def snippets(self) -> int:
        return self.query_original.shape[1]


def collate(samples: Sequence[Sample]) -> SampleBatch:
    if not samples:
        raise SampleError("Cannot batch an empty list of samples")
    shape = (samples[0].snippets, samples[0].dim)
    for sample in samples:
        if (sample.snippets, sample.dim) != shape:
            raise SampleError(f"Sample {sample.sample_id} has shape {(sample.snippets, sample.dim)}, batch expects {shape}")

    def stacked(stream: StreamId) -> Tensor:
        return Tensor(np.stack([s.streams[stream].values for s in samples]))

    return SampleBatch(
        samples=list(samples),
        query_original=stacked(StreamId.QUERY_ORIGINAL),
        query_mask=stacked(StreamId.QUERY_MASK),
        exemplar_original=stacked(StreamId.EXEMPLAR_ORIGINAL),
        exemplar_mask=stacked(StreamId.EXEMPLAR_MASK),
        mask_targets=Tensor(np.stack([s.mask_targets for s in samples])),
        y_query=np.array([s.y_query for s in samples], dtype=DTYPE),
        y_exemplar=np.array([s.y_exemplar for s in samples], dtype=DTYPE),
    )
