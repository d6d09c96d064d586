import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from core.config import GenConfig
from core.errors import DatasetParseError, FineCausalError
from core.streams_fusion import FeatureStream, Sample, StageBoundaries, StreamId, make_sample

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
SCRIPT_DIR = os.path.dirname(os.path.abspath(__file__))
PROJECT_ROOT = os.path.dirname(SCRIPT_DIR)
OUTPUT_DIR = os.path.join(PROJECT_ROOT, 'data', 'synthetic')

DATASET_FORMAT = "finecausal-dataset"
DATASET_VERSION = 1

# Latent snippet code: stage one-hot (3), transition pulses at t1 and t2, stage quality, bias
LATENT_DIM = 7
QUALITY_ROW = 5
MASK_ON, MASK_OFF = 2.0, -2.0


# --- DATA STRUCTURES ---
class World:
	"""Per-seed constants shared by both splits: mixing matrices, background directions, mask projection."""

	def __init__(self, cfg: GenConfig):
		rng = np.random.default_rng([cfg.seed, 0])
		fg, bg = cfg.foreground_dim, cfg.feature_dim - cfg.foreground_dim
		quality = _unit(rng.standard_normal(fg))
		self.mixing: List[np.ndarray] = []
		for _ in range(cfg.n_action_types):
			if fg >= LATENT_DIM:
				# Remaining rows orthonormal and orthogonal to the quality direction
				raw = rng.standard_normal((fg, LATENT_DIM - 1))
				raw -= np.outer(quality, quality @ raw)
				q, _ = np.linalg.qr(raw)
				mixing = np.insert(q.T, QUALITY_ROW, quality, axis=0)
			else:
				mixing = rng.standard_normal((LATENT_DIM, fg)) / np.sqrt(fg)
				mixing[QUALITY_ROW] = quality
			self.mixing.append(mixing)
		self.confounder_dir = _unit(rng.standard_normal(bg))
		self.environment_dir = _unit(rng.standard_normal(bg))
		self.mask_projection = rng.standard_normal((fg, cfg.mask_dim))


# HELPER -> Normalizes a vector to unit length.
def _unit(v: np.ndarray) -> np.ndarray:
	return v / np.linalg.norm(v)


# HELPER -> Draws valid boundaries around the even three-way split.
def draw_boundaries(rng: np.random.Generator, snippets: int, jitter: int) -> StageBoundaries:
	t1 = int(round(snippets / 3)) + int(rng.integers(-jitter, jitter + 1))
	t2 = int(round(2 * snippets / 3)) + int(rng.integers(-jitter, jitter + 1))
	t1 = min(max(t1, 1), snippets - 2)
	t2 = min(max(t2, t1 + 1), snippets - 1)
	return StageBoundaries(t1, t2)


def latent_code(qualities: np.ndarray, bounds: StageBoundaries, snippets: int) -> np.ndarray:
	z = np.zeros((snippets, LATENT_DIM))
	for stage, (start, stop) in enumerate(bounds.intervals(snippets)):
		z[start:stop, stage] = 1.0
		z[start:stop, QUALITY_ROW] = 2.0 * qualities[stage]
	z[bounds.t1, 3] = 1.0
	z[bounds.t2, 4] = 1.0
	z[:, 6] = 1.0
	return z


def score_from_qualities(cfg: GenConfig, qualities: np.ndarray) -> float:
	weights = np.asarray(cfg.stage_score_weights) / np.sum(cfg.stage_score_weights)
	return float(cfg.score_min + (cfg.score_max - cfg.score_min) * np.dot(weights, qualities))


def confounder_values(rng: np.random.Generator, scores: np.ndarray, strength: float) -> np.ndarray:
	"""
	b = c * z(y) + sqrt(1 - c^2) * e, with e centred, unit-variance and orthogonal to z(y),
	so the sample correlation of b with the scores is exactly c.
	"""
	noise = rng.standard_normal(scores.shape[0])
	if scores.shape[0] < 3 or np.std(scores) == 0:
		return noise
	z = (scores - scores.mean()) / scores.std()
	noise = noise - noise.mean()
	noise = noise - (noise @ z) / (z @ z) * z
	noise = noise / noise.std()
	return strength * z + np.sqrt(1.0 - strength ** 2) * noise


def _video_streams(
	cfg: GenConfig, world: World, rng: np.random.Generator, action_type: int,
	qualities: np.ndarray, bounds: StageBoundaries, confounder: float, environment: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
	T, fg = cfg.snippets, cfg.foreground_dim
	bg = cfg.feature_dim - fg
	clean = latent_code(qualities, bounds, T) @ world.mixing[action_type]
	background = confounder * world.confounder_dir + environment * world.environment_dir
	original = np.concatenate([
		clean + cfg.noise_std * rng.standard_normal((T, fg)),
		np.broadcast_to(background, (T, bg)) + cfg.noise_std * rng.standard_normal((T, bg)),
	], axis=1)
	mask = np.concatenate([
		0.5 * clean + MASK_ON + cfg.noise_std * rng.standard_normal((T, fg)),
		MASK_OFF + cfg.noise_std * rng.standard_normal((T, bg)),
	], axis=1)
	return original, mask, clean


def generate_split(cfg: GenConfig, world: World, rng: np.random.Generator, n: int, strength: float, prefix: str) -> List[Sample]:
	if n == 0:
		return []
	action_types = rng.integers(0, cfg.n_action_types, size=n)
	q_query = rng.uniform(0.0, 1.0, size=(n, 3))
	q_exemplar = rng.uniform(0.0, 1.0, size=(n, 3))
	bounds_query = [draw_boundaries(rng, cfg.snippets, cfg.boundary_jitter) for _ in range(n)]
	bounds_exemplar = [draw_boundaries(rng, cfg.snippets, cfg.boundary_jitter) for _ in range(n)]
	y_query = np.array([score_from_qualities(cfg, q) for q in q_query])
	y_exemplar = np.array([score_from_qualities(cfg, q) for q in q_exemplar])
	# Each video draws its own confounder value; the environment term is shared by the pair
	b_query = confounder_values(rng, y_query, strength)
	b_exemplar = confounder_values(rng, y_exemplar, strength)
	environment = rng.standard_normal(n)

	samples: List[Sample] = []
	for i in range(n):
		a = int(action_types[i])
		qo, qm, clean = _video_streams(cfg, world, rng, a, q_query[i], bounds_query[i], b_query[i], environment[i])
		eo, em, _ = _video_streams(cfg, world, rng, a, q_exemplar[i], bounds_exemplar[i], b_exemplar[i], environment[i])
		streams = {
			StreamId.QUERY_ORIGINAL: FeatureStream(StreamId.QUERY_ORIGINAL, qo),
			StreamId.QUERY_MASK: FeatureStream(StreamId.QUERY_MASK, qm),
			StreamId.EXEMPLAR_ORIGINAL: FeatureStream(StreamId.EXEMPLAR_ORIGINAL, eo),
			StreamId.EXEMPLAR_MASK: FeatureStream(StreamId.EXEMPLAR_MASK, em),
		}
		samples.append(make_sample(
			streams,
			bounds_query[i],
			(clean @ world.mask_projection > 0).astype(float),
			y_query[i],
			y_exemplar[i],
			sample_id=f"{prefix}-{i:05d}",
			exemplar_boundaries=bounds_exemplar[i],
			action_type=a,
			confounder=b_query[i],
		))
	return samples


def generate(cfg: GenConfig) -> Tuple[List[Sample], List[Sample]]:
	"""
	Builds the train and test splits. The background confounder correlates with the
	score at strength ``c_train`` in train and ``c_test`` in test; foreground channels
	alone determine the score.
	"""
	world = World(cfg)
	train = generate_split(cfg, world, np.random.default_rng([cfg.seed, 1]), cfg.n_train, cfg.c_train, "train")
	test = generate_split(cfg, world, np.random.default_rng([cfg.seed, 2]), cfg.n_test, cfg.c_test, "test")
	for name, split in (("train", train), ("test", test)):
		if len(split) >= 3:
			logger.info("%s: %d samples, corr(confounder, y)=%.3f", name, len(split), confounder_correlation(split))
		else:
			logger.info("%s: %d samples", name, len(split))
	return train, test


def confounder_correlation(samples: Sequence[Sample]) -> float:
	b = np.array([s.confounder for s in samples])
	y = np.array([s.y_query for s in samples])
	if len(samples) < 2 or b.std() == 0 or y.std() == 0:
		raise FineCausalError("Confounder correlation needs at least two samples with varying values")
	return float(np.corrcoef(b, y)[0, 1])


# --- DATASET FILES ---
def _matrix(values: np.ndarray) -> Dict[str, list]:
	return {"shape": list(values.shape), "data": values.reshape(-1).tolist()}


def _bounds(b: StageBoundaries) -> Dict[str, int]:
	return {"t1": b.t1, "t2": b.t2}


def sample_to_record(sample: Sample) -> dict:
	return {
		"id": sample.sample_id,
		"action_type": sample.action_type,
		"streams": {stream.code: _matrix(sample.streams[stream].values) for stream in StreamId},
		"boundaries": _bounds(sample.boundaries),
		"exemplar_boundaries": _bounds(sample.exemplar_boundaries),
		"mask_targets": _matrix(sample.mask_targets),
		"y_query": sample.y_query,
		"y_exemplar": sample.y_exemplar,
		"confounder": sample.confounder,
	}


def sample_from_record(record: dict) -> Sample:
	def matrix(entry: dict) -> np.ndarray:
		return np.asarray(entry["data"], dtype=float).reshape(entry["shape"])

	streams = {}
	for code, entry in record["streams"].items():
		stream = StreamId.from_code(code)
		streams[stream] = FeatureStream(stream, matrix(entry))
	return make_sample(
		streams,
		StageBoundaries(**record["boundaries"]),
		matrix(record["mask_targets"]),
		record["y_query"],
		record["y_exemplar"],
		sample_id=record["id"],
		exemplar_boundaries=StageBoundaries(**record.get("exemplar_boundaries", record["boundaries"])),
		action_type=record.get("action_type", 0),
		confounder=record.get("confounder", 0.0),
	)


def write_dataset(samples: Sequence[Sample], path: Union[str, Path]) -> Path:
	"""JSON lines: one header object, then one object per sample. Floats keep full precision."""
	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	with path.open("w", encoding="utf-8") as handle:
		handle.write(json.dumps({"format": DATASET_FORMAT, "version": DATASET_VERSION}) + "\n")
		for sample in samples:
			handle.write(json.dumps(sample_to_record(sample)) + "\n")
	return path


def read_dataset(path: Union[str, Path]) -> List[Sample]:
	samples: List[Sample] = []
	with Path(path).open(encoding="utf-8") as handle:
		header_seen = False
		for line_number, line in enumerate(handle, start=1):
			try:
				record = json.loads(line)
			except json.JSONDecodeError as exc:
				raise DatasetParseError(f"invalid JSON ({exc.msg})", line_number) from exc
			if not header_seen:
				if not isinstance(record, dict) or record.get("format") != DATASET_FORMAT:
					raise DatasetParseError("missing dataset header", line_number)
				if record.get("version") != DATASET_VERSION:
					raise DatasetParseError(f"unsupported dataset version {record.get('version')!r}", line_number)
				header_seen = True
				continue
			try:
				samples.append(sample_from_record(record))
			except (KeyError, TypeError, ValueError, FineCausalError) as exc:
				raise DatasetParseError(f"bad sample record ({exc})", line_number) from exc
	if not header_seen:
		raise DatasetParseError("missing dataset header", 1)
	return samples


if __name__ == "__main__":
	logging.basicConfig(level=logging.INFO)
	config = GenConfig()
	train_set, test_set = generate(config)
	print(f"Writing {len(train_set)} train / {len(test_set)} test samples to {OUTPUT_DIR}...")
	write_dataset(train_set, os.path.join(OUTPUT_DIR, 'train.jsonl'))
	write_dataset(test_set, os.path.join(OUTPUT_DIR, 'test.jsonl'))
	print("--- DONE ---")
