"""Initial linking-graph construction by masked-token probing.

One question token is masked at a time; the Euclidean displacement of each
schema item's pooled vector between the base and masked encodings scores
how much that token matters to that item.  Scores are (optionally)
max-normalized per example and thresholded to produce the initial linking
matrix, which is computed once per example before training and cached.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .contextual import MASK_TOKEN
from .corpus import DatabaseSchema, Example
from .errors import CapacityError, NumericalError


@dataclass(frozen=True)
class ProbeConfig:
    tau: float = 0.7
    mask_token: str = MASK_TOKEN
    normalize: bool = True  # per-example max-normalization before thresholding

    def __post_init__(self):
        if self.normalize and not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1] when normalization is on")

    def cache_key(self, encoder_name: str) -> str:
        return f"{encoder_name}_tau{self.tau:g}_norm{int(self.normalize)}"


@dataclass
class JointEncoding:
    """Per-node vectors from one pass of the contextual encoder."""

    question_vectors: torch.Tensor  # (|Q|, dim)
    schema_vectors: torch.Tensor    # (|T|+|C|, dim) tables first
    masked_position: int | None = None


def assemble_joint_tokens(example: Example, schema: DatabaseSchema
                          ) -> tuple[list[str], list[list[int]]]:
    """Concatenated token sequence and per-node position spans.

    Layout: question tokens, [sep], each table as [tab] + name words, each
    column as a typed separator + name words.  Node order matches the
    graph: question, tables, columns.
    """
    tokens = list(example.question_tokens)
    spans: list[list[int]] = [[i] for i in range(len(tokens))]
    tokens.append("[sep]")
    for table in schema.tables:
        tokens.append("[tab]")
        spans.append(list(range(len(tokens), len(tokens) + len(table.tokens))))
        tokens.extend(table.tokens)
    for col in schema.columns:
        tokens.append(f"[col:{col.logical_type}]")
        spans.append(list(range(len(tokens), len(tokens) + len(col.tokens))))
        tokens.extend(col.tokens)
    return tokens, spans


def encode_joint(encoder, example: Example, schema: DatabaseSchema,
                 mask_position: int | None = None,
                 grad: bool = False) -> JointEncoding:
    """Encode question + schema jointly; pool each node over its positions.

    Probing always runs without gradients; the training loop passes
    grad=True when the encoder is being fine-tuned.
    """
    if mask_position is not None and not 0 <= mask_position < example.n_tokens:
        raise ValueError(f"mask position {mask_position} outside the question")
    tokens, spans = assemble_joint_tokens(example, schema)
    if len(tokens) > encoder.max_len:
        raise CapacityError(
            f"example {example.example_id}: joint sequence of {len(tokens)} "
            f"tokens exceeds encoder limit {encoder.max_len}")
    if grad:
        states = encoder.encode(tokens, mask_position=mask_position)
    else:
        with torch.no_grad():
            states = encoder.encode(tokens, mask_position=mask_position)
    pooled = torch.stack([states[span].mean(dim=0) for span in spans])
    nq = example.n_tokens
    return JointEncoding(pooled[:nq], pooled[nq:], mask_position)


def impact_score(base: JointEncoding, perturbed: JointEncoding,
                 i: int, j: int) -> float:
    """Euclidean displacement of schema item j after masking token i."""
    if perturbed.masked_position != i:
        raise ValueError(
            f"perturbed encoding was masked at {perturbed.masked_position}, "
            f"not {i}")
    a = base.schema_vectors[j]
    b = perturbed.schema_vectors[j]
    if a.shape != b.shape:
        raise NumericalError("schema vector dimension mismatch")
    return float(torch.linalg.vector_norm(a - b))


@dataclass
class ProbeResult:
    a_init: np.ndarray      # (|Q|, |S|) thresholded, nonnegative
    raw_scores: np.ndarray  # (|Q|, |S|) unnormalized displacements
    no_signal: bool = False  # all-zero score matrix (no linking prior)


def probe_initial_graph(encoder, example: Example, schema: DatabaseSchema,
                        cfg: ProbeConfig = ProbeConfig()) -> ProbeResult:
    """Mask each question token once and threshold the displacement matrix.

    Exactly |Q| + 1 encoder passes: one base pass plus one per token.
    """
    base = encode_joint(encoder, example, schema)
    nq, ns = example.n_tokens, schema.n_items
    raw = np.zeros((nq, ns), dtype=np.float64)
    for i in range(nq):
        perturbed = encode_joint(encoder, example, schema, mask_position=i)
        diff = base.schema_vectors - perturbed.schema_vectors
        raw[i] = torch.linalg.vector_norm(diff, dim=-1).double().numpy()
    top = raw.max()
    if top <= 0.0:
        warnings.warn(
            f"example {example.example_id}: probing produced an all-zero "
            f"score matrix; no linking prior")
        return ProbeResult(np.zeros_like(raw), raw, no_signal=True)
    scores = raw / top if cfg.normalize else raw.copy()
    a_init = np.where(scores >= cfg.tau, scores, 0.0)
    return ProbeResult(a_init, raw)


class ProbeCache:
    """One .npz per example id under a directory keyed by probe settings."""

    def __init__(self, root: str | Path, encoder_name: str, cfg: ProbeConfig):
        self.dir = Path(root) / f"probe_{cfg.cache_key(encoder_name)}"
        self.cfg = cfg

    def path(self, example_id: str) -> Path:
        return self.dir / f"{example_id}.npz"

    def load(self, example: Example) -> ProbeResult | None:
        p = self.path(example.example_id)
        if not p.exists():
            return None
        try:
            with np.load(p) as data:
                shape = tuple(data["shape"])
                a_init = data["a_init"]
                raw = data["raw_scores"]
                no_signal = bool(data["no_signal"])
            if a_init.shape != shape or raw.shape != shape:
                raise ValueError("shape header mismatch")
        except Exception:
            warnings.warn(f"corrupt probe cache entry {p}; re-probing")
            return None
        return ProbeResult(a_init, raw, no_signal)

    def store(self, example: Example, result: ProbeResult) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.path(example.example_id)
        np.savez(p, shape=np.array(result.a_init.shape),
                 a_init=result.a_init, raw_scores=result.raw_scores,
                 no_signal=np.array(result.no_signal))
        return p

    def get_or_probe(self, encoder, example: Example,
                     schema: DatabaseSchema) -> ProbeResult:
        cached = self.load(example)
        if cached is not None:
            return cached
        result = probe_initial_graph(encoder, example, schema, self.cfg)
        self.store(example, result)
        return result
