"""Learned linking graph: similarity, sparsification, fusion, assembly.

Each training epoch recomputes a ReLU-cosine similarity matrix between
question tokens and schema items, keeps only the best question token per
schema item, blends the result with the fixed probed matrix, and expands
the blend into the typed edge matrix and edge weight matrix consumed by
the graph encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .corpus import HeteroGraph, Relation
from .errors import NumericalError

ZERO_NORM_EPS = 1e-12


class SimilarityParams(nn.Module):
    """Two trainable projections feeding the cosine similarity."""

    def __init__(self, in_dim: int, sim_dim: int | None = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        sim_dim = sim_dim or in_dim
        self.w1 = nn.Parameter(torch.empty(in_dim, sim_dim, dtype=dtype))
        self.w2 = nn.Parameter(torch.empty(in_dim, sim_dim, dtype=dtype))
        nn.init.xavier_uniform_(self.w1)
        nn.init.xavier_uniform_(self.w2)


def implicit_similarity(q_vectors: torch.Tensor, s_vectors: torch.Tensor,
                        params: SimilarityParams) -> torch.Tensor:
    """ReLU of cosine between projected question and schema vectors.

    Entries lie in [0, 1].  Pairs where either projection has norm below
    ZERO_NORM_EPS are defined as 0 (no division by zero).
    """
    q = q_vectors @ params.w1
    s = s_vectors @ params.w2
    qn = torch.linalg.vector_norm(q, dim=-1, keepdim=True)
    sn = torch.linalg.vector_norm(s, dim=-1, keepdim=True)
    denom = qn * sn.T
    cos = (q @ s.T) / denom.clamp_min(ZERO_NORM_EPS)
    degenerate = (qn < ZERO_NORM_EPS) | (sn.T < ZERO_NORM_EPS)
    cos = torch.where(degenerate, torch.zeros_like(cos), cos)
    return torch.relu(cos)


def sparsify_per_schema(a: torch.Tensor) -> torch.Tensor:
    """Keep only each schema column's maximum entry (ties: lowest row).

    The selection mask is treated as a constant, so gradient flows through
    kept entries only.
    """
    if a.numel() == 0:
        return a
    best = a.argmax(dim=0)  # first occurrence wins on ties
    mask = torch.zeros_like(a)
    mask[best, torch.arange(a.shape[1], device=a.device)] = 1.0
    mask = mask * (a.detach() > 0)
    return a * mask.detach()


def fuse_graphs(a_init: torch.Tensor, a_t: torch.Tensor,
                fusion_lambda: float) -> torch.Tensor:
    """Convex blend of the probed and learned matrices.

    The probed matrix is a constant produced before training; gradient
    flows through the learned term only.
    """
    if a_init.shape != a_t.shape:
        raise NumericalError(
            f"linking matrix shapes differ: {tuple(a_init.shape)} vs "
            f"{tuple(a_t.shape)}")
    if not 0.0 <= fusion_lambda <= 1.0:
        raise ValueError("fusion lambda must be in [0, 1]")
    return fusion_lambda * a_init.detach() + (1.0 - fusion_lambda) * a_t


@dataclass
class WeightedGraph:
    """Typed edges plus per-pair weights for one example."""

    n_question: int
    n_items: int
    edge_types: torch.Tensor  # (|V|, |V|) long
    weights: torch.Tensor     # (|V|, |V|) float; 1 outside the q<->s block

    @property
    def n_nodes(self) -> int:
        return self.n_question + self.n_items


def assemble_weighted_graph(static: HeteroGraph,
                            a_tilde: torch.Tensor) -> WeightedGraph:
    """Place the fused matrix into the question<->schema block.

    Edge type becomes SEM_LINK exactly where the fused value is positive
    and NO_LINK elsewhere; the weight block holds the fused values (and
    their transpose), while all other blocks keep weight 1.
    """
    nq, ns = static.n_question, static.n_items
    if tuple(a_tilde.shape) != (nq, ns):
        raise NumericalError(
            f"fused matrix shape {tuple(a_tilde.shape)} does not match "
            f"graph blocks ({nq}, {ns})")
    edge = torch.from_numpy(static.edge_types.copy())
    linked = (a_tilde.detach() > 0)
    block = torch.where(linked, int(Relation.SEM_LINK), int(Relation.NO_LINK))
    edge[:nq, nq:] = block
    edge[nq:, :nq] = block.T

    dtype = a_tilde.dtype
    ones_q = torch.ones(nq, nq, dtype=dtype)
    ones_s = torch.ones(ns, ns, dtype=dtype)
    top = torch.cat([ones_q, a_tilde], dim=1)
    bottom = torch.cat([a_tilde.T, ones_s], dim=1)
    weights = torch.cat([top, bottom], dim=0)
    return WeightedGraph(nq, ns, edge, weights)


def linking_matrix_from_numpy(a: np.ndarray,
                              dtype: torch.dtype = torch.float32
                              ) -> torch.Tensor:
    return torch.as_tensor(a, dtype=dtype)
