"""Relational graph attention over the weighted heterogeneous graph.

Multi-head dot-product attention where both the key and the value of a
source node are offset by a learned embedding of the pair's edge type,
scaled by the pair's edge weight.  Attention is dense: every pair carries
a type (NO_LINK acts as a learned null relation), so no mask is applied.
"""

from __future__ import annotations

import torch
from torch import nn

from .corpus import NUM_RELATIONS
from .errors import NumericalError
from .graph_learner import WeightedGraph
from .probing import JointEncoding


def init_node_states(encoding: JointEncoding,
                     projection: nn.Module | None = None) -> torch.Tensor:
    """Stack question then schema vectors; project if dimensions differ."""
    x = torch.cat([encoding.question_vectors, encoding.schema_vectors], dim=0)
    if projection is not None:
        x = projection(x)
    return x


class RgatLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_mult: int = 4,
                 dropout: float = 0.0, dtype: torch.dtype = torch.float32):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        kw = {"dtype": dtype}
        self.w_q = nn.Linear(dim, dim, bias=False, **kw)
        self.w_k = nn.Linear(dim, dim, bias=False, **kw)
        self.w_v = nn.Linear(dim, dim, bias=False, **kw)
        self.w_o = nn.Linear(dim, dim, bias=False, **kw)
        self.norm = nn.LayerNorm(dim, **kw)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_mult * dim, **kw),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(ffn_mult * dim, dim, **kw),
        )
        self.dropout = nn.Dropout(dropout)
        self.layer_index = -1  # set by the encoder for error reporting

    def forward(self, x: torch.Tensor, graph: WeightedGraph,
                relation_table: nn.Embedding) -> torch.Tensor:
        n, d, h, hd = x.shape[0], self.dim, self.heads, self.head_dim
        # rel[j, i] = M_ji * embedding(type of edge j->i), split per head.
        rel = relation_table(graph.edge_types) * graph.weights.unsqueeze(-1)
        rel = rel.view(n, n, h, hd)
        q = self.w_q(x).view(n, h, hd)
        k = self.w_k(x).view(n, h, hd)
        v = self.w_v(x).view(n, h, hd)
        # scores[h, i, j]: target i attending to source j.
        scores = torch.einsum("ihd,jhd->hij", q, k)
        scores = scores + torch.einsum("ihd,jihd->hij", q, rel)
        scores = scores / (hd ** 0.5)
        finite = torch.isfinite(scores)
        if not bool(finite.all()):
            bad = int((~finite).flatten(1).any(dim=1).nonzero()[0, 0])
            raise NumericalError(
                f"non-finite attention score in layer {self.layer_index}, "
                f"head {bad}")
        alpha = torch.softmax(scores, dim=-1)
        out = torch.einsum("hij,jhd->ihd", alpha, v)
        out = out + torch.einsum("hij,jihd->ihd", alpha, rel)
        out = out.reshape(n, d)
        out = self.dropout(out)
        return self.ffn(self.norm(x + self.w_o(out)))

    def attention_weights(self, x: torch.Tensor, graph: WeightedGraph,
                          relation_table: nn.Embedding) -> torch.Tensor:
        """(heads, n, n) attention matrix, for inspection and invariants."""
        n, h, hd = x.shape[0], self.heads, self.head_dim
        rel = relation_table(graph.edge_types) * graph.weights.unsqueeze(-1)
        rel = rel.view(n, n, h, hd)
        q = self.w_q(x).view(n, h, hd)
        k = self.w_k(x).view(n, h, hd)
        scores = torch.einsum("ihd,jhd->hij", q, k)
        scores = scores + torch.einsum("ihd,jihd->hij", q, rel)
        return torch.softmax(scores / (hd ** 0.5), dim=-1)


class RgatEncoder(nn.Module):
    """Stack of relational attention layers with a shared relation table."""

    def __init__(self, dim: int, layers: int, heads: int, ffn_mult: int = 4,
                 dropout: float = 0.0, num_relations: int = NUM_RELATIONS,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.dim = dim
        self.relations = nn.Embedding(num_relations, dim, dtype=dtype)
        nn.init.normal_(self.relations.weight, std=0.02)
        self.layers = nn.ModuleList(
            RgatLayer(dim, heads, ffn_mult, dropout, dtype=dtype)
            for _ in range(layers))
        for i, layer in enumerate(self.layers):
            layer.layer_index = i

    def forward(self, x: torch.Tensor, graph: WeightedGraph) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x, graph, self.relations)
        return x

    def encode_graph(self, x0: torch.Tensor, graph: WeightedGraph
                     ) -> tuple[torch.Tensor, torch.Tensor]:
        """Apply all layers and split rows into question and schema outputs."""
        x = self.forward(x0, graph)
        return x[:graph.n_question], x[graph.n_question:]
