"""Full parser model: contextual encoding, linking, graph attention, decoding.

One `forward_graph` call runs the per-example pipeline: joint contextual
encoding, implicit similarity + sparsification, fusion with the cached
probed matrix, weighted-graph assembly, and relational attention; the
decoder then consumes the question and schema outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from .config import RunConfig
from .contextual import MiniTextEncoder
from .corpus import (DatabaseSchema, Example, HeteroGraph,
                     build_static_edges, exact_match_linking)
from .decoder import AstDecoder
from .errors import DecodeTruncatedError
from .grammar import Action, AstNode, ast_to_actions
from .graph_learner import (SimilarityParams, WeightedGraph,
                            assemble_weighted_graph, fuse_graphs,
                            implicit_similarity, sparsify_per_schema)
from .probing import JointEncoding, encode_joint
from .rgat import RgatEncoder, init_node_states


@dataclass
class ExampleContext:
    """Everything static the pipeline needs for one example."""

    example: Example
    schema: DatabaseSchema
    static: HeteroGraph
    a_init: np.ndarray
    exact_match: np.ndarray
    gold_actions: list[Action]

    @property
    def example_id(self) -> str:
        return self.example.example_id


def build_context(example: Example, schema: DatabaseSchema,
                  a_init: np.ndarray | None = None) -> ExampleContext:
    if a_init is None:
        a_init = np.zeros((example.n_tokens, schema.n_items))
    return ExampleContext(
        example=example,
        schema=schema,
        static=build_static_edges(example, schema),
        a_init=a_init,
        exact_match=exact_match_linking(example, schema),
        gold_actions=ast_to_actions(example.gold_ast),
    )


@dataclass
class PipelineOutput:
    encoding: JointEncoding
    a_t_raw: torch.Tensor | None   # pre-sparsification similarity
    a_t: torch.Tensor | None       # post-sparsification (feeds the aux loss)
    a_tilde: torch.Tensor          # fused linking matrix
    graph: WeightedGraph
    q_enc: torch.Tensor
    s_enc: torch.Tensor


LinkingOverride = Callable[[torch.Tensor], torch.Tensor]


class TextToSqlModel(nn.Module):
    def __init__(self, cfg: RunConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        self.dtype = dtype
        self.encoder = MiniTextEncoder(
            dim=cfg.encoder_dim, layers=cfg.encoder_layers,
            seed=cfg.encoder_seed, dtype=dtype)
        if cfg.freeze_encoder:
            for p in self.encoder.parameters():
                p.requires_grad_(False)
        self.input_proj = nn.Linear(cfg.encoder_dim, cfg.graph_dim, dtype=dtype)
        self.similarity = SimilarityParams(
            cfg.encoder_dim, cfg.sim_dim or cfg.encoder_dim, dtype=dtype)
        self.rgat = RgatEncoder(
            cfg.graph_dim, cfg.rgat_layers, cfg.rgat_heads,
            ffn_mult=cfg.ffn_mult, dropout=cfg.dropout, dtype=dtype)
        self.decoder = AstDecoder(
            enc_dim=cfg.graph_dim, hidden=cfg.decoder_hidden,
            action_dim=cfg.action_dim, type_dim=cfg.type_dim,
            dropout=cfg.dropout, dtype=dtype)

    def forward_graph(self, ctx: ExampleContext,
                      linking_override: LinkingOverride | None = None
                      ) -> PipelineOutput:
        cfg = self.cfg
        encoding = encode_joint(self.encoder, ctx.example, ctx.schema,
                                grad=not cfg.freeze_encoder)
        nq, ns = ctx.example.n_tokens, ctx.schema.n_items
        a_t_raw = a_t = None
        if cfg.ablation == "no_linking":
            a_tilde = torch.zeros(nq, ns, dtype=self.dtype)
        elif cfg.ablation == "exact_match":
            a_tilde = torch.as_tensor(ctx.exact_match, dtype=self.dtype)
        else:
            a_t_raw = implicit_similarity(
                encoding.question_vectors, encoding.schema_vectors,
                self.similarity)
            a_t = sparsify_per_schema(a_t_raw)
            a_init = torch.as_tensor(ctx.a_init, dtype=self.dtype)
            a_tilde = fuse_graphs(a_init, a_t, cfg.effective_lambda)
        if linking_override is not None:
            a_tilde = linking_override(a_tilde)
        graph = assemble_weighted_graph(ctx.static, a_tilde)
        x0 = init_node_states(encoding, self.input_proj)
        q_enc, s_enc = self.rgat.encode_graph(x0, graph)
        return PipelineOutput(encoding, a_t_raw, a_t, a_tilde, graph,
                              q_enc, s_enc)

    def sql_nll(self, ctx: ExampleContext, out: PipelineOutput) -> torch.Tensor:
        return self.decoder.teacher_forced_nll(
            ctx.gold_actions, out.q_enc, out.s_enc, ctx.schema.n_tables)

    def predict(self, ctx: ExampleContext,
                linking_override: LinkingOverride | None = None,
                beam: int | None = None) -> AstNode | None:
        """Decode one example; None when the action cap truncates decoding."""
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                out = self.forward_graph(ctx, linking_override)
                try:
                    return self.decoder.decode(
                        out.q_enc, out.s_enc, ctx.schema.n_tables,
                        beam=beam or self.cfg.beam,
                        max_actions=self.cfg.max_actions)
                except DecodeTruncatedError:
                    return None
        finally:
            self.train(was_training)


def build_model(cfg: RunConfig, dtype: torch.dtype = torch.float32
                ) -> TextToSqlModel:
    torch.manual_seed(cfg.seed)
    return TextToSqlModel(cfg, dtype=dtype)
