"""Grammar-constrained autoregressive tree decoder.

An LSTM cell consumes [previous action; parent action; parent hidden;
frontier type] each step.  Rule logits are masked to productions legal for
the frontier nonterminal; table/column choices score the LSTM state
against encoded schema items with bilinear attention.  Probability mass
never leaves the legal action set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
from torch import nn

from .errors import DecodeTruncatedError, GrammarError
from .grammar import (COLUMN_SLOT, GRAMMAR, Action, ApplyRule, AstNode,
                      Grammar, SelectColumn, SelectTable, StepInfo,
                      TABLE_SLOT, actions_to_ast)


@dataclass(frozen=True)
class DecoderState:
    h: torch.Tensor
    m: torch.Tensor
    step: int
    prev_action_emb: torch.Tensor | None
    frontier: tuple[StepInfo, ...]          # stack; last element is active
    hist_h: tuple[torch.Tensor, ...]        # hidden state per completed step
    hist_emb: tuple[torch.Tensor, ...]      # action embedding per completed step
    actions: tuple[Action, ...] = ()
    score: float = 0.0

    @property
    def finished(self) -> bool:
        return not self.frontier


class AstDecoder(nn.Module):
    def __init__(self, enc_dim: int, hidden: int = 512, action_dim: int = 128,
                 type_dim: int = 128, dropout: float = 0.2,
                 grammar: Grammar = GRAMMAR,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.grammar = grammar
        self.hidden = hidden
        kw = {"dtype": dtype}
        self.rule_emb = nn.Embedding(grammar.num_rules, action_dim, **kw)
        self.type_emb = nn.Embedding(len(grammar.slot_types), type_dim, **kw)
        self.select_emb = nn.Linear(enc_dim, action_dim, **kw)
        self.start_prev = nn.Parameter(torch.zeros(action_dim, **kw))
        self.start_parent = nn.Parameter(torch.zeros(action_dim, **kw))
        self.start_parent_h = nn.Parameter(torch.zeros(hidden, **kw))
        self.init_h = nn.Linear(enc_dim, hidden, **kw)
        self.init_m = nn.Linear(enc_dim, hidden, **kw)
        self.cell = nn.LSTMCell(2 * action_dim + hidden + type_dim, hidden, **kw)
        self.rule_out = nn.Linear(hidden, grammar.num_rules, **kw)
        self.table_q = nn.Linear(hidden, hidden, bias=False, **kw)
        self.table_k = nn.Linear(enc_dim, hidden, bias=False, **kw)
        self.col_q = nn.Linear(hidden, hidden, bias=False, **kw)
        self.col_k = nn.Linear(enc_dim, hidden, bias=False, **kw)
        self.input_dropout = nn.Dropout(dropout)
        self._subquery_rule = grammar.by_name["Subquery"].rule_id

    def initial_state(self, q_outputs: torch.Tensor) -> DecoderState:
        summary = q_outputs.mean(dim=0)
        return DecoderState(
            h=torch.tanh(self.init_h(summary)),
            m=torch.tanh(self.init_m(summary)),
            step=0,
            prev_action_emb=None,
            frontier=(StepInfo(self.grammar.start, -1, 0),),
            hist_h=(),
            hist_emb=(),
        )

    def legal_actions(self, state: DecoderState, n_tables: int,
                      n_columns: int) -> list[Action]:
        slot = state.frontier[-1]
        if slot.slot_type == TABLE_SLOT:
            return [SelectTable(i) for i in range(n_tables)]
        if slot.slot_type == COLUMN_SLOT:
            return [SelectColumn(i) for i in range(n_columns)]
        rules = []
        for prod in self.grammar.expansions(slot.slot_type):
            if prod.rule_id == self._subquery_rule and slot.depth >= 1:
                continue
            rules.append(ApplyRule(prod.rule_id))
        if not rules:
            raise GrammarError(
                f"no legal expansion for {slot.slot_type!r}: grammar bug")
        return rules

    def decode_step(self, state: DecoderState, s_outputs: torch.Tensor,
                    n_tables: int
                    ) -> tuple[list[Action], torch.Tensor, torch.Tensor,
                               torch.Tensor]:
        """One recurrent update; returns (legal actions, log-probs, h, m).

        The distribution covers exactly the legal actions for the current
        frontier slot and sums to 1 over them.
        """
        if state.finished:
            raise GrammarError("decode_step called with an empty frontier")
        slot = state.frontier[-1]
        a_prev = (state.prev_action_emb if state.prev_action_emb is not None
                  else self.start_prev)
        if slot.parent_step >= 0:
            a_parent = state.hist_emb[slot.parent_step]
            h_parent = state.hist_h[slot.parent_step]
        else:
            a_parent = self.start_parent
            h_parent = self.start_parent_h
        t = self.type_emb.weight[self.grammar.slot_type_ids[slot.slot_type]]
        x = torch.cat([a_prev, a_parent, h_parent, t])
        x = self.input_dropout(x)
        h, m = self.cell(x.unsqueeze(0), (state.h.unsqueeze(0),
                                          state.m.unsqueeze(0)))
        h, m = h.squeeze(0), m.squeeze(0)

        candidates = self.legal_actions(state, n_tables,
                                        s_outputs.shape[0] - n_tables)
        if slot.slot_type == TABLE_SLOT:
            keys = self.table_k(s_outputs[:n_tables])
            logits = keys @ self.table_q(h)
        elif slot.slot_type == COLUMN_SLOT:
            keys = self.col_k(s_outputs[n_tables:])
            logits = keys @ self.col_q(h)
        else:
            rule_ids = torch.tensor([a.rule_id for a in candidates])
            logits = self.rule_out(h)[rule_ids]
        return candidates, torch.log_softmax(logits, dim=-1), h, m

    def advance(self, state: DecoderState, h: torch.Tensor, m: torch.Tensor,
                action: Action, log_prob: float, s_outputs: torch.Tensor,
                n_tables: int) -> DecoderState:
        """Record the chosen action and push its expansions."""
        slot = state.frontier[-1]
        frontier = state.frontier[:-1]
        if isinstance(action, ApplyRule):
            prod = self.grammar.production(action.rule_id)
            depth = slot.depth + (1 if action.rule_id == self._subquery_rule
                                  else 0)
            frontier = frontier + tuple(
                StepInfo(s, state.step, depth) for s in reversed(prod.rhs))
            emb = self.rule_emb.weight[action.rule_id]
        elif isinstance(action, SelectTable):
            emb = self.select_emb(s_outputs[action.table_index])
        else:
            emb = self.select_emb(s_outputs[n_tables + action.column_index])
        return DecoderState(
            h=h, m=m, step=state.step + 1, prev_action_emb=emb,
            frontier=frontier,
            hist_h=state.hist_h + (h,),
            hist_emb=state.hist_emb + (emb,),
            actions=state.actions + (action,),
            score=state.score + log_prob,
        )

    def teacher_forced_nll(self, gold_actions: list[Action],
                           q_outputs: torch.Tensor, s_outputs: torch.Tensor,
                           n_tables: int) -> torch.Tensor:
        """Negative log-likelihood of the gold sequence (sum over steps)."""
        state = self.initial_state(q_outputs)
        nll = q_outputs.new_zeros(())
        for gold in gold_actions:
            candidates, log_probs, h, m = self.decode_step(
                state, s_outputs, n_tables)
            try:
                idx = candidates.index(gold)
            except ValueError:
                raise GrammarError(
                    f"gold action {gold!r} illegal at step {state.step}")
            nll = nll - log_probs[idx]
            state = self.advance(state, h, m, gold, float(log_probs[idx]),
                                 s_outputs, n_tables)
        if not state.finished:
            raise GrammarError("gold action sequence left an open frontier")
        return nll

    def decode(self, q_outputs: torch.Tensor, s_outputs: torch.Tensor,
               n_tables: int, beam: int = 4,
               max_actions: int = 200) -> AstNode:
        """Beam search for the highest-scoring complete tree.

        beam=1 is a greedy argmax rollout.  Raises DecodeTruncatedError if
        no hypothesis completes within max_actions steps.
        """
        if beam < 1:
            raise ValueError("beam width must be >= 1")
        live = [self.initial_state(q_outputs)]
        done: list[DecoderState] = []
        for _ in range(max_actions):
            expansions = []
            for state in live:
                candidates, log_probs, h, m = self.decode_step(
                    state, s_outputs, n_tables)
                probs = log_probs.detach()
                k = min(beam, len(candidates))
                top = torch.topk(probs, k)
                for lp, ci in zip(top.values.tolist(), top.indices.tolist()):
                    expansions.append(
                        self.advance(state, h, m, candidates[ci], lp,
                                     s_outputs, n_tables))
            expansions.sort(key=lambda s: s.score, reverse=True)
            live = []
            for state in expansions:
                if state.finished:
                    done.append(state)
                elif len(live) < beam:
                    live.append(state)
            if not live:
                break
            # Scores only decrease as steps accumulate, so once the best
            # finished hypothesis beats every live one, the search is over.
            if done and max(d.score for d in done) >= live[0].score:
                break
        if not done:
            raise DecodeTruncatedError(
                f"no complete tree within {max_actions} actions")
        best = max(done, key=lambda s: s.score)
        return actions_to_ast(list(best.actions), self.grammar)
