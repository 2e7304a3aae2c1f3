"""Attention-equipped LSTM decoder for the outline stage.

Per step: one LSTM update on the embedded previous token, dot-product
attention over the encoder states (with the decoder state projected into the
encoder dimension first, since encoder states are twice as wide), a tanh
combination of context and state, and a softmax over the vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import FLOAT, LSTMCell, Parameter, masked_row_softmax, log_softmax, uniform_init


@dataclass
class AttentionStep:
    """Cache of one attention application, enough to run its backward pass."""

    enc_states: np.ndarray  # [B, T, E]
    state: np.ndarray       # [B, H]
    query: np.ndarray       # [B, E]
    weights: np.ndarray     # [B, T], exactly 0 at masked positions
    context: np.ndarray     # [B, E]
    combined: np.ndarray    # [B, H], tanh output


def attend(enc_states, state, mask, W_a: Parameter, W_c: Parameter) -> AttentionStep:
    """Score, normalize, mix, combine: one attention step over a batch.

    scores_j = h_j . (W_a s); weights = softmax over unmasked positions;
    context = sum_j weights_j h_j; combined = tanh(W_c [context; s]).
    """
    enc_states = np.asarray(enc_states, dtype=FLOAT)
    state = np.asarray(state, dtype=FLOAT)
    if enc_states.shape[-1] != W_a.value.shape[0]:
        raise ValueError(
            f"encoder dim {enc_states.shape[-1]} != score projection rows {W_a.value.shape[0]}")
    query = state @ W_a.value.T                          # [B, E]
    scores = np.einsum("bte,be->bt", enc_states, query)  # [B, T]
    weights = masked_row_softmax(scores, mask)
    context = np.einsum("bt,bte->be", weights, enc_states)
    combo_in = np.concatenate([context, state], axis=1)
    combined = np.tanh(combo_in @ W_c.value.T)
    return AttentionStep(enc_states, state, query, weights, context, combined)


def attend_backward(step: AttentionStep, d_combined, W_a: Parameter, W_c: Parameter):
    """Backward through attend; accumulates W_a/W_c grads, returns
    (d_enc_states, d_state)."""
    E = step.enc_states.shape[-1]
    d_pre = d_combined * (1.0 - step.combined * step.combined)
    combo_in = np.concatenate([step.context, step.state], axis=1)
    W_c.grad += d_pre.T @ combo_in
    d_combo_in = d_pre @ W_c.value
    d_context = d_combo_in[:, :E]
    d_state = d_combo_in[:, E:]

    d_weights = np.einsum("be,bte->bt", d_context, step.enc_states)
    dH = step.weights[:, :, None] * d_context[:, None, :]
    # softmax backward; masked weights are exactly 0 so those scores get 0.
    inner = (d_weights * step.weights).sum(axis=1, keepdims=True)
    d_scores = step.weights * (d_weights - inner)
    d_query = np.einsum("bt,bte->be", d_scores, step.enc_states)
    dH += d_scores[:, :, None] * step.query[:, None, :]
    W_a.grad += d_query.T @ step.state
    d_state += d_query @ W_a.value
    return dH, d_state


def sequence_nll(logits, targets, mask):
    """Batch-mean of per-row summed negative log-likelihoods.

    logits [B,T,V], targets [B,T] int, mask [B,T] bool. Uses log-softmax
    internally; returns (loss, probs, logp) with probs cached for backward.
    """
    logits = np.asarray(logits, dtype=FLOAT)
    targets = np.asarray(targets)
    B, T, V = logits.shape
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise ValueError(f"target id out of range [0, {V})")
    logp = log_softmax(logits, axis=-1)
    rows = np.arange(B)[:, None], np.arange(T)[None, :]
    gold_logp = logp[rows[0], rows[1], targets]
    loss = float(-(gold_logp * mask).sum() / B)
    return loss, np.exp(logp), logp


def sequence_nll_backward(probs, targets, mask, scale=1.0):
    """d loss / d logits for sequence_nll; scale folds in any loss weight."""
    B, T, V = probs.shape
    d = probs.copy()
    rows = np.arange(B)[:, None], np.arange(T)[None, :]
    d[rows[0], rows[1], targets] -= 1.0
    d *= (np.asarray(mask, dtype=FLOAT) * (scale / B))[:, :, None]
    return d


def outline_loss(logits, targets, mask):
    """Sum of gold-token negative log-probabilities over unmasked steps,
    averaged over the batch."""
    loss, _, _ = sequence_nll(logits, targets, mask)
    return loss


@dataclass
class OutlineForward:
    states: np.ndarray        # [B, K, H] decoder LSTM states
    combined: np.ndarray      # [B, K, H] attention states
    logits: np.ndarray        # [B, K, V]
    probs: np.ndarray         # [B, K, V]
    loss: float
    input_ids: np.ndarray     # [B, K] ids actually fed (teacher forcing or sampled)
    attn_steps: list
    run_cache: object
    bridge_out: np.ndarray    # s0 [B, H], post-tanh
    bridge_input: np.ndarray         # final forward encoder state [B, H]


class OutlineDecoder:
    """Bridge from the encoder, LSTM recurrence, attention, output softmax."""

    def __init__(self, vocab_size, d_emb, d_hid, rng):
        self.d_hid = d_hid
        d_enc = 2 * d_hid
        self.bridge_W = Parameter("outline.bridge.W", uniform_init(rng, (d_hid, d_hid)))
        self.bridge_b = Parameter("outline.bridge.b", np.zeros(d_hid, dtype=FLOAT))
        self.cell = LSTMCell("outline.lstm", d_emb, d_hid, rng)
        self.W_a = Parameter("outline.attn.W_a", uniform_init(rng, (d_enc, d_hid)))
        self.W_c = Parameter("outline.attn.W_c", uniform_init(rng, (d_hid, d_enc + d_hid)))
        self.W_o = Parameter("outline.out.W_o", uniform_init(rng, (vocab_size, d_hid)))

    def parameters(self):
        return ([self.bridge_W, self.bridge_b] + self.cell.parameters()
                + [self.W_a, self.W_c, self.W_o])

    def initial_state(self, h_fwd_fin):
        """Project the final forward encoder state into the decoder space."""
        s0 = np.tanh(h_fwd_fin @ self.bridge_W.value.T + self.bridge_b.value)
        c0 = np.zeros_like(s0)
        return s0, c0

    def step(self, x_emb, state):
        """One recurrence step; state is an (s, c) pair of [B, H] arrays."""
        s, c = state
        s_new, c_new, cache = self.cell.step(x_emb, s, c)
        return (s_new, c_new), cache

    def token_distribution(self, combined):
        """softmax(W_o . combined) over the vocabulary, per row."""
        logits = combined @ self.W_o.value.T
        logp = log_softmax(logits, axis=-1)
        return np.exp(logp)

    def forward_teacher(self, embedding, enc_states, enc_mask, h_fwd_fin,
                        gold_in_ids, targets, target_mask,
                        sample_rng=None, teacher_forcing_ratio=1.0) -> OutlineForward:
        """Teacher-forced pass over a batch (optionally scheduled-sampled).

        gold_in_ids[:, 0] must be BOS. With ratio < 1 each later input is the
        gold token with probability ratio, else the previous argmax; the coin
        flips consume sample_rng one draw per (step, row).
        """
        from .numerics import LSTMRunCache

        B, K = gold_in_ids.shape
        fmask = np.asarray(target_mask, dtype=FLOAT)
        s, c = self.initial_state(h_fwd_fin)
        s0 = s.copy()
        states = np.zeros((B, K, self.d_hid), dtype=FLOAT)
        step_caches = [None] * K
        attn_steps = []
        input_ids = gold_in_ids.copy()
        logits = np.zeros((B, K, self.W_o.value.shape[0]), dtype=FLOAT)
        sampled = teacher_forcing_ratio < 1.0
        prev_argmax = None
        for t in range(K):
            if sampled and t > 0:
                coins = sample_rng.random(B)
                use_model = coins >= teacher_forcing_ratio
                input_ids[:, t] = np.where(use_model, prev_argmax, gold_in_ids[:, t])
            x = embedding.lookup(input_ids[:, t])
            m = fmask[:, t:t + 1]
            s_new, c_new, cache = self.cell.step(x, s, c)
            s = m * s_new + (1.0 - m) * s
            c = m * c_new + (1.0 - m) * c
            states[:, t] = s
            step_caches[t] = cache
            attn = attend(enc_states, s, enc_mask, self.W_a, self.W_c)
            attn_steps.append(attn)
            logits[:, t] = attn.combined @ self.W_o.value.T
            if sampled:
                prev_argmax = np.argmax(logits[:, t], axis=1)
        loss, probs, _ = sequence_nll(logits, targets, target_mask)
        combined = np.stack([a.combined for a in attn_steps], axis=1)
        run_cache = LSTMRunCache(step_caches, fmask, reverse=False)
        return OutlineForward(
            states=states, combined=combined, logits=logits, probs=probs,
            loss=loss, input_ids=input_ids, attn_steps=attn_steps,
            run_cache=run_cache, bridge_out=s0, bridge_input=h_fwd_fin)

    def backward(self, fwd: OutlineForward, targets, target_mask,
                 d_states_extra=None, loss_scale=1.0):
        """Backward through the whole teacher-forced pass.

        d_states_extra [B,K,H] carries gradients flowing into the decoder
        states from elsewhere (the fusion pooling). Returns (d_enc_states,
        d_input_embeddings, d_h_fwd_fin); accumulates parameter grads.
        """
        from .numerics import run_lstm_backward

        B, K, H = fwd.states.shape
        d_logits = sequence_nll_backward(fwd.probs, targets, target_mask, scale=loss_scale)
        self.W_o.grad += np.einsum("btv,bth->vh", d_logits, fwd.combined)
        d_combined = np.einsum("btv,vh->bth", d_logits, self.W_o.value)

        d_enc = np.zeros_like(fwd.attn_steps[0].enc_states)
        dS = np.zeros_like(fwd.states) if d_states_extra is None else d_states_extra.copy()
        for t in range(K):
            dH_t, d_state_t = attend_backward(fwd.attn_steps[t], d_combined[:, t], self.W_a, self.W_c)
            d_enc += dH_t
            dS[:, t] += d_state_t
        dX, ds0, _ = run_lstm_backward(self.cell, fwd.run_cache, dS)

        s0 = fwd.bridge_out
        d_pre = ds0 * (1.0 - s0 * s0)
        self.bridge_W.grad += d_pre.T @ fwd.bridge_input
        self.bridge_b.grad += d_pre.sum(axis=0)
        d_h_fwd_fin = d_pre @ self.bridge_W.value
        return d_enc, dX, d_h_fwd_fin
