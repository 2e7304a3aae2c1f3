"""VAE-based report decoder: fusion, recognition network, latent sampling,
KL term, and the LSTM that writes the report.

The conditioning vector u concatenates the mean-pooled encoder states with
the mean-pooled outline decoder states. During training the recognition
network sees u together with a mean-pooled embedding of the gold report and
produces a diagonal Gaussian; the sampled latent (reparameterized) and u
initialize the decoder state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import FLOAT, LSTMCell, Parameter, uniform_init
from .outline_decoder import sequence_nll, sequence_nll_backward


def masked_mean_pool(X, mask):
    """Mean over unmasked positions of X [B,T,D]; returns ([B,D], lengths)."""
    fmask = np.asarray(mask, dtype=FLOAT)
    lengths = fmask.sum(axis=1)
    if np.any(lengths == 0):
        raise ValueError("mean pool over a fully masked row")
    pooled = np.einsum("bt,btd->bd", fmask, X) / lengths[:, None]
    return pooled, lengths


def fuse_news_outline(enc_states, enc_mask, outline_states, outline_mask):
    """u = [mean-pool(encoder states) ; mean-pool(outline states)]."""
    if enc_states.shape[1] == 0 or outline_states.shape[1] == 0:
        raise ValueError("fusion needs non-empty encoder and outline state sequences")
    pool_enc, len_enc = masked_mean_pool(enc_states, enc_mask)
    pool_out, len_out = masked_mean_pool(outline_states, outline_mask)
    return np.concatenate([pool_enc, pool_out], axis=1), (len_enc, len_out)


@dataclass
class LatentSample:
    mean: np.ndarray     # [B, d_z]
    logvar: np.ndarray   # [B, d_z]
    z: np.ndarray        # [B, d_z]
    noise: np.ndarray    # [B, d_z], the epsilon actually used


def reparameterize(mean, logvar, noise) -> LatentSample:
    """z = mean + exp(logvar / 2) * noise, with the noise recorded."""
    z = mean + np.exp(0.5 * logvar) * noise
    return LatentSample(mean=mean, logvar=logvar, z=z, noise=noise)


def gaussian_kl(mean, logvar):
    """KL(N(mean, diag(exp(logvar))) || N(0, I)), summed over the last axis.

    0.5 * sum(exp(logvar) + mean^2 - 1 - logvar); nonnegative, zero exactly
    at (0, 0). Returns a scalar for vectors, a per-row array for matrices.
    """
    mean = np.asarray(mean, dtype=FLOAT)
    logvar = np.asarray(logvar, dtype=FLOAT)
    kl = 0.5 * np.sum(np.exp(logvar) + mean * mean - 1.0 - logvar, axis=-1)
    return float(kl) if kl.ndim == 0 else kl


def report_loss(logits, targets, mask, kl, beta):
    """Token-level NLL over unmasked steps plus beta * KL (batch means)."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    nll, _, _ = sequence_nll(logits, targets, mask)
    return nll + beta * float(np.mean(kl))


@dataclass
class ReportForward:
    u: np.ndarray
    pool_lengths: tuple
    report_summary: np.ndarray
    recog_in: np.ndarray
    latent: LatentSample
    kl_rows: np.ndarray
    init_out: np.ndarray      # h0 [B, H], post-tanh
    init_in: np.ndarray       # [z ; u]
    states: np.ndarray        # [B, K, H]
    logits: np.ndarray
    probs: np.ndarray
    nll: float
    loss: float               # nll + beta * mean KL
    beta: float
    input_ids: np.ndarray
    run_cache: object


class ReportDecoder:
    """Recognition affine maps, latent-to-state bridge, LSTM, output softmax."""

    def __init__(self, vocab_size, d_emb, d_hid, d_u, d_z, rng):
        self.d_hid = d_hid
        self.d_z = d_z
        d_recog = d_u + d_emb
        self.W_mu = Parameter("report.recog.W_mu", uniform_init(rng, (d_z, d_recog)))
        self.b_mu = Parameter("report.recog.b_mu", np.zeros(d_z, dtype=FLOAT))
        self.W_lv = Parameter("report.recog.W_lv", uniform_init(rng, (d_z, d_recog)))
        self.b_lv = Parameter("report.recog.b_lv", np.zeros(d_z, dtype=FLOAT))
        self.W_init = Parameter("report.init.W", uniform_init(rng, (d_hid, d_z + d_u)))
        self.b_init = Parameter("report.init.b", np.zeros(d_hid, dtype=FLOAT))
        self.cell = LSTMCell("report.lstm", d_emb, d_hid, rng)
        self.W_out = Parameter("report.out.W", uniform_init(rng, (vocab_size, d_hid)))

    def parameters(self):
        return ([self.W_mu, self.b_mu, self.W_lv, self.b_lv, self.W_init, self.b_init]
                + self.cell.parameters() + [self.W_out])

    def infer_latent(self, u, report_summary, noise) -> tuple[LatentSample, np.ndarray]:
        """Recognition pass: affine maps from [u ; report summary] to the
        Gaussian parameters, then the reparameterized sample."""
        recog_in = np.concatenate([u, report_summary], axis=1)
        mean = recog_in @ self.W_mu.value.T + self.b_mu.value
        logvar = recog_in @ self.W_lv.value.T + self.b_lv.value
        return reparameterize(mean, logvar, noise), recog_in

    def prior_latent(self, batch, noise=None) -> LatentSample:
        """Inference-time latent: standard normal draw, or zero when noise is None."""
        zeros = np.zeros((batch, self.d_z), dtype=FLOAT)
        eps = zeros if noise is None else noise
        return reparameterize(zeros, zeros.copy(), eps)

    def initial_state(self, z, u):
        init_in = np.concatenate([z, u], axis=1)
        h0 = np.tanh(init_in @ self.W_init.value.T + self.b_init.value)
        return h0, np.zeros_like(h0), init_in

    def step(self, x_emb, state):
        h, c = state
        h_new, c_new, cache = self.cell.step(x_emb, h, c)
        return (h_new, c_new), cache

    def token_distribution(self, h):
        from .numerics import log_softmax

        return np.exp(log_softmax(h @ self.W_out.value.T, axis=-1))

    def forward_teacher(self, embedding, u, pool_lengths, report_summary,
                        gold_in_ids, targets, target_mask, noise, beta,
                        sample_rng=None, teacher_forcing_ratio=1.0) -> ReportForward:
        """Teacher-forced report pass with a freshly sampled latent."""
        from .numerics import LSTMRunCache

        latent, recog_in = self.infer_latent(u, report_summary, noise)
        kl_rows = gaussian_kl(latent.mean, latent.logvar)
        h, c0, init_in = self.initial_state(latent.z, u)
        h0 = h.copy()
        c = c0
        B, K = gold_in_ids.shape
        fmask = np.asarray(target_mask, dtype=FLOAT)
        states = np.zeros((B, K, self.d_hid), dtype=FLOAT)
        step_caches = [None] * K
        input_ids = gold_in_ids.copy()
        sampled = teacher_forcing_ratio < 1.0
        logits = np.zeros((B, K, self.W_out.value.shape[0]), dtype=FLOAT)
        prev_argmax = None
        for t in range(K):
            if sampled and t > 0:
                coins = sample_rng.random(B)
                use_model = coins >= teacher_forcing_ratio
                input_ids[:, t] = np.where(use_model, prev_argmax, gold_in_ids[:, t])
            x = embedding.lookup(input_ids[:, t])
            m = fmask[:, t:t + 1]
            h_new, c_new, cache = self.cell.step(x, h, c)
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
            states[:, t] = h
            step_caches[t] = cache
            if sampled:
                logits[:, t] = h @ self.W_out.value.T
                prev_argmax = np.argmax(logits[:, t], axis=1)
        if not sampled:
            logits = np.einsum("bth,vh->btv", states, self.W_out.value)
        nll, probs, _ = sequence_nll(logits, targets, target_mask)
        loss = nll + beta * float(np.mean(kl_rows))
        run_cache = LSTMRunCache(step_caches, fmask, reverse=False)
        return ReportForward(
            u=u, pool_lengths=pool_lengths, report_summary=report_summary,
            recog_in=recog_in, latent=latent, kl_rows=kl_rows, init_out=h0,
            init_in=init_in, states=states, logits=logits, probs=probs,
            nll=nll, loss=loss, beta=beta, input_ids=input_ids, run_cache=run_cache)

    def backward(self, fwd: ReportForward, targets, target_mask):
        """Backward through NLL + beta*KL; accumulates parameter grads.

        Returns (d_u, d_report_summary, d_input_embeddings).
        """
        from .numerics import run_lstm_backward

        B = fwd.states.shape[0]
        d_logits = sequence_nll_backward(fwd.probs, targets, target_mask)
        self.W_out.grad += np.einsum("btv,bth->vh", d_logits, fwd.states)
        dS = np.einsum("btv,vh->bth", d_logits, self.W_out.value)
        dX, dh0, _ = run_lstm_backward(self.cell, fwd.run_cache, dS)

        h0 = fwd.init_out
        d_init_pre = dh0 * (1.0 - h0 * h0)
        self.W_init.grad += d_init_pre.T @ fwd.init_in
        self.b_init.grad += d_init_pre.sum(axis=0)
        d_init_in = d_init_pre @ self.W_init.value
        dz = d_init_in[:, :self.d_z]
        du = d_init_in[:, self.d_z:]

        latent = fwd.latent
        # KL term (batch mean, weighted by beta); then the sample path.
        d_mean = (fwd.beta / B) * latent.mean
        d_logvar = (fwd.beta / B) * 0.5 * (np.exp(latent.logvar) - 1.0)
        d_mean += dz
        d_logvar += dz * latent.noise * 0.5 * np.exp(0.5 * latent.logvar)

        self.W_mu.grad += d_mean.T @ fwd.recog_in
        self.b_mu.grad += d_mean.sum(axis=0)
        self.W_lv.grad += d_logvar.T @ fwd.recog_in
        self.b_lv.grad += d_logvar.sum(axis=0)
        d_recog_in = d_mean @ self.W_mu.value + d_logvar @ self.W_lv.value
        d_u_dim = du.shape[1]
        du += d_recog_in[:, :d_u_dim]
        d_report_summary = d_recog_in[:, d_u_dim:]
        return du, d_report_summary, dX
