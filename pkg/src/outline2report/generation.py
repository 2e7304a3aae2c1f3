"""Inference-time decoding (greedy, beam, sampling) for outlines and reports,
plus BLEU and repetition metrics.

All decoders share one step contract: step_fn(state, token) feeds `token` to
the recurrence and returns (log-prob vector over the vocabulary, new state).
Model-backed step functions mask PAD and BOS out of the emission distribution.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .config import DecodeConfig
from .corpus import BOS, EOS, PAD, Vocabulary, tokenize, wrap_ids
from .numerics import FLOAT, log_softmax
from .outline_decoder import attend


# -- generic search ------------------------------------------------------------


@dataclass
class DecodedSequence:
    tokens: tuple          # emitted ids, including the terminal EOS if reached
    logps: tuple           # model log-prob of each emitted token
    score: float           # sum(logps) / len(tokens), the ranking used


def _normalized(tokens, logps) -> DecodedSequence:
    n = len(tokens)
    total = float(sum(logps))
    return DecodedSequence(tuple(tokens), tuple(logps),
                           total / n if n else -math.inf)


def greedy_decode(step_fn, init_state, max_len, eos_id=EOS, bos_id=BOS):
    """Argmax at every step; ties go to the smallest token id."""
    state = init_state
    prev = bos_id
    tokens: list[int] = []
    logps: list[float] = []
    for _ in range(max_len):
        logp, state = step_fn(state, prev)
        tok = int(np.argmax(logp))
        tokens.append(tok)
        logps.append(float(logp[tok]))
        if tok == eos_id:
            break
        prev = tok
    return _normalized(tokens, logps)


def sample_decode(step_fn, init_state, max_len, rng, temperature=1.0,
                  eos_id=EOS, bos_id=BOS):
    """Ancestral sampling; temperature rescales logits before normalizing.

    Recorded logps are those of the unscaled model distribution.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    state = init_state
    prev = bos_id
    tokens: list[int] = []
    logps: list[float] = []
    for _ in range(max_len):
        logp, state = step_fn(state, prev)
        scaled = log_softmax(logp / temperature, axis=-1)
        tok = int(rng.choice(len(logp), p=np.exp(scaled)))
        tokens.append(tok)
        logps.append(float(logp[tok]))
        if tok == eos_id:
            break
        prev = tok
    return _normalized(tokens, logps)


@dataclass
class _Hypothesis:
    tokens: tuple
    logps: tuple
    total: float
    state: object


def beam_search(step_fn, init_state, width, max_len, eos_id=EOS, bos_id=BOS):
    """Length-normalized beam search.

    Each step keeps the `width` best expansions by cumulative log-prob; any
    of those ending in EOS retire to the finished pool (their slot is not
    refilled) and are never pruned afterwards. Final ranking is
    sum(logp) / length with EOS counted in both; ties break toward the
    lexicographically smaller token-id sequence.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    active = [_Hypothesis((), (), 0.0, init_state)]
    finished: list[_Hypothesis] = []
    for _ in range(max_len):
        if not active:
            break
        expansions: list[_Hypothesis] = []
        for hyp in active:
            prev = hyp.tokens[-1] if hyp.tokens else bos_id
            logp, state = step_fn(hyp.state, prev)
            for tok in range(len(logp)):
                lp = float(logp[tok])
                if lp == -math.inf:
                    continue
                expansions.append(_Hypothesis(
                    hyp.tokens + (tok,), hyp.logps + (lp,),
                    hyp.total + lp, state))
        expansions.sort(key=lambda h: (-h.total, h.tokens))
        active = []
        for hyp in expansions[:width]:
            if hyp.tokens[-1] == eos_id:
                finished.append(hyp)
            else:
                active.append(hyp)
    pool = finished + active
    if not pool:
        return DecodedSequence((), (), -math.inf)
    best = min(pool, key=lambda h: (-(h.total / len(h.tokens)), h.tokens))
    return DecodedSequence(best.tokens, best.logps, best.total / len(best.tokens))


def run_decode(strategy, step_fn, init_state, max_len, *, width=1,
               temperature=1.0, rng=None, eos_id=EOS, bos_id=BOS):
    if strategy == "greedy":
        return greedy_decode(step_fn, init_state, max_len, eos_id, bos_id)
    if strategy == "beam":
        return beam_search(step_fn, init_state, width, max_len, eos_id, bos_id)
    if strategy == "sample":
        if rng is None:
            raise ValueError("sampling needs a random generator")
        return sample_decode(step_fn, init_state, max_len, rng, temperature,
                             eos_id, bos_id)
    raise ValueError(f"unknown decode strategy {strategy!r}")


# -- model-backed generation ---------------------------------------------------


@dataclass
class GenerationResult:
    outline_ids: tuple
    report_ids: tuple
    outline_tokens: list
    report_tokens: list
    outline_logps: tuple
    report_logps: tuple
    logprob: float                       # sum over both emitted sequences
    attention: np.ndarray | None = field(default=None, repr=False)

    def to_record(self, pair_id) -> dict:
        rec = {
            "id": pair_id,
            "outline": self.outline_tokens,
            "report": self.report_tokens,
            "logprob": self.logprob,
        }
        if self.attention is not None:
            rec["attention"] = [[float(w) for w in row] for row in self.attention]
        return rec


def _emission_mask(logits):
    logp = log_softmax(logits, axis=-1)
    logp[PAD] = -math.inf
    logp[BOS] = -math.inf
    return logp


def generate(news_tokens, model, vocab: Vocabulary,
             dcfg: DecodeConfig) -> GenerationResult:
    """Full pipeline on one news item: encode, decode an outline, fuse it
    with the encoding, draw the latent (zero or prior), decode the report."""
    news_tokens = list(news_tokens)
    if not news_tokens:
        raise ValueError("cannot generate from empty news input")
    ids = np.array([wrap_ids(news_tokens, vocab, model.cfg.max_news_len)],
                   dtype=np.int64)
    mask = ids != PAD
    emb = model.embedding
    enc_states, hf_fin, _, _ = model.encoder.forward(emb.lookup(ids), mask)

    odec = model.outline_decoder
    rng = np.random.default_rng(np.random.SeedSequence([dcfg.seed, 3]))

    def outline_step(state, token):
        x = emb.lookup(np.array([token], dtype=np.int64))
        (s, c), _ = odec.step(x, state)
        attn = attend(enc_states, s, mask, odec.W_a, odec.W_c)
        logits = (attn.combined @ odec.W_o.value.T)[0]
        return _emission_mask(logits), (s, c)

    outline = run_decode(
        dcfg.strategy, outline_step, odec.initial_state(hf_fin),
        dcfg.max_outline_len, width=dcfg.beam_width,
        temperature=dcfg.temperature, rng=rng)

    # replay the chosen outline to collect the decoder states for fusion
    # (and the attention rows, if asked for)
    s, c = odec.initial_state(hf_fin)
    states = []
    attn_rows = []
    prev = BOS
    for tok in outline.tokens:
        x = emb.lookup(np.array([prev], dtype=np.int64))
        (s, c), _ = odec.step(x, (s, c))
        states.append(s[0])
        if dcfg.record_attention:
            attn_rows.append(attend(enc_states, s, mask, odec.W_a, odec.W_c).weights[0])
        prev = tok
    if states:
        pool_out = np.mean(np.stack(states), axis=0, keepdims=True)
    else:
        pool_out = np.zeros((1, model.cfg.d_hid), dtype=FLOAT)
    fmask = mask.astype(FLOAT)
    pool_enc = np.einsum("bt,bte->be", fmask, enc_states) / fmask.sum(axis=1)[:, None]
    u = np.concatenate([pool_enc, pool_out], axis=1)

    rdec = model.report_decoder
    noise = None if dcfg.deterministic_latent else rng.standard_normal((1, model.cfg.d_z))
    latent = rdec.prior_latent(1, noise)
    h0, c0, _ = rdec.initial_state(latent.z, u)

    def report_step(state, token):
        x = emb.lookup(np.array([token], dtype=np.int64))
        (h, c2), _ = rdec.step(x, state)
        logits = (h @ rdec.W_out.value.T)[0]
        return _emission_mask(logits), (h, c2)

    report = run_decode(
        dcfg.strategy, report_step, (h0, c0), dcfg.max_report_len,
        width=dcfg.beam_width, temperature=dcfg.temperature, rng=rng)

    attention = np.stack(attn_rows) if (dcfg.record_attention and attn_rows) else None
    return GenerationResult(
        outline_ids=outline.tokens, report_ids=report.tokens,
        outline_tokens=vocab.decode(outline.tokens),
        report_tokens=vocab.decode(report.tokens),
        outline_logps=outline.logps, report_logps=report.logps,
        logprob=float(sum(outline.logps) + sum(report.logps)),
        attention=attention)


def generate_from_text(news_text: str, model, vocab, dcfg) -> GenerationResult:
    return generate(tokenize(news_text), model, vocab, dcfg)


# -- metrics -------------------------------------------------------------------


def ngrams(tokens, n) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def clipped_counts(candidate, reference, n):
    """(clipped matches, total candidate n-grams), before smoothing."""
    cand = ngrams(candidate, n)
    ref = ngrams(reference, n)
    clipped = sum(min(count, ref[gram]) for gram, count in cand.items())
    return clipped, sum(cand.values())


def bleu(candidate, reference, max_n: int = 4) -> float:
    """Sentence BLEU: geometric mean of modified n-gram precisions times the
    brevity penalty. Smoothing is add-1 on numerator and denominator for
    n >= 2 only, so a zero unigram overlap still scores 0.
    """
    candidate = list(candidate)
    reference = list(reference)
    if not reference:
        raise ValueError("reference must be non-empty")
    if not candidate:
        warnings.warn("empty candidate scores 0", stacklevel=2)
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        clipped, total = clipped_counts(candidate, reference, n)
        if n >= 2:
            clipped += 1
            total += 1
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    bp = 1.0 if len(candidate) > len(reference) else math.exp(
        1.0 - len(reference) / len(candidate))
    return bp * math.exp(log_sum / max_n)


def corpus_bleu(pairs, max_n: int = 4) -> float:
    """Corpus BLEU: counts pooled over all (candidate, reference) pairs, the
    same add-1 smoothing applied once to the pooled counts for n >= 2."""
    pairs = [(list(c), list(r)) for c, r in pairs]
    if not pairs:
        raise ValueError("corpus_bleu needs at least one pair")
    cand_len = sum(len(c) for c, _ in pairs)
    ref_len = sum(len(r) for _, r in pairs)
    if cand_len == 0:
        warnings.warn("all candidates empty; corpus BLEU is 0", stacklevel=2)
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        clipped = total = 0
        for cand, ref in pairs:
            c, t = clipped_counts(cand, ref, n)
            clipped += c
            total += t
        if n >= 2:
            clipped += 1
            total += 1
        if clipped == 0 or total == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_sum / max_n)


def repetition_rate(tokens, n: int = 2) -> float:
    """1 - distinct/total n-grams; the repeated-term failure measure."""
    tokens = list(tokens)
    total = len(tokens) - n + 1
    if total <= 0:
        warnings.warn(f"sequence shorter than n={n}; repetition rate is 0",
                      stacklevel=2)
        return 0.0
    grams = ngrams(tokens, n)
    # (total - distinct)/total, not 1 - distinct/total: bit-exact at e.g. 2/3
    return (total - len(grams)) / total


def length_stats(sequences) -> dict:
    lengths = [len(s) for s in sequences]
    if not lengths:
        return {"count": 0, "mean": 0.0, "min": 0, "max": 0}
    return {"count": len(lengths), "mean": sum(lengths) / len(lengths),
            "min": min(lengths), "max": max(lengths)}


def evaluation_report(candidates_by_id: dict, references_by_id: dict) -> dict:
    """Metrics block for generated outputs against gold reports.

    Keys of `candidates_by_id` must all resolve in `references_by_id`.
    """
    missing = [i for i in candidates_by_id if i not in references_by_id]
    if missing:
        raise ValueError(f"generated ids missing from reference dataset: {missing}")
    ids = sorted(candidates_by_id)
    cands = [candidates_by_id[i] for i in ids]
    refs = [references_by_id[i] for i in ids]
    sent = [bleu(c, r) for c, r in zip(cands, refs)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cand_rep = [repetition_rate(c) for c in cands]
        ref_rep = [repetition_rate(r) for r in refs]
    return {
        "pairs": len(ids),
        "mean_sentence_bleu": sum(sent) / len(sent) if sent else 0.0,
        "corpus_bleu": corpus_bleu(zip(cands, refs)) if ids else 0.0,
        "candidate_repetition": sum(cand_rep) / len(cand_rep) if cand_rep else 0.0,
        "reference_repetition": sum(ref_rep) / len(ref_rep) if ref_rep else 0.0,
        "candidate_lengths": length_stats(cands),
        "reference_lengths": length_stats(refs),
    }
