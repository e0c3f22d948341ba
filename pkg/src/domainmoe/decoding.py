"""Beam search decoding with length-normalized scores.

Hypotheses are scored by total log-probability divided by hypothesis length;
beam size 1 degrades to greedy argmax decoding. When the expert bank is
active, the discriminator picks one expert per sentence (argmax over
category scores) and that expert is applied at every decoder layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .corpus import BOS, EOS
from .discriminator import pool
from .experts import disc_scores, inference_route, make_expert_apply
from .model import decode, encode
from .tensor import Tensor


@dataclass
class Hypothesis:
    ids: list                # target ids, EOS stripped
    score: float             # log-prob / length
    logprob: float
    complete: bool           # False when the end token had to be forced


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def beam_decode(params: dict, cfg: ModelConfig, src_ids: list[int],
                beam_size: int = 5, max_len: int | None = None,
                use_experts: bool = False, n_best: int = 1) -> list[Hypothesis]:
    """Decode one source sentence; returns the n-best completed hypotheses
    sorted by non-increasing normalized score."""
    if beam_size < 1:
        raise ValueError(f"beam size must be >= 1, got {beam_size}")
    if len(src_ids) == 0:
        raise ValueError("cannot decode an empty source sentence")
    max_len = cfg.max_seq_len if max_len is None else max_len
    with T.no_grad():
        dtype = params["src_embed"].data.dtype
        src = np.asarray([src_ids[:cfg.max_seq_len]], dtype=np.int64)
        src_mask = np.ones_like(src, dtype=dtype)
        h = encode(params, cfg, src, src_mask)

        expert_idx = None
        if use_experts:
            feats = pool(h.data, src_mask)
            expert_idx = inference_route(disc_scores(params, feats)[0])

        beams = [([BOS], 0.0)]
        completed: list[Hypothesis] = []
        for _ in range(max_len):
            width = len(beams)
            tgt_in = np.asarray([b[0] for b in beams], dtype=np.int64)
            tgt_mask = np.ones_like(tgt_in, dtype=dtype)
            h_tile = Tensor(np.repeat(h.data, width, axis=0))
            mask_tile = np.repeat(src_mask, width, axis=0)
            expert_apply = None
            if expert_idx is not None:
                expert_apply = make_expert_apply(
                    params, cfg, np.full(width, expert_idx, dtype=np.int64))
            logits = decode(params, cfg, h_tile, mask_tile, tgt_in, tgt_mask,
                            expert_apply=expert_apply)
            logp = _log_softmax(logits.data[:, -1, :])
            scored = []
            for (prefix, base), row in zip(beams, logp):
                top = np.argsort(-row, kind="stable")[:beam_size]
                for tok in top:
                    scored.append((base + float(row[tok]), prefix + [int(tok)]))
            scored.sort(key=lambda item: -item[0])
            beams = []
            for logprob, seq in scored:
                if seq[-1] == EOS:
                    hyp_len = len(seq) - 1  # exclude BOS
                    completed.append(Hypothesis(ids=seq[1:-1], score=logprob / hyp_len,
                                                logprob=logprob, complete=True))
                elif len(beams) < beam_size:
                    beams.append((seq, logprob))
                if len(beams) == beam_size:
                    break
            if len(completed) >= beam_size or not beams:
                break

        if not completed:
            # no hypothesis finished within max_len: best partial, end forced
            prefix, logprob = beams[0]
            completed.append(Hypothesis(ids=prefix[1:], score=logprob / max(len(prefix), 1),
                                        logprob=logprob, complete=False))
        completed.sort(key=lambda hyp: -hyp.score)
        return completed[:n_best]


def translate_corpus(params: dict, cfg: ModelConfig, sentences: list,
                     beam_size: int = 5, use_experts: bool = False) -> list:
    return [beam_decode(params, cfg, s, beam_size, use_experts=use_experts)[0].ids
            for s in sentences]
