"""Stage-wise pipeline orchestration and run-directory management.

One run owns one directory (lock file) holding the resolved config,
corpus, checkpoint, cluster artifacts, logs and metrics.  Stages must run
in order: backbone -> build-domains -> discriminator -> experts; each
command checks its prerequisite's completion flag in the checkpoint and
verifies the frozen-parameter hashes of earlier stages.
"""

import contextlib
import json
import logging
import os
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_mod
from . import clustering, corpus as corpus_mod, metrics as metrics_mod, training
from .checkpoint import Checkpoint, CheckpointError, hash_tensors
from .config import ModelConfig, RunConfig, config_from_dict
from .discriminator import Discriminator, encode_features
from .experts import ExpertBank
from .model import TransformerModel, beam_decode
from .rng import RngStream
from .tensor import set_checked

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


@contextlib.contextmanager
def run_lock(run_dir):
    lock = Path(run_dir) / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PipelineError(f"run directory {run_dir} is locked by another run")
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def prepare_run(cfg):
    cfg.validate()
    set_checked(cfg.checked)
    run_dir = Path(cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / "config.resolved.json")
    return run_dir


def get_corpora(cfg, run_dir):
    """Load or deterministically generate the run's corpus set."""
    if cfg.corpus_dir:
        return corpus_mod.load_corpus_set(cfg.corpus_dir)
    corpus_out = Path(run_dir) / "corpus"
    if (corpus_out / "vocab.src").exists():
        return corpus_mod.load_corpus_set(corpus_out)
    if not cfg.generator_spec:
        raise PipelineError("config needs corpus_dir or generator_spec")
    specs, shared = corpus_mod.specs_from_dict(cfg.generator_spec)
    rnd_pd = cfg.generator_spec.get("rnd_per_domain")
    corpora = corpus_mod.generate(specs, RngStream(cfg.seed, 17), shared,
                                  rnd_per_domain=rnd_pd)
    corpus_mod.save_corpus_set(corpora, corpus_out, cfg.generator_spec)
    return corpora


def _build_model(cfg):
    return TransformerModel(cfg.model, RngStream(cfg.model.seed or cfg.seed, 1))


def _build_disc(cfg):
    return Discriminator(cfg.model.model_dim, cfg.model.num_experts,
                         RngStream(cfg.model.seed or cfg.seed, 2))


def _build_bank(cfg):
    return ExpertBank(cfg.model.num_layers, cfg.model.num_experts,
                      cfg.model.model_dim, cfg.model.expert_inner_dim,
                      RngStream(cfg.model.seed or cfg.seed, 3))


def _ckpt_dir(run_dir):
    return Path(run_dir) / "checkpoint"


def load_run(run_dir, require=None):
    """Load checkpoint + rebuilt modules from a run directory."""
    ckpt = Checkpoint.load(_ckpt_dir(run_dir))
    cfg = config_from_dict(ckpt.config)
    set_checked(cfg.checked)
    if require:
        ckpt.require_stage(require)
    model = _build_model(cfg)
    ckpt_mod.load_params_into(model.named_params(), ckpt.tensors, "backbone.")
    disc = bank = None
    if ckpt.stages["discriminator"]:
        disc = _build_disc(cfg)
        ckpt_mod.load_params_into(disc.named_params(), ckpt.tensors)
    if ckpt.stages["experts"]:
        bank = _build_bank(cfg)
        ckpt_mod.load_params_into(bank.named_params(), ckpt.tensors)
    return ckpt, cfg, model, disc, bank


def _save_stage(run_dir, cfg, stage, backbone=None, disc=None, bank=None,
                prev=None, frozen=None):
    tensors = dict(prev.tensors) if prev else {}
    if backbone is not None:
        tensors.update({"backbone." + k: v.data.copy()
                        for k, v in backbone.named_params().items()})
    if disc is not None:
        tensors.update(ckpt_mod.params_to_arrays(disc.named_params()))
    if bank is not None:
        tensors.update(ckpt_mod.params_to_arrays(bank.named_params()))
    stages = dict(prev.stages) if prev else {}
    stages[stage] = True
    # re-running a stage invalidates everything downstream of it
    order = list(ckpt_mod.STAGES)
    prefixes = {"backbone": "backbone.", "discriminator": "disc.",
                "experts": "expert."}
    for later in order[order.index(stage) + 1:]:
        stages[later] = False
        pref = prefixes.get(later)
        if pref:
            tensors = {k: v for k, v in tensors.items() if not k.startswith(pref)}
    hashes = dict(prev.frozen_hashes) if prev else {}
    hashes.update(frozen or {})
    ckpt = Checkpoint(tensors, stages, cfg.to_dict(), hashes)
    ckpt.save(_ckpt_dir(run_dir))
    return ckpt


# -- stage commands ------------------------------------------------------

def cmd_gen_corpus(cfg):
    run_dir = prepare_run(cfg)
    if not cfg.generator_spec:
        raise PipelineError("gen-corpus requires generator_spec in the config")
    specs, shared = corpus_mod.specs_from_dict(cfg.generator_spec)
    corpora = corpus_mod.generate(specs, RngStream(cfg.seed, 17), shared,
                                  rnd_per_domain=cfg.generator_spec.get("rnd_per_domain"))
    corpus_mod.save_corpus_set(corpora, run_dir / "corpus", cfg.generator_spec)
    return {"out": str(run_dir / "corpus"),
            "sizes": {k: len(v) for k, v in corpora.items()}}


def cmd_train_backbone(cfg):
    run_dir = prepare_run(cfg)
    with run_lock(run_dir):
        corpora = get_corpora(cfg, run_dir)
        cfg.model.src_vocab_size = len(corpora["train"].src_vocab)
        cfg.model.tgt_vocab_size = len(corpora["train"].tgt_vocab)
        model = _build_model(cfg)
        trainer = training.train_backbone(
            model, corpora["train"].pairs, corpora["dev"].pairs, cfg,
            RngStream(cfg.seed, 10), log_path=run_dir / "backbone_train.jsonl")
        _save_stage(run_dir, cfg, "backbone", backbone=model)
        dev_loss = training.evaluate_loss(model, corpora["dev"].pairs, cfg.batch_size)
        return {"steps": len(trainer.history), "diverged": trainer.diverged,
                "dev_loss": dev_loss}


def _load_anchors(cfg, src_vocab):
    if not cfg.anchors_path:
        return []
    anchors = []
    for line in Path(cfg.anchors_path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        sentence, tag = line.split("\t")
        anchors.append((src_vocab.encode(sentence), tag))
    return anchors


def cmd_build_domains(cfg):
    run_dir = prepare_run(cfg)
    with run_lock(run_dir):
        ckpt, cfg_saved, model, _, _ = load_run(run_dir, require="backbone")
        cfg.model.src_vocab_size = cfg_saved.model.src_vocab_size
        cfg.model.tgt_vocab_size = cfg_saved.model.tgt_vocab_size
        corpora = get_corpora(cfg, run_dir)
        anchors = _load_anchors(cfg, corpora["train"].src_vocab)
        rng = RngStream(cfg.seed, 20)
        sample_idx = clustering.sample_sentences(corpora["train"],
                                                 min(cfg.sample_count, len(corpora["train"])),
                                                 rng)
        entries, pca, cluster = clustering.build_discriminator_dataset(
            corpora["train"], sample_idx, anchors, model,
            cfg.model.num_experts, cfg.cluster_method, cfg.pca_dim, rng)
        cluster_dir = run_dir / "cluster"
        clustering.save_cluster_artifacts(cluster_dir, pca, cluster)
        with open(cluster_dir / "dataset.jsonl", "w") as f:
            for e in entries:
                f.write(json.dumps({"src": e["src"], "label": e["label"],
                                    "anchor_tag": e["anchor_tag"]}) + "\n")
        backbone_hash = hash_tensors(ckpt.tensors, "backbone.")
        _save_stage(run_dir, cfg, "domains", prev=ckpt,
                    frozen={"backbone": backbone_hash})
        labels = [e["label"] for e in entries]
        return {"dataset_size": len(entries), "anchors": len(anchors),
                "label_histogram": np.bincount(labels,
                                               minlength=cfg.model.num_experts).tolist()}


def cmd_train_discriminator(cfg):
    run_dir = prepare_run(cfg)
    with run_lock(run_dir):
        ckpt, cfg_saved, model, _, _ = load_run(run_dir, require="domains")
        cfg.model.src_vocab_size = cfg_saved.model.src_vocab_size
        cfg.model.tgt_vocab_size = cfg_saved.model.tgt_vocab_size
        entries = [json.loads(line) for line in
                   (run_dir / "cluster" / "dataset.jsonl").read_text().splitlines()]
        feat_pairs = [(e["src"], None, None) for e in entries]
        features = encode_features(model, feat_pairs, cfg.batch_size)
        labels = [e["label"] for e in entries]
        before = hash_tensors({"backbone." + k: v.data for k, v in
                               model.named_params().items()}, "backbone.")
        disc = _build_disc(cfg)
        training.train_discriminator(disc, features, labels, cfg,
                                     RngStream(cfg.seed, 30),
                                     log_path=run_dir / "discriminator_train.jsonl")
        after = hash_tensors({"backbone." + k: v.data for k, v in
                              model.named_params().items()}, "backbone.")
        if before != after:
            raise PipelineError("backbone parameters changed during stage 2")
        _save_stage(run_dir, cfg, "discriminator", disc=disc, prev=ckpt,
                    frozen={"backbone": before})
        from .tensor import Tensor
        preds = disc.score(Tensor(features)).data.argmax(axis=1)
        agree = float((preds == np.asarray(labels)).mean())
        return {"train_agreement": agree}


def cmd_train_experts(cfg):
    run_dir = prepare_run(cfg)
    with run_lock(run_dir):
        ckpt, cfg_saved, model, disc, _ = load_run(run_dir, require="discriminator")
        cfg.model.src_vocab_size = cfg_saved.model.src_vocab_size
        cfg.model.tgt_vocab_size = cfg_saved.model.tgt_vocab_size
        corpora = get_corpora(cfg, run_dir)
        frozen_before = {
            "backbone": hash_tensors(ckpt.tensors, "backbone."),
            "discriminator": hash_tensors(ckpt.tensors, "disc."),
        }
        bank = _build_bank(cfg)
        trainer = training.train_experts(
            model, bank, disc, corpora["train"].pairs, corpora["dev"].pairs,
            cfg, RngStream(cfg.seed, 40),
            log_path=run_dir / "experts_train.jsonl",
            routing_log_path=run_dir / "routing_decisions.jsonl")
        live = {"backbone." + k: v.data for k, v in model.named_params().items()}
        live.update({k: v.data for k, v in disc.named_params().items()})
        frozen_after = {
            "backbone": hash_tensors(live, "backbone."),
            "discriminator": hash_tensors(live, "disc."),
        }
        if frozen_after != frozen_before:
            raise PipelineError("frozen stage-1/2 parameters changed during stage 3")
        _save_stage(run_dir, cfg, "experts", bank=bank, prev=ckpt,
                    frozen=frozen_before)
        dev = training.evaluate_loss(
            model, corpora["dev"].pairs, cfg.batch_size, expert_bank=bank,
            assign_fn=training.make_argmax_assign(model, disc, cfg.model.num_experts))
        return {"steps": len(trainer.history), "diverged": trainer.diverged,
                "dev_loss": dev}


# -- inference / evaluation ----------------------------------------------

def _route_index(model, disc, src_ids):
    from .model import pad_batch as _pb
    batch = _pb([(src_ids, [0])], model.config.max_len)
    scores = training._score_batch(model, disc, batch)
    return int(scores[0].argmax()), scores[0]


def translate_ids(model, disc, bank, src_ids, beam_size):
    expert_index = None
    if bank is not None and disc is not None:
        expert_index, _ = _route_index(model, disc, src_ids)
    hyps = beam_decode(model, src_ids, beam_size=beam_size,
                       expert_bank=bank, expert_index=expert_index)
    return hyps[0]


def cmd_translate(cfg, input_lines):
    run_dir = prepare_run(cfg)
    ckpt, cfg_saved, model, disc, bank = load_run(run_dir, require="backbone")
    corpora = get_corpora(cfg_saved, run_dir)
    src_vocab = corpora["train"].src_vocab
    tgt_vocab = corpora["train"].tgt_vocab
    out = []
    for line in input_lines:
        ids = src_vocab.encode(line.strip())
        if not ids:
            raise PipelineError("cannot translate an empty sentence")
        _, hyp_ids, _ = translate_ids(model, disc, bank, ids, cfg.beam_size)
        out.append(tgt_vocab.decode(hyp_ids))
    return out


def _bleu_on(model, disc, bank, pairs, tgt_vocab, beam_size):
    hyps, refs = [], []
    for src, tgt, _ in pairs:
        _, hyp_ids, _ = translate_ids(model, disc, bank, src, beam_size)
        hyps.append(tgt_vocab.decode(hyp_ids).split())
        refs.append(tgt_vocab.decode(tgt).split())
    return metrics_mod.bleu4(hyps, refs)


def classify_pairs(model, disc, pairs, batch_size=64):
    feats = encode_features(model, pairs, batch_size)
    from .tensor import Tensor, no_grad
    with no_grad():
        scores = disc.score(Tensor(feats)).data
    return scores.argmax(axis=1), scores


def cmd_evaluate(cfg):
    run_dir = prepare_run(cfg)
    ckpt, cfg_saved, model, disc, bank = load_run(run_dir, require="backbone")
    corpora = get_corpora(cfg_saved, run_dir)
    test = corpora.get("test")
    if test is None:
        raise PipelineError("no test split available")
    tgt_vocab = test.tgt_vocab
    assign_fn = (training.make_argmax_assign(model, disc, cfg_saved.model.num_experts)
                 if bank is not None and disc is not None else None)

    per_domain = {}
    tags = sorted({t for _, _, t in test.pairs if t is not None})
    for tag in tags:
        dom_pairs = [p for p in test.pairs if p[2] == tag]
        loss = training.evaluate_loss(model, dom_pairs, cfg_saved.batch_size,
                                      expert_bank=bank, assign_fn=assign_fn)
        bleu = _bleu_on(model, disc, bank, dom_pairs, tgt_vocab, cfg_saved.beam_size)
        per_domain[tag] = {"loss": round(loss, 6), "bleu": round(bleu, 4)}

    rnd = None
    if "rnd" in corpora:
        rnd_pairs = corpora["rnd"].pairs
        rnd = {"loss": round(training.evaluate_loss(
                   model, rnd_pairs, cfg_saved.batch_size,
                   expert_bank=bank, assign_fn=assign_fn), 6),
               "bleu": round(_bleu_on(model, disc, bank, rnd_pairs, tgt_vocab,
                                      cfg_saved.beam_size), 4)}

    purity = nmi_score = None
    if disc is not None:
        labeled = [p for p in test.pairs if p[2] is not None]
        cats, _ = classify_pairs(model, disc, labeled, cfg_saved.batch_size)
        stats = metrics_mod.routing_stats(labeled, cats, cfg_saved.model.num_experts)
        purity = round(stats.purity(), 6)
        nmi_score = round(metrics_mod.nmi([p[2] for p in labeled], cats), 6)

    report = metrics_mod.metrics_report(per_domain, rnd, purity, nmi_score)
    metrics_mod.dump_json(report, run_dir / "metrics.json")
    return report


def cmd_route_stats(cfg):
    run_dir = prepare_run(cfg)
    ckpt, cfg_saved, model, disc, _ = load_run(run_dir, require="discriminator")
    corpora = get_corpora(cfg_saved, run_dir)
    test = corpora["test"]
    labeled = [p for p in test.pairs if p[2] is not None]
    cats, _ = classify_pairs(model, disc, labeled, cfg_saved.batch_size)
    stats = metrics_mod.routing_stats(labeled, cats, cfg_saved.model.num_experts)
    (run_dir / "routing_stats.csv").write_text(stats.to_csv())
    obj = stats.to_json_obj()
    obj["PUR"] = stats.purity()
    obj["NMI"] = metrics_mod.nmi([p[2] for p in labeled], cats)
    metrics_mod.dump_json(obj, run_dir / "routing_stats.json")
    return obj


def run_full_pipeline(cfg):
    """All four stages plus evaluation, in order, in one run directory."""
    cmd_train_backbone(cfg)
    cmd_build_domains(cfg)
    cmd_train_discriminator(cfg)
    cmd_train_experts(cfg)
    return cmd_evaluate(cfg)


def cmd_sweep(cfg):
    """Expand list-valued sweep parameters into independent runs.

    cfg.sweep maps config field names (model or run level) to value lists;
    the cross product is executed and one metrics row emitted per setting.
    """
    if not cfg.sweep:
        raise PipelineError("sweep requires a non-empty sweep section in the config")
    import itertools
    keys = sorted(cfg.sweep)
    base_dir = prepare_run(cfg)
    rows = []
    for combo in itertools.product(*(cfg.sweep[k] for k in keys)):
        sub = config_from_dict(cfg.to_dict())
        sub.sweep = {}
        setting = dict(zip(keys, combo))
        for key, value in setting.items():
            if hasattr(sub.model, key):
                setattr(sub.model, key, value)
            elif hasattr(sub, key):
                setattr(sub, key, value)
            else:
                raise PipelineError(f"unknown sweep parameter {key!r}")
        tag = "_".join(f"{k}={v}" for k, v in setting.items())
        sub.out_dir = str(Path(base_dir) / f"sweep_{tag}")
        report = run_full_pipeline(sub)
        row = {"setting": setting, "metrics": report}
        rows.append(row)
    metrics_mod.dump_json(rows, Path(base_dir) / "sweep_results.json")
    with open(Path(base_dir) / "sweep_results.csv", "w") as f:
        f.write(",".join(keys) + ",avg_loss,avg_bleu,rnd_bleu,pur,nmi\n")
        for row in rows:
            m = row["metrics"]
            avg = m.get("AVG", {})
            rnd = m.get("RND") or {}
            f.write(",".join(str(row["setting"][k]) for k in keys)
                    + f",{avg.get('loss', '')},{avg.get('bleu', '')}"
                    + f",{rnd.get('bleu', '')},{m.get('PUR', '')},{m.get('NMI', '')}\n")
    return rows
