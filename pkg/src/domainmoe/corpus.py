"""Synthetic multi-domain parallel corpora and the whitespace tokenizer.

Each domain owns an exclusive source-token pool plus a share of a common
pool (mixing_ratio controls the blend: 0 = vocabulary-disjoint domains,
1 = indistinguishable).  "Translation" is a deterministic token map with a
domain-specific shift on shared tokens and a domain-specific reordering,
so domains genuinely need different decoder behavior.  Real parallel
plain-text files can be ingested through the same ParallelCorpus type.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ["<pad>", "<bos>", "<eos>", "<unk>"]

REORDER_RULES = ("identity", "reverse", "rotate", "swap")


class Vocab:
    def __init__(self, tokens):
        self.id_to_token = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, text):
        return [self.token_to_id.get(tok, UNK) for tok in text.split()]

    def decode(self, ids):
        return " ".join(self.id_to_token[i] for i in ids
                        if i not in (PAD, BOS, EOS))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self.id_to_token):
                f.write(f"{i}\t{tok}\n")

    @classmethod
    def load(cls, path):
        tokens = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                _, tok = line.rstrip("\n").split("\t")
                tokens.append(tok)
        v = cls.__new__(cls)
        v.id_to_token = tokens
        v.token_to_id = {t: i for i, t in enumerate(tokens)}
        return v


@dataclass
class DomainSpec:
    tag: str
    exclusive_size: int = 40
    mixing_ratio: float = 0.0
    len_min: int = 5
    len_max: int = 12
    train_count: int = 1000
    dev_count: int = 100
    test_count: int = 100
    reorder: str = "identity"
    shift: int = 0  # shared-token target map offset; distinct per domain

    def validate(self):
        if not 0.0 <= self.mixing_ratio <= 1.0:
            raise ValueError(f"mixing_ratio must be in [0,1], got {self.mixing_ratio}")
        if self.reorder not in REORDER_RULES:
            raise ValueError(f"unknown reorder rule {self.reorder!r}")
        if self.len_min < 1 or self.len_max < self.len_min:
            raise ValueError(f"bad length range [{self.len_min}, {self.len_max}]")
        return self


@dataclass
class ParallelCorpus:
    """Aligned pairs of token-id sequences with optional domain tags.

    Tags are consulted only for anchors and evaluation, never by any
    translation-training code path.
    """
    pairs: list  # (src_ids, tgt_ids, tag-or-None)
    src_vocab: Vocab
    tgt_vocab: Vocab

    def __len__(self):
        return len(self.pairs)

    def tags(self):
        return [tag for _, _, tag in self.pairs]

    def save(self, prefix):
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        with open(f"{prefix}.src", "w", encoding="utf-8") as fs, \
             open(f"{prefix}.tgt", "w", encoding="utf-8") as ft:
            for src, tgt, _ in self.pairs:
                fs.write(self.src_vocab.decode(src) + "\n")
                ft.write(self.tgt_vocab.decode(tgt) + "\n")
        if any(tag is not None for _, _, tag in self.pairs):
            with open(f"{prefix}.dom", "w", encoding="utf-8") as fd:
                for _, _, tag in self.pairs:
                    fd.write((tag if tag is not None else "") + "\n")

    @classmethod
    def load(cls, prefix, src_vocab, tgt_vocab):
        prefix = Path(prefix)
        src_lines = Path(f"{prefix}.src").read_text(encoding="utf-8").splitlines()
        tgt_lines = Path(f"{prefix}.tgt").read_text(encoding="utf-8").splitlines()
        if len(src_lines) != len(tgt_lines):
            raise ValueError(f"{prefix}: .src/.tgt line counts differ")
        dom_path = Path(f"{prefix}.dom")
        tags = dom_path.read_text(encoding="utf-8").splitlines() if dom_path.exists() else None
        pairs = []
        for i, (s, t) in enumerate(zip(src_lines, tgt_lines)):
            tag = tags[i] if tags else None
            pairs.append((src_vocab.encode(s), tgt_vocab.encode(t), tag or None))
        return cls(pairs, src_vocab, tgt_vocab)


def _src_token(spec, exclusive_idx=None, shared_idx=None):
    if shared_idx is not None:
        return f"shr{shared_idx}"
    return f"d{spec.tag}x{exclusive_idx}"


def build_vocabs(specs, shared_vocab_size):
    """Deterministic vocabularies covering every spec's token pools."""
    tags = [s.tag for s in specs]
    if len(set(tags)) != len(tags):
        raise ValueError(f"duplicate domain tags: {tags}")
    src_tokens, tgt_tokens = [], []
    for j in range(shared_vocab_size):
        src_tokens.append(f"shr{j}")
        tgt_tokens.append(f"SHY{j}")
    for spec in specs:
        for j in range(spec.exclusive_size):
            src_tokens.append(f"d{spec.tag}x{j}")
            tgt_tokens.append(f"D{spec.tag}Y{j}")
    return Vocab(src_tokens), Vocab(tgt_tokens)


def apply_rule(spec, src_tokens, shared_vocab_size):
    """The domain's deterministic transduction: token map + reordering."""
    mapped = []
    for tok in src_tokens:
        if tok.startswith("shr"):
            j = int(tok[3:])
            mapped.append(f"SHY{(j + spec.shift) % shared_vocab_size}")
        elif tok.startswith(f"d{spec.tag}x"):
            j = int(tok[len(spec.tag) + 2:])
            mapped.append(f"D{spec.tag}Y{j}")
        else:
            raise ValueError(f"token {tok!r} does not belong to domain {spec.tag!r}")
    if spec.reorder == "reverse":
        mapped = mapped[::-1]
    elif spec.reorder == "rotate":
        mapped = mapped[1:] + mapped[:1]
    elif spec.reorder == "swap":
        for i in range(0, len(mapped) - 1, 2):
            mapped[i], mapped[i + 1] = mapped[i + 1], mapped[i]
    return mapped


def _gen_sentence(spec, shared_vocab_size, rng):
    n = int(rng.integers(spec.len_min, spec.len_max + 1))
    toks = []
    for _ in range(n):
        if shared_vocab_size and rng.uniform() < spec.mixing_ratio:
            toks.append(f"shr{int(rng.integers(0, shared_vocab_size))}")
        else:
            toks.append(f"d{spec.tag}x{int(rng.integers(0, spec.exclusive_size))}")
    return toks


def generate(specs, rng, shared_vocab_size=40, rnd_per_domain=None):
    """Generate {train, dev, test, rnd} corpora, reproducible per seed.

    rnd is a mixed test set with shuffled (deliberately unreliable) tags.
    """
    if not specs:
        raise ValueError("at least one DomainSpec is required")
    for s in specs:
        s.validate()
    src_vocab, tgt_vocab = build_vocabs(specs, shared_vocab_size)

    def make_split(counts_attr, stream_id):
        pairs = []
        for di, spec in enumerate(specs):
            drng = rng.child(stream_id * 1000 + di)
            for _ in range(getattr(spec, counts_attr)):
                src = _gen_sentence(spec, shared_vocab_size, drng)
                tgt = apply_rule(spec, src, shared_vocab_size)
                pairs.append((src_vocab.encode(" ".join(src)),
                              tgt_vocab.encode(" ".join(tgt)), spec.tag))
        return ParallelCorpus(pairs, src_vocab, tgt_vocab)

    train = make_split("train_count", 1)
    dev = make_split("dev_count", 2)
    test = make_split("test_count", 3)

    # RND: per-domain samples from test, order shuffled, tags shuffled
    rnd_rng = rng.child(4)
    rnd_pairs = []
    for spec in specs:
        dom = [p for p in test.pairs if p[2] == spec.tag]
        take = len(dom) if rnd_per_domain is None else min(rnd_per_domain, len(dom))
        idx = rnd_rng.sample_without_replacement(len(dom), take)
        rnd_pairs.extend(dom[i] for i in idx)
    order = rnd_rng.permutation(len(rnd_pairs))
    tag_order = rnd_rng.permutation(len(rnd_pairs))
    shuffled_tags = [rnd_pairs[i][2] for i in tag_order]
    rnd = ParallelCorpus(
        [(rnd_pairs[i][0], rnd_pairs[i][1], shuffled_tags[j])
         for j, i in enumerate(order)],
        src_vocab, tgt_vocab)

    return {"train": train, "dev": dev, "test": test, "rnd": rnd}


def specs_from_dict(data):
    """Build DomainSpec list (+ shared vocab size) from a generator spec dict."""
    shared = int(data.get("shared_vocab_size", 40))
    specs = [DomainSpec(**d).validate() for d in data["domains"]]
    return specs, shared


def save_corpus_set(corpora, out_dir, generator_spec=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpora["train"].src_vocab.save(out / "vocab.src")
    corpora["train"].tgt_vocab.save(out / "vocab.tgt")
    for split, corpus in corpora.items():
        corpus.save(out / split)
    if generator_spec is not None:
        (out / "generator_spec.json").write_text(json.dumps(generator_spec, indent=2))


def load_corpus_set(corpus_dir):
    d = Path(corpus_dir)
    src_vocab = Vocab.load(d / "vocab.src")
    tgt_vocab = Vocab.load(d / "vocab.tgt")
    out = {}
    for split in ("train", "dev", "test", "rnd"):
        if (d / f"{split}.src").exists():
            out[split] = ParallelCorpus.load(d / split, src_vocab, tgt_vocab)
    if "train" not in out:
        raise FileNotFoundError(f"no train split under {corpus_dir}")
    return out
