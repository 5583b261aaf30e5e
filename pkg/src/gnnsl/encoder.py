"""The vanilla tagger: embeddings, a bidirectional tanh RNN and an MLP softmax head.

The RNN output at each position is the token representation that keys the
datastore; the MLP head turns it into the vanilla label distribution.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint
from . import numcore as nc
from .corpus import LabelSet, Vocab
from .optim import SGD

log = logging.getLogger(__name__)

MAGIC = b"GSLE"


@dataclass
class EncoderConfig:
    d: int = 64
    d_emb: int = 32
    lr: float = 0.1
    epochs: int = 30
    seed: int = 0
    dropout: float = 0.2
    batch_size: int = 16
    heads: int = 8  # the GNN head count d must divide

    def __post_init__(self):
        if self.d <= 0 or self.d % 2:
            raise ValueError(f"d must be a positive even number, got {self.d}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by the head count {self.heads}")


PARAM_NAMES = ("emb", "f_wx", "f_wh", "f_b", "b_wx", "b_wh", "b_b", "w1", "b1", "w2", "b2")


class Encoder:
    """Parameters plus the vocabulary and label set they were trained on."""

    def __init__(self, config, vocab, labels, params=None):
        self.config = config
        self.vocab = vocab
        self.labels = labels
        self.params = params if params is not None else self._init_params()

    def _init_params(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        h = cfg.d // 2
        n_y = len(self.labels)

        def u(shape, fan_in):
            b = 1.0 / np.sqrt(fan_in)
            return nc.Tensor(rng.uniform(-b, b, size=shape), requires_grad=True)

        p = {"emb": nc.Tensor(rng.uniform(-0.1, 0.1, size=(len(self.vocab), cfg.d_emb)), requires_grad=True)}
        for side in ("f", "b"):
            p[f"{side}_wx"] = u((cfg.d_emb, h), cfg.d_emb)
            p[f"{side}_wh"] = u((h, h), h)
            p[f"{side}_b"] = nc.Tensor(np.zeros(h), requires_grad=True)
        p["w1"] = u((cfg.d, cfg.d), cfg.d)
        p["b1"] = nc.Tensor(np.zeros(cfg.d), requires_grad=True)
        p["w2"] = u((cfg.d, n_y), cfg.d)
        p["b2"] = nc.Tensor(np.zeros(n_y), requires_grad=True)
        return {k: p[k] for k in PARAM_NAMES}

    @property
    def d(self):
        return self.config.d

    def parameters(self):
        return [self.params[k] for k in PARAM_NAMES]

    # ------------------------------------------------------------ forward

    def token_ids(self, sentences):
        ids = np.array([self.vocab.encode(s.tokens) for s in sentences], dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= len(self.vocab)):
            raise IndexError("token id out of range for the embedding table")
        return ids

    def forward_batch(self, ids, rng=None):
        """Representations (B, n, d) for a batch of equal-length id rows."""
        p = self.params
        x = nc.embedding_lookup(p["emb"], ids)
        if rng is not None:
            x = nc.dropout(x, self.config.dropout, rng)
        bsz, n = ids.shape
        h = self.config.d // 2
        outs = {}
        for side, steps in (("f", range(n)), ("b", range(n - 1, -1, -1))):
            state = nc.Tensor(np.zeros((bsz, h)))
            seq = [None] * n
            for t in steps:
                pre = x[:, t, :] @ p[f"{side}_wx"] + state @ p[f"{side}_wh"] + p[f"{side}_b"]
                state = nc.tanh(pre)
                seq[t] = nc.reshape(state, (bsz, 1, h))
            outs[side] = nc.concat(seq, axis=1)
        return nc.concat([outs["f"], outs["b"]], axis=2)

    def head_logits(self, reps):
        p = self.params
        return nc.relu(reps @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"]

    def represent(self, sentences):
        """Numpy representations, one (n_i, d) array per sentence, no dropout."""
        out = [None] * len(sentences)
        with nc.no_grad():
            for idx in _length_buckets(sentences):
                ids = self.token_ids([sentences[i] for i in idx])
                reps = self.forward_batch(ids).data
                for row, i in enumerate(idx):
                    out[i] = reps[row]
        return out

    # ----------------------------------------------------------- persistence

    def to_bytes(self):
        cfg = {
            "encoder": asdict(self.config),
            "vocab": self.vocab.itos,
            "labels": list(self.labels.names),
            "scheme": self.labels.scheme.value,
        }
        return checkpoint.dump_tensors(MAGIC, cfg, {k: self.params[k].data for k in PARAM_NAMES})

    @classmethod
    def from_bytes(cls, buf):
        cfg, tensors = checkpoint.load_tensors(buf, MAGIC)
        vocab = Vocab(cfg["vocab"][2:])
        labels = LabelSet(tuple(cfg["labels"]), cfg["scheme"])
        missing = set(PARAM_NAMES) - set(tensors)
        if missing:
            raise checkpoint.FormatError(f"checkpoint lacks tensors {sorted(missing)}")
        params = {k: nc.Tensor(tensors[k], requires_grad=True) for k in PARAM_NAMES}
        return cls(EncoderConfig(**cfg["encoder"]), vocab, labels, params)

    def digest(self):
        return checkpoint.digest(self.to_bytes())

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _length_buckets(sentences, batch_size=None):
    groups = defaultdict(list)
    for i, s in enumerate(sentences):
        groups[len(s)].append(i)
    out = []
    for n in sorted(groups):
        idx = groups[n]
        step = batch_size or len(idx)
        out.extend(idx[j : j + step] for j in range(0, len(idx), step))
    return out


def encode(encoder, sentence):
    """One width-d representation tensor per token of ``sentence``."""
    reps = encoder.represent([sentence])[0]
    return [nc.Tensor(r) for r in reps]


def vanilla_predict(encoder, h):
    """Label distribution softmax(MLP(h)) for one representation or a stack of them."""
    h = nc.as_tensor(h)
    if h.shape[-1] != encoder.d:
        raise nc.DimensionError(f"vanilla_predict: width {h.shape[-1]} != d={encoder.d}")
    with nc.no_grad():
        return nc.softmax(encoder.head_logits(h)).data


def batch_loss(encoder, sentences, rng=None):
    ids = encoder.token_ids(sentences)
    reps = encoder.forward_batch(ids, rng)
    logits = encoder.head_logits(reps)
    n_y = len(encoder.labels)
    gold = np.array([s.labels for s in sentences], dtype=np.int64).reshape(-1)
    return nc.cross_entropy(nc.reshape(logits, (-1, n_y)), gold)


def dataset_loss(encoder, sentences):
    """Token-weighted mean cross-entropy over ``sentences`` without dropout."""
    total, count = 0.0, 0
    with nc.no_grad():
        for idx in _length_buckets(sentences):
            batch = [sentences[i] for i in idx]
            n = sum(len(s) for s in batch)
            total += batch_loss(encoder, batch).item() * n
            count += n
    return total / count


def token_accuracy(encoder, sentences):
    reps = encoder.represent(sentences)
    hit = tot = 0
    for s, r in zip(sentences, reps):
        pred = vanilla_predict(encoder, r).argmax(axis=-1)
        hit += int((pred == np.asarray(s.labels)).sum())
        tot += len(s)
    return hit / tot


def train_vanilla(dataset, labels, config, dev=None, vocab=None, init=None):
    """Train the vanilla tagger with token cross-entropy and clipped SGD.

    ``init`` optionally supplies starting parameters (an Encoder); otherwise
    they are drawn from ``config.seed``.
    """
    sentences = list(dataset)
    if not sentences:
        raise ValueError("train_vanilla: empty dataset")
    vocab = vocab or Vocab.build(sentences)
    enc = init or Encoder(config, vocab, labels)
    opt = SGD(enc.parameters(), lr=config.lr, clip=5.0)
    rng = np.random.default_rng(config.seed + 1)
    batches = _length_buckets(sentences, config.batch_size)
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for b in rng.permutation(len(batches)):
            batch = [sentences[i] for i in batches[b]]
            opt.zero_grad()
            loss = batch_loss(enc, batch, rng)
            nc.backward(loss)
            opt.step()
            n = sum(len(s) for s in batch)
            total += loss.item() * n
            count += n
        msg = f"epoch {epoch + 1}/{config.epochs} train_loss={total / count:.4f}"
        if dev is not None and len(dev):
            msg += f" dev_acc={token_accuracy(enc, list(dev)):.4f}"
        log.info(msg)
    return enc
