"""Token-level datastore with exact squared-L2 nearest-neighbor search.

Records are kept sorted by provenance (sentence id, token index), so ranking
by (distance, record index) is the same as breaking distance ties by
provenance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .checkpoint import FormatError
from .corpus import LabelSet
from .numcore import DimensionError

MAGIC = b"GSLD"
VERSION = 1
_QUERY_CHUNK_CELLS = 1 << 22


class EmptyStoreError(LookupError):
    pass


class ConsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    key: np.ndarray
    label_id: int
    sentence_id: int
    token_index: int


class Datastore:
    def __init__(self, keys, label_ids, sentence_ids, token_indices, labels, digest=b"\0" * 32):
        keys = np.asarray(keys, dtype=np.float32)
        if keys.ndim != 2:
            raise DimensionError(f"keys must be 2-D, got shape {keys.shape}")
        sids = np.asarray(sentence_ids, dtype=np.int64)
        tids = np.asarray(token_indices, dtype=np.int64)
        order = np.lexsort((tids, sids))
        self.keys = np.ascontiguousarray(keys[order])
        self.label_ids = np.asarray(label_ids, dtype=np.int64)[order]
        self.sentence_ids = sids[order]
        self.token_indices = tids[order]
        self.labels = labels
        self.digest = bytes(digest)
        if len(self.digest) != 32:
            raise ValueError("checkpoint digest must be 32 bytes")
        if not np.isfinite(self.keys).all():
            raise ValueError("datastore keys must be finite")
        n = len(self.label_ids)
        if n > 1:
            dup = (np.diff(self.sentence_ids) == 0) & (np.diff(self.token_indices) == 0)
            if dup.any():
                raise ValueError("duplicate (sentence_id, token_index) provenance")
        self._keys_t = None
        self._bounds = None
        # sentence id -> (first record index, length)
        starts = np.flatnonzero(np.r_[True, np.diff(self.sentence_ids) != 0]) if n else []
        self._sentences = {}
        for i, s in enumerate(starts):
            end = starts[i + 1] if i + 1 < len(starts) else n
            self._sentences[int(self.sentence_ids[s])] = (int(s), int(end - s))

    @property
    def d(self):
        return self.keys.shape[1]

    def __len__(self):
        return len(self.label_ids)

    def __eq__(self, other):
        if not isinstance(other, Datastore):
            return NotImplemented
        return (
            self.keys.shape == other.keys.shape
            and self.keys.tobytes() == other.keys.tobytes()
            and np.array_equal(self.label_ids, other.label_ids)
            and np.array_equal(self.sentence_ids, other.sentence_ids)
            and np.array_equal(self.token_indices, other.token_indices)
            and self.labels == other.labels
            and self.digest == other.digest
        )

    def record(self, i):
        return Record(self.keys[i], int(self.label_ids[i]), int(self.sentence_ids[i]), int(self.token_indices[i]))

    @property
    def records(self):
        return [self.record(i) for i in range(len(self))]

    def index_of(self, sentence_id, token_index):
        start, length = self.sentence_span(sentence_id)
        if not 0 <= token_index < length:
            raise ConsistencyError(f"no record for sentence {sentence_id} token {token_index}")
        return start + token_index

    def sentence_span(self, sentence_id):
        """(first record index, token count) of a stored sentence."""
        try:
            return self._sentences[int(sentence_id)]
        except KeyError:
            raise ConsistencyError(f"sentence {sentence_id} is not in the datastore") from None

    def sentence_bounds(self):
        """Per record: (index of its sentence's first record, sentence length)."""
        if self._bounds is None:
            starts = np.zeros(len(self), dtype=np.int64)
            lengths = np.zeros(len(self), dtype=np.int64)
            for s, n in self._sentences.values():
                starts[s : s + n] = s
                lengths[s : s + n] = n
            self._bounds = (starts, lengths)
        return self._bounds

    def keys_t(self):
        if self._keys_t is None:
            self._keys_t = np.ascontiguousarray(self.keys.T, dtype=np.float64)
        return self._keys_t

    def check_encoder(self, encoder):
        if encoder.d != self.d:
            raise FormatError(f"encoder width {encoder.d} does not match datastore width {self.d}")
        if encoder.digest() != self.digest:
            raise ConsistencyError("datastore was built from a different encoder checkpoint")

    # ------------------------------------------------------------------ I/O

    def to_bytes(self):
        out = bytearray()
        out += MAGIC
        out += struct.pack("<IIQI", VERSION, self.d, len(self), len(self.labels))
        for name in self.labels.names:
            nb = name.encode("utf-8")
            out += struct.pack("<H", len(nb)) + nb
        out += self.digest
        rec = np.empty(len(self), dtype=_record_dtype(self.d))
        rec["sid"] = self.sentence_ids
        rec["tid"] = self.token_indices
        rec["label"] = self.label_ids
        rec["key"] = self.keys
        out += rec.tobytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, buf, scheme=None):
        if len(buf) < 4 or buf[:4] != MAGIC:
            raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}", 0)
        pos = 4
        if len(buf) < pos + 20:
            raise FormatError("truncated header", pos)
        version, d, count, n_labels = struct.unpack_from("<IIQI", buf, pos)
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", 4)
        pos += 20
        names = []
        for _ in range(n_labels):
            if len(buf) < pos + 2:
                raise FormatError("truncated label table", pos)
            (ln,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            if len(buf) < pos + ln:
                raise FormatError("truncated label name", pos)
            names.append(bytes(buf[pos : pos + ln]).decode("utf-8"))
            pos += ln
        if len(buf) < pos + 32:
            raise FormatError("truncated checkpoint digest", pos)
        digest = bytes(buf[pos : pos + 32])
        pos += 32
        dt = _record_dtype(d)
        need = count * dt.itemsize
        if len(buf) - pos < need:
            got = (len(buf) - pos) // dt.itemsize
            raise FormatError(f"truncated records: expected {count}, found {got}", pos + got * dt.itemsize)
        if len(buf) - pos > need:
            raise FormatError("trailing bytes after last record", pos + need)
        rec = np.frombuffer(buf, dtype=dt, count=count, offset=pos)
        labels = _label_set(names, scheme)
        return cls(rec["key"].reshape(count, d), rec["label"], rec["sid"], rec["tid"], labels, digest)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, scheme=None):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), scheme)


def _label_set(names, scheme=None):
    if scheme is None:
        prefixes = {n.split("-", 1)[0] for n in names if n != "O"}
        if prefixes & {"M", "E", "S"} and prefixes <= {"B", "M", "E", "S"}:
            scheme = "BMES"
        elif prefixes <= {"B", "I"} and all("-" in n for n in names if n != "O"):
            scheme = "BIO"
        else:
            scheme = "PLAIN"
    return LabelSet(tuple(names), scheme)


def _record_dtype(d):
    return np.dtype([("sid", "<u4"), ("tid", "<u4"), ("label", "<u4"), ("key", "<f4", (d,))])


def build(encoder, dataset):
    """One record per training token, keyed by the encoder representation."""
    sentences = list(dataset)
    reps = encoder.represent(sentences)
    keys = np.concatenate(reps, axis=0) if reps else np.zeros((0, encoder.d))
    labels = np.concatenate([np.asarray(s.labels) for s in sentences]) if sentences else []
    sids = np.concatenate([np.full(len(s), s.id) for s in sentences]) if sentences else []
    tids = np.concatenate([np.arange(len(s)) for s in sentences]) if sentences else []
    return Datastore(keys, labels, sids, tids, encoder.labels, encoder.digest())


@dataclass
class NeighborSet:
    store: Datastore
    indices: np.ndarray
    sq_dists: np.ndarray

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        for i, d2 in zip(self.indices, self.sq_dists):
            yield self.store.record(int(i)), float(d2)

    @property
    def label_ids(self):
        return self.store.label_ids[self.indices]

    @property
    def distances(self):
        return np.sqrt(self.sq_dists)


def knn_search(store, queries, k, exclude=None):
    """Batched exact search: (indices, squared distances), each (m, min(k, N)).

    ``exclude`` holds one record index per query (-1 for none). Rows that lose
    a slot to their exclusion are padded with index -1 and distance inf.
    """
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2:
        raise DimensionError(f"queries must be 2-D, got shape {queries.shape}")
    if len(store) == 0:
        raise EmptyStoreError("query against an empty datastore")
    if queries.shape[1] != store.d:
        raise DimensionError(f"query width {queries.shape[1]} != datastore width {store.d}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    m = queries.shape[0]
    if exclude is None:
        exclude = np.full(m, -1, dtype=np.int64)
    exclude = np.asarray(exclude, dtype=np.int64)
    keys_t = store.keys_t()
    chunk = max(1, _QUERY_CHUNK_CELLS // max(1, len(store)))
    idx_parts, d_parts = [], []
    for s in range(0, m, chunk):
        dists = kernels.sq_l2(queries[s : s + chunk], keys_t)
        i, dv = kernels.topk_rows(dists, k, exclude[s : s + chunk])
        idx_parts.append(i)
        d_parts.append(dv)
    if not idx_parts:
        kk = min(k, len(store))
        return np.zeros((0, kk), np.int64), np.zeros((0, kk))
    return np.concatenate(idx_parts), np.concatenate(d_parts)


def knn_query(store, h, k, exclude=None):
    """The k nearest records to ``h`` under squared L2, excluding one provenance."""
    h = np.asarray(getattr(h, "data", h), dtype=np.float64).reshape(1, -1)
    ex = -1
    if exclude is not None:
        sid, tid = exclude
        span = store._sentences.get(int(sid))
        if span is not None and 0 <= tid < span[1]:
            ex = span[0] + int(tid)
    idx, d2 = knn_search(store, h, k, np.array([ex]))
    keep = idx[0] >= 0
    return NeighborSet(store, idx[0][keep], d2[0][keep])
