"""Article storage, embeddings and exact top-k retrieval."""

from __future__ import annotations

import hashlib
import logging
import random
import re
from pathlib import Path
from typing import Dict, Iterator, Mapping, Optional, Protocol, Sequence

import numpy as np
import openai

from medfact.core.errors import DimMismatch, EmptyText, IoError, SchemaError, TransportError
from medfact.core.jsonl import iter_jsonl
from medfact.schemas.domain import Article

logger = logging.getLogger(__name__)

MFEI_MAGIC = b"MFEI"
_MFEI_HEADER = np.dtype([("magic", "S4"), ("dim", "<u4"), ("count", "<u8")])
_TOKEN = re.compile(r"[^\W_]+")


class ArticleStore:
    """Immutable pmid -> Article mapping."""

    def __init__(self, articles: Mapping[int, Article], skipped: int = 0):
        self._articles: Dict[int, Article] = dict(articles)
        self.skipped = skipped

    @property
    def articles(self) -> Mapping[int, Article]:
        return self._articles

    @property
    def count(self) -> int:
        return len(self._articles)

    def __len__(self) -> int:
        return len(self._articles)

    def __contains__(self, pmid: object) -> bool:
        return pmid in self._articles

    def __iter__(self) -> Iterator[Article]:
        return iter(self._articles.values())

    def get(self, pmid: int) -> Optional[Article]:
        return self._articles.get(pmid)

    def pmids(self) -> list[int]:
        return sorted(self._articles)

    def sample(self, size: int, seed: int) -> "ArticleStore":
        """Seeded uniform sample of `size` articles (all of them if the store is smaller)."""

        pmids = self.pmids()
        if size >= len(pmids):
            return self
        chosen = sorted(random.Random(f"{seed}:sample").sample(pmids, size))
        return ArticleStore({pmid: self._articles[pmid] for pmid in chosen}, self.skipped)


def load_articles(path: str | Path) -> ArticleStore:
    """Load a JSONL file of {pmid, title, abstract}; empty titles or abstracts are skipped."""

    articles: Dict[int, Article] = {}
    seen: set[int] = set()
    skipped = 0
    for lineno, record in iter_jsonl(path):
        if not isinstance(record, dict):
            raise SchemaError(f"{path}:{lineno}: expected an object")
        missing = [key for key in ("pmid", "title", "abstract") if key not in record]
        if missing:
            raise SchemaError(f"{path}:{lineno}: missing {', '.join(missing)}")
        try:
            pmid = int(record["pmid"])
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}:{lineno}: pmid {record['pmid']!r} is not an integer") from exc
        if pmid <= 0:
            raise SchemaError(f"{path}:{lineno}: pmid must be positive")
        if pmid in seen:
            raise SchemaError(f"{path}:{lineno}: duplicate pmid {pmid}")
        seen.add(pmid)

        title = str(record["title"] or "").strip()
        abstract = str(record["abstract"] or "").strip()
        if not title or not abstract:
            skipped += 1
            logger.debug(f"Skipping pmid {pmid}: empty title or abstract")
            continue
        articles[pmid] = Article(pmid=pmid, title=title, abstract=abstract)

    logger.info(
        f"Loaded {len(articles)} articles from {path}",
        extra={"skipped": skipped},
    )
    return ArticleStore(articles, skipped)


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class LexicalHashEmbedder:
    """Hashed bag-of-words: lowercase alphanumeric tokens counted into `dim` buckets, L2-normalised."""

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def bucket(self, token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def embed(self, text: str) -> np.ndarray:
        tokens = _TOKEN.findall(text.lower())
        if not tokens:
            raise EmptyText("text has no alphanumeric tokens")
        vector = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            vector[self.bucket(token)] += 1.0
        return vector / np.linalg.norm(vector)


class RemoteEmbedder:
    """Embeddings from an OpenAI-compatible /embeddings endpoint."""

    def __init__(self, client: openai.OpenAI, model: str, dim: int):
        self.client = client
        self.model = model
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmptyText("cannot embed empty text")
        try:
            result = self.client.embeddings.create(model=self.model, input=text)
        except openai.APIError as exc:
            raise TransportError(f"embedding request failed: {exc}") from exc
        vector = np.asarray(result.data[0].embedding, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DimMismatch(f"endpoint returned dim {vector.shape[0]}, expected {self.dim}")
        return vector


def embed(text: str, backend: Embedder) -> np.ndarray:
    return backend.embed(text)


class EmbeddingIndex:
    """Row-normalised embedding matrix keyed by pmid."""

    def __init__(self, pmids: Sequence[int], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(pmids):
            raise DimMismatch("expected one vector per pmid")
        if len(set(pmids)) != len(pmids):
            raise SchemaError("duplicate pmid in embedding index")
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        self.pmids = np.asarray(pmids, dtype=np.int64)
        self.matrix = np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)
        self.dim = vectors.shape[1]

    @classmethod
    def from_vectors(cls, vectors: Mapping[int, np.ndarray], dim: Optional[int] = None) -> "EmbeddingIndex":
        pmids = sorted(vectors)
        if not pmids:
            return cls([], np.zeros((0, dim or 1)))
        rows = [np.asarray(vectors[p], dtype=np.float64) for p in pmids]
        dims = {row.shape for row in rows}
        if len(dims) != 1 or (dim is not None and dims != {(dim,)}):
            raise DimMismatch(f"vectors have inconsistent dimensions: {sorted(dims)}")
        return cls(pmids, np.vstack(rows))

    def __len__(self) -> int:
        return len(self.pmids)


def build_index(store: ArticleStore, embedder: Embedder) -> EmbeddingIndex:
    """Embed every article's title and abstract."""

    vectors = {a.pmid: embedder.embed(f"{a.title} {a.abstract}") for a in store}
    return EmbeddingIndex.from_vectors(vectors, embedder.dim)


def top_k(index: EmbeddingIndex, query: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Exact scan: highest cosine first, ties broken by ascending pmid."""

    if k < 1:
        raise ValueError("k must be at least 1")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dim,):
        raise DimMismatch(f"query dim {query.shape} does not match index dim {index.dim}")
    if len(index) == 0:
        return []
    norm = np.linalg.norm(query)
    if norm > 0:
        query = query / norm
    scores = index.matrix @ query
    order = np.lexsort((index.pmids, -scores))[:k]
    return [(int(index.pmids[i]), float(scores[i])) for i in order]


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("pmid", "<u8"), ("vector", "<f4", (dim,))])


def save_embeddings(path: str | Path, index: EmbeddingIndex) -> None:
    header = np.array([(MFEI_MAGIC, index.dim, len(index))], dtype=_MFEI_HEADER)
    records = np.zeros(len(index), dtype=_record_dtype(index.dim))
    records["pmid"] = index.pmids
    records["vector"] = index.matrix
    try:
        with open(path, "wb") as f:
            f.write(header.tobytes())
            f.write(records.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_embeddings(path: str | Path, store: Optional[ArticleStore] = None) -> EmbeddingIndex:
    """Read an MFEI file; vectors whose pmid is not in `store` are skipped."""

    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(data) < _MFEI_HEADER.itemsize:
        raise SchemaError(f"{path}: file too short for an MFEI header")
    header = np.frombuffer(data, dtype=_MFEI_HEADER, count=1)[0]
    if bytes(header["magic"]) != MFEI_MAGIC:
        raise SchemaError(f"{path}: bad magic {bytes(header['magic'])!r}")
    dim, count = int(header["dim"]), int(header["count"])
    if dim < 1:
        raise SchemaError(f"{path}: dimension must be positive")
    dtype = _record_dtype(dim)
    expected = _MFEI_HEADER.itemsize + count * dtype.itemsize
    if len(data) != expected:
        raise SchemaError(f"{path}: expected {expected} bytes for {count} vectors, found {len(data)}")

    records = np.frombuffer(data, dtype=dtype, count=count, offset=_MFEI_HEADER.itemsize)
    pmids = [int(p) for p in records["pmid"]]
    keep = [i for i, p in enumerate(pmids) if store is None or p in store]
    unknown = len(pmids) - len(keep)
    if unknown:
        logger.warning(f"Skipped {unknown} vectors whose pmid is not in the article store")
    vectors = records["vector"][keep].astype(np.float64)
    return EmbeddingIndex([pmids[i] for i in keep], vectors.reshape(len(keep), dim))
