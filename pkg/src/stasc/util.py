"""Small shared helpers: stable hashing, seed derivation, canonical JSON, ordered fan-out."""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def sha_hex(text: str) -> str:
    """Hex SHA-256 of UTF-8 text; used to content-address prompts."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def derive_seed(run_seed: int, *parts: Any) -> int:
    """Derive a per-request seed from the run seed and a stable label tuple.

    Stable across processes (never uses Python's randomized hash), so
    resumed runs issue byte-identical requests.
    """
    label = f"{run_seed}|" + "|".join(str(p) for p in parts)
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big") % (2**31)


def hash01(*parts: Any) -> float:
    """Deterministic pseudo-uniform float in [0, 1) from a label tuple."""
    label = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / float(2**64)


def canonical_json(obj: Any) -> str:
    """Compact, key-sorted JSON; the byte format pinned by golden files."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def jsonl_bytes(rows: Iterable[dict]) -> bytes:
    return "".join(canonical_json(r) + "\n" for r in rows).encode("utf-8")


def parallel_map_ordered(
    fn: Callable[[T], R], inputs: Sequence[T], parallelism: int
) -> list[R]:
    """Run fn over inputs with bounded parallelism, returning results in input order.

    Exceptions propagate from the position of the failing input, matching
    sequential semantics; callers that want per-item failure isolation wrap fn.
    """
    if parallelism <= 1 or len(inputs) <= 1:
        return [fn(x) for x in inputs]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(fn, x) for x in inputs]
        return [f.result() for f in futures]
