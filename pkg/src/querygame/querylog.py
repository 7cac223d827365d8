"""Query-log replay format.

An ordered record of the queries a detector observed, with per-query
metadata, so verdict streams can be re-derived offline. Serialized as a
compressed .npz with parallel arrays.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

QUERY_KINDS = ("benign", "adversarial")


@dataclass(frozen=True)
class QueryRecord:
    trial_id: int
    round_index: int
    kind: str
    image: np.ndarray

    def __post_init__(self):
        if self.kind not in QUERY_KINDS:
            raise ValueError(f"kind must be one of {QUERY_KINDS}, got {self.kind!r}")


def save_query_log(path, records: List[QueryRecord]) -> None:
    np.savez_compressed(
        path,
        images=np.stack([r.image for r in records]).astype(np.float32),
        trial_ids=np.array([r.trial_id for r in records], dtype=np.int64),
        round_indexes=np.array([r.round_index for r in records], dtype=np.int64),
        kinds=np.array([r.kind for r in records]),
    )


def load_query_log(path) -> List[QueryRecord]:
    payload = np.load(path, allow_pickle=False)
    return [
        QueryRecord(int(t), int(r), str(k), image)
        for t, r, k, image in zip(payload["trial_ids"], payload["round_indexes"],
                                  payload["kinds"], payload["images"])
    ]


def replay_verdicts(detector, records: List[QueryRecord]):
    """Feed a logged stream through a detector, returning one verdict per query."""
    return [detector.check(record.image) for record in records]
