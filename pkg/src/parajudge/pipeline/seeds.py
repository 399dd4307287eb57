"""Master-seed fan-out.

Every randomized stage receives its own seed derived from the master seed and
a stage label path:

    seed = int.from_bytes(BLAKE2b-8("m=<master>/<label>/<label>..."), "big") & (2**63 - 1)

so stages are reproducible in isolation and independent of one another.
Labels in use: ("pretrain",), ("paraphrase", doc_id), ("paraphrase-online",
doc_id), ("adapter", doc_id), ("online-adapter", doc_id), and
("sample", mode, case_id).
"""

from __future__ import annotations

import hashlib


def stage_seed(master: int, *labels: object) -> int:
    payload = "/".join([f"m={master}", *[str(l) for l in labels]]).encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "big") & (2**63 - 1)
