"""parajudge: parametric retrieval-augmented generation for judgment tasks.

Cases are retrieved with BM25, expanded through constrained rewriting,
encoded into per-document low-rank adapters by next-token training, merged
into a small decoder-only model's feed-forward weights, and evaluated with a
judgment/statute/document metric suite under four operating modes.
"""

__version__ = "0.1.0"
