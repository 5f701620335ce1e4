"""conceptlink: link clinical data-dictionary variables to vocabulary concepts.

The package is organized around one pass of the mapping pipeline:

- ``vocab``: concept store, synonym expansion, exact surface lookup
- ``embeddings`` and ``retrieval``: hybrid dense/sparse search with
  reciprocal-rank fusion
- ``decomposer``: LLM decomposition of variables into linkable components
- ``filtering``: expert routing rules and the similarity filter
- ``reranker``: self-consistency scoring and candidate selection
- ``reservoir``: judged, human-reviewed mapping cache with exports
- ``pipeline``: orchestration, batch mapping, serialization
- ``metrics``: ranking and decomposition evaluation
- ``service`` and ``cli``: the HTTP API and its thin command-line client
"""

__version__ = "0.1.0"
