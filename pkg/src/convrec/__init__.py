"""convrec: a unified conversational movie recommender.

One encoder-decoder model whose bidirectional encoder retrieves items from a
knowledge-graph embedding space and whose autoregressive decoder generates
placeholder-bearing responses, trained jointly end to end.
"""

__version__ = "0.1.0"
