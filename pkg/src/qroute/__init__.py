"""Question routing for text-poor Q&A communities.

Users, questions and crops form a typed graph; metapath random walks feed a
skip-gram model whose node vectors drive a logistic answerer scorer.
"""

__version__ = "0.1.0"
