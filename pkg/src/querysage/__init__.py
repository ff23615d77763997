"""querysage: approximate query processing that learns from past answers.

The engine answers SQL aggregate queries from a uniform sample (raw
answer + error), stores every answered snippet in a synopsis, fits a
maximum-entropy Gaussian model over the stored answers, and uses that
model to return improved answers whose error bounds are provably never
worse than the raw ones.
"""

__version__ = "0.1.0"
