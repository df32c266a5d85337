"""Context-conditioned character-level query auto-completion.

A character LSTM whose weights adapt to a scene representation through a
low-rank context product, beam-search completion of typed prefixes, and a
multilabel head estimating which object classes a completed query refers
to. Training, evaluation, checkpointing, a CLI, and an HTTP service are
included; everything is numpy with hand-derived gradients.
"""

__version__ = "0.1.0"
