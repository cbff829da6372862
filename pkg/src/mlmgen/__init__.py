"""Generative inference with masked language models.

A self-contained stack for studying MLMs as generators and rankers:
a numpy-backed autodiff core, a small transformer encoder with
relative-position attention biases, mask-append decoding, extended
pseudo-log-likelihood scoring, and an evaluation harness with a
needle-in-a-haystack length-generalization grid.

Submodules are imported lazily by callers; this top-level module stays
import-light so the CLI can configure thread environment variables
before numpy loads.
"""

__version__ = "0.1.0"
