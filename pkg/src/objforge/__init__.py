"""objforge: a small self-supervised objective toolkit.

Ingest text corpora, train subword tokenizers, corrupt token streams,
generate structural pair/context examples, and train a small transformer
encoder on any mix of the implemented objectives.
"""

from __future__ import annotations

__version__ = "0.1.0"
