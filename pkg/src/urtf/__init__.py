"""Meta-pretraining toolkit for universal information extraction.

Submodules:

* :mod:`urtf.sel` - the bracketed extraction language (parse, linearize, validate)
* :mod:`urtf.prompting` - schema prompts, model inputs and span corruption
* :mod:`urtf.metrics` - span-offset micro-F1 for five extraction tasks
* :mod:`urtf.pairing` - support/query pairing of a corpus in two reads
* :mod:`urtf.autodiff` - reverse-mode autodiff with gradients of gradients
* :mod:`urtf.metatrain` - toy model, inner/outer loop training and inference
* :mod:`urtf.synth` - synthetic task distributions and the JSONL formats
* :mod:`urtf.cli` - the ``urtf`` command
"""

from .sel import Schema, SelRecord, SpotGroup, AssoGroup, parse_sel, linearize_sel

__version__ = "0.1.0"

__all__ = ["Schema", "SelRecord", "SpotGroup", "AssoGroup", "parse_sel", "linearize_sel", "__version__"]
