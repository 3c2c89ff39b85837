"""Language models and lattice rescoring.

The ``rescore`` submodule is deliberately not shadowed by its function:
call ``hakka_asr.lm.rescore.rescore``.
"""

from . import rescore
from .lattice import WordLattice, expand_with_ngram, nbest, read_lattice, write_lattice
from .ngram import NGramModel, perplexity, read_arpa, train_ngram, write_arpa
from .rnnlm import RnnLm, train_rnnlm

__all__ = ["NGramModel", "RnnLm", "WordLattice", "expand_with_ngram", "nbest", "perplexity",
           "read_arpa", "read_lattice", "rescore", "train_ngram", "train_rnnlm", "write_arpa",
           "write_lattice"]
