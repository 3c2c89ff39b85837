"""Pseudo-decoder: frame posteriors -> word confusion network (sausage lattice).

Frames are labelled with their most probable unit (silence included);
runs of the same non-silence unit become one slot, whose alternatives are
the ``width`` units with the highest summed log posterior over the run.
"""

from __future__ import annotations

import numpy as np

from .autodiff import log_softmax_rows
from .lm.lattice import sausage_lattice


def unit_log_posteriors(logits, pdf_to_unit, num_units):
    """Log posterior per unit (column ``num_units`` is silence) for each frame."""
    logp = log_softmax_rows(np.asarray(logits, dtype=np.float64))
    groups = [[p for p, u in enumerate(pdf_to_unit) if u == k] for k in range(num_units)]
    groups.append([p for p, u in enumerate(pdf_to_unit) if u is None])
    out = np.full((logp.shape[0], num_units + 1), -np.inf)
    for k, pdfs in enumerate(groups):
        if pdfs:
            m = logp[:, pdfs].max(axis=1, keepdims=True)
            out[:, k] = (m + np.log(np.exp(logp[:, pdfs] - m).sum(axis=1, keepdims=True)))[:, 0]
    return out


def posterior_sausage(logits, pdf_to_unit, words, width=3):
    """Build a sausage lattice whose arc acoustic scores are summed log posteriors."""
    num_units = len(words)
    lp = unit_log_posteriors(logits, pdf_to_unit, num_units)
    best = lp.argmax(axis=1)
    columns = []
    t = 0
    T = best.shape[0]
    while t < T:
        u = best[t]
        end = t
        while end < T and best[end] == u:
            end += 1
        if u != num_units:
            seg = lp[t:end, :num_units].sum(axis=0)
            top = sorted(range(num_units), key=lambda k: (-seg[k], k))[:width]
            columns.append([(words[k], float(seg[k])) for k in top])
        t = end
    if not columns:
        columns.append([(words[int(lp[:, :num_units].sum(axis=0).argmax())], 0.0)])
    return sausage_lattice(columns)
