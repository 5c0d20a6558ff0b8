"""Desk-scale set-prediction object detector.

Compares two decoder cross-attention designs on procedurally generated
scenes: the additive form, where content and positional parts are summed
before the query/key dot product, and the conditional form, where a
spatial query built from a per-query reference point is concatenated with
the content query so spatial and content similarity factor into separate
terms. Everything runs on a from-scratch float64 autodiff core.
"""

__version__ = "0.1.0"
