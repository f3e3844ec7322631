"""Workbench for small set-function classes over hereditarily finite sets:
canonical HF values, formula classification and evaluation, class-grammar
validation and interpretation of function definitions, sequent checkers for
the four fragments, and witness extraction from cut-free derivations."""

from . import calculus, classes, evaluator, extract, formula, hf, sexpr, verify

__all__ = [
    "calculus",
    "classes",
    "evaluator",
    "extract",
    "formula",
    "hf",
    "sexpr",
    "verify",
]
