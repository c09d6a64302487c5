"""Spec-file parsing and the ``cylcalc`` command."""
from .grammar import ParseError, parse_expression, pretty
from .specfile import OperatorSpecFile, parse_spec, read_spec

__all__ = ["ParseError", "parse_expression", "pretty", "OperatorSpecFile", "parse_spec", "read_spec"]
