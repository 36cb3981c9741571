"""Symbolic regression of trained decoupler networks."""
from .expression import (DomainError, Expression, ExpressionError, ParseError, UnboundVariableError,
                         compile_numpy, eval_expression, evaluate, parse_infix, parse_prefix,
                         simplify, to_infix, to_prefix, to_sympy)
from .library import FunctionLibrary, RankDeficiencyError, sparse_regress, stlsq
from .sampling import SamplingError, kmeans_sample
from .regress import (DiscoveredModel, FittedExpression, FunctionQuery, NetQuery, RegressionError,
                      SamplingConfig, SearchBackend, SparseBackend, assemble_rhs, draw_query_points,
                      refit_on_data, regress_decoupler, select_on_data, variable_names)
from .search import Candidate, SearchConfig, fit_constants, search_regress

__all__ = [
    "DiscoveredModel", "FittedExpression", "FunctionQuery", "NetQuery", "RegressionError", "SamplingConfig",
    "SearchBackend", "SparseBackend", "assemble_rhs", "draw_query_points", "refit_on_data", "select_on_data",
    "regress_decoupler", "variable_names",
    "Candidate", "DomainError", "Expression", "ExpressionError", "FunctionLibrary", "ParseError",
    "RankDeficiencyError", "SamplingError", "SearchConfig", "UnboundVariableError", "compile_numpy",
    "eval_expression", "evaluate", "fit_constants", "kmeans_sample", "parse_infix", "parse_prefix",
    "search_regress", "simplify", "sparse_regress", "stlsq", "to_infix", "to_prefix", "to_sympy",
]
