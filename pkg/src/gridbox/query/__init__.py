from gridbox.query.engine import (
    OK,
    TIMEOUT,
    UNAUTHORIZED,
    Query,
    QueryEngine,
    ResultSet,
    SimilarityClause,
    order_rows,
    parse_query,
    query_to_doc,
)
from gridbox.query.predicate import TRUE, And, Leaf, Not, Or, evaluate, parse_predicate, schema, to_doc
from gridbox.query.similarity import jaccard, similarity_score

__all__ = [
    "OK",
    "TIMEOUT",
    "UNAUTHORIZED",
    "Query",
    "QueryEngine",
    "ResultSet",
    "SimilarityClause",
    "order_rows",
    "parse_query",
    "query_to_doc",
    "TRUE",
    "And",
    "Leaf",
    "Not",
    "Or",
    "evaluate",
    "parse_predicate",
    "schema",
    "to_doc",
    "jaccard",
    "similarity_score",
]
