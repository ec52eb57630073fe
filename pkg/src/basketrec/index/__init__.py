from .catalog import (
    CatalogIndex,
    IndexParams,
    QueryVector,
    build_catalog,
    catalog_vectors,
    load_index,
    make_query_vector,
    make_query_vector_anonymous,
    make_query_vector_asymmetric,
    read_index_header,
    save_index,
)
from .graph import Graph, build_graph, search_graph

__all__ = [
    "CatalogIndex",
    "Graph",
    "IndexParams",
    "QueryVector",
    "build_catalog",
    "build_graph",
    "catalog_vectors",
    "load_index",
    "make_query_vector",
    "make_query_vector_anonymous",
    "make_query_vector_asymmetric",
    "read_index_header",
    "save_index",
    "search_graph",
]
