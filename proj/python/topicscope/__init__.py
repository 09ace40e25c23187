"""Python access to the topicscope numerical core."""

from ._core import (
    bin_index,
    class_tf_idf,
    dbcv,
    dunn,
    hdbscan,
    kruskal_wallis,
    layout,
    mcnemar_exact,
    mmr,
    tokenize,
    trustworthiness,
)

__all__ = [
    "bin_index",
    "class_tf_idf",
    "dbcv",
    "dunn",
    "hdbscan",
    "kruskal_wallis",
    "layout",
    "mcnemar_exact",
    "mmr",
    "tokenize",
    "trustworthiness",
]
