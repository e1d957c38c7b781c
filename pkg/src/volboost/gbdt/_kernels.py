"""Select the tree-learning kernel backend at import time.

The compiled extension is preferred. Setting ``VOLBOOST_PURE_PYTHON=1``
forces the numpy fallback.
"""

import os

if os.environ.get("VOLBOOST_PURE_PYTHON", "") not in ("", "0"):
    from ._pykernels import (  # noqa: F401
        apply_tree, build_histogram, find_best_split, grow_tree, leaf_quantiles, predict_trees,
    )
    BACKEND = "python"
else:
    try:
        from ._ckernels import (  # noqa: F401
            apply_tree, build_histogram, find_best_split, grow_tree, leaf_quantiles, predict_trees,
        )
        BACKEND = "cython"
    except ImportError:
        from ._pykernels import (  # noqa: F401
            apply_tree, build_histogram, find_best_split, grow_tree, leaf_quantiles, predict_trees,
        )
        BACKEND = "python"
