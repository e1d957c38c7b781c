"""Regression tree stored as flat node arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

LEAF = -1
_FIELDS = ("feature", "threshold", "left", "right", "gain", "value",
           "count", "sum_g", "sum_h", "depth")
_DTYPES = (np.int32, np.int32, np.int32, np.int32, np.float64, np.float64,
           np.int64, np.float64, np.float64, np.int32)


@dataclass
class RegressionTree:
    """Binary tree over binned features; node 0 is the root.

    Internal nodes send rows with ``bin <= threshold`` left. Leaves have
    ``feature == -1`` and carry the output ``value``. ``gain`` is the
    recorded split gain of internal nodes (zero on leaves).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    gain: np.ndarray
    value: np.ndarray
    count: np.ndarray
    sum_g: np.ndarray
    sum_h: np.ndarray
    depth: np.ndarray

    @classmethod
    def from_arrays(cls, arrays) -> "RegressionTree":
        return cls(*(np.ascontiguousarray(a, dtype=dt) for a, dt in zip(arrays, _DTYPES)))

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature == LEAF

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def apply_binned(self, binned) -> np.ndarray:
        return _kernels.apply_tree(binned, self.feature, self.threshold, self.left, self.right)

    def predict_binned(self, binned) -> np.ndarray:
        return self.value[self.apply_binned(binned)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in _FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls.from_arrays([d[k] for k in _FIELDS])

    def dump(self, mapper=None, feature_names=None) -> str:
        """Readable indented rendering, raw thresholds when a mapper is given."""
        lines = []

        def walk(k, indent):
            pad = "  " * indent
            if self.feature[k] == LEAF:
                lines.append(f"{pad}leaf {k}: value={self.value[k]:.6g} n={self.count[k]}")
                return
            f, b = int(self.feature[k]), int(self.threshold[k])
            name = feature_names[f] if feature_names else f"x{f}"
            cut = f"{mapper.thresholds[f][b]:.6g}" if mapper is not None else f"bin {b}"
            lines.append(f"{pad}node {k}: {name} <= {cut} gain={self.gain[k]:.6g}")
            walk(int(self.left[k]), indent + 1)
            walk(int(self.right[k]), indent + 1)

        walk(0, 0)
        return "\n".join(lines)
