"""Table trees and tree-edit-distance similarity (TEDS / TEDS-S)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .doctags import DocElement, LayoutTag, MalformedOtsl, parse_otsl
from .kernels import zhang_shasha

__all__ = ["TableTree", "MalformedOtsl", "otsl_to_tree", "tree_edit_distance", "teds"]


@dataclass(frozen=True, slots=True)
class TableTree:
    """Ordered labelled tree. Labels are any hashable values."""

    label: object
    children: tuple[TableTree, ...] = ()

    @property
    def size(self) -> int:
        return 1 + sum(c.size for c in self.children)

    def postorder(self):
        """``(labels, leftmost_leaf)`` lists in postorder."""
        labels, lml = [], []

        def walk(node):
            first = None
            for c in node.children:
                leaf = walk(c)
                if first is None:
                    first = leaf
            idx = len(labels)
            labels.append(node.label)
            lml.append(idx if first is None else first)
            return lml[idx]

        walk(self)
        return labels, lml

    def relabel(self, fn) -> TableTree:
        return TableTree(fn(self.label), tuple(c.relabel(fn) for c in self.children))


def _cell_label(cell, structure_only):
    if structure_only:
        return ("cell", cell.rowspan, cell.colspan)
    return ("cell", cell.rowspan, cell.colspan, cell.text if cell.filled else "")


def otsl_to_tree(table: DocElement | str, structure_only: bool = False) -> TableTree:
    """table -> rows -> anchor cells; merged cells widen their anchor's span."""
    if isinstance(table, DocElement):
        if table.tag is not LayoutTag.OTSL:
            raise MalformedOtsl(f"expected an <otsl> element, got <{table.tag}>")
        content = table.content
    else:
        content = table
    rows = parse_otsl(content)
    return TableTree(
        "table",
        tuple(TableTree("row", tuple(TableTree(_cell_label(c, structure_only)) for c in row)) for row in rows),
    )


def _arrays(tree: TableTree, ids: dict):
    labels, lml = tree.postorder()
    lab = np.array([ids.setdefault(x, len(ids)) for x in labels], dtype=np.int64)
    lml_a = np.array(lml, dtype=np.int64)
    last = {}
    for k, leaf in enumerate(lml):
        last[leaf] = k
    keyroots = np.array(sorted(last.values()), dtype=np.int64)
    return lab, lml_a, keyroots


def tree_edit_distance(a: TableTree, b: TableTree) -> int:
    """Unit-cost ordered tree edit distance (insert, delete, relabel)."""
    ids: dict = {}
    return int(zhang_shasha(*_arrays(a, ids), *_arrays(b, ids)))


def _strip_content(label):
    if isinstance(label, tuple) and label and label[0] == "cell":
        return label[:3]
    return label


def teds(pred: TableTree, ref: TableTree, structure_only: bool = False) -> float:
    """``1 - TED / max(|pred|, |ref|)``.

    With ``structure_only`` cell labels are reduced to their spans before
    comparing, so content differences cost nothing.
    """
    if structure_only:
        pred = pred.relabel(_strip_content)
        ref = ref.relabel(_strip_content)
    denom = max(pred.size, ref.size)
    return 1.0 - tree_edit_distance(pred, ref) / denom
