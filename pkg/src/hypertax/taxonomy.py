"""Rooted class-taxonomy tree with ancestor/descendant algebra.

The tree always carries a synthetic root (id 0) that is not a scorable
class: it never appears in ancestor sets, label expansions, or the node
list `class_ids`. Node levels count from the root (root = 0, its children
= 1). Trees are immutable; `insert_subtree` returns a new tree.

Text format, one node per line::

    <name> <parent-name|ROOT> [task=<int>]

`#` starts a comment. Order matters only in that node ids are assigned by
line order; parents may be declared after their children.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

ROOT_ID = 0
ROOT_NAME = "ROOT"

__all__ = [
    "ROOT_ID", "ROOT_NAME", "TaxonomyError", "ClassNode", "LabelExpansion",
    "TaxonomyTree", "parse_taxonomy", "load_taxonomy",
]


class TaxonomyError(ValueError):
    """Structural or parse failure; carries the offending line when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class ClassNode:
    id: int
    name: str
    parent: int  # ROOT_ID for top-level nodes
    level: int  # parent.level + 1; top-level nodes are level 1
    introduced_at: int  # task index >= 1


@dataclass(frozen=True)
class LabelExpansion:
    """Per-leaf supervision: the leaf plus all ancestors, and one ground-truth
    node per hierarchy level along the leaf's root path."""

    leaf: int
    positives: frozenset[int]
    per_level: dict[int, int]  # level -> node id, for levels 1..leaf level


class TaxonomyTree:
    def __init__(self, nodes: list[ClassNode]):
        self._nodes: dict[int, ClassNode] = {n.id: n for n in nodes}
        if len(self._nodes) != len(nodes):
            raise TaxonomyError("duplicate node ids")
        self._children: dict[int, tuple[int, ...]] = {ROOT_ID: ()}
        for n in nodes:
            self._children.setdefault(n.id, ())
        for n in nodes:
            self._children[n.parent] = self._children.get(n.parent, ()) + (n.id,)
        self._name_to_id = {n.name: n.id for n in nodes}
        self.validate()

    # -- basic accessors ----------------------------------------------------

    @property
    def class_ids(self) -> list[int]:
        """All scorable node ids (root excluded), ascending."""
        return sorted(self._nodes)

    @property
    def leaves(self) -> list[int]:
        return [i for i in self.class_ids if not self._children[i]]

    @property
    def depth(self) -> int:
        return max((n.level for n in self._nodes.values()), default=0)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._nodes

    def node(self, node_id: int) -> ClassNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise TaxonomyError(f"unknown node id {node_id}") from None

    def id_of(self, name: str) -> int:
        try:
            return self._name_to_id[name]
        except KeyError:
            raise TaxonomyError(f"unknown node name {name!r}") from None

    def name(self, node_id: int) -> str:
        return self.node(node_id).name

    def level(self, node_id: int) -> int:
        return self.node(node_id).level

    def children(self, node_id: int) -> tuple[int, ...]:
        if node_id != ROOT_ID:
            self.node(node_id)
        return self._children.get(node_id, ())

    def is_leaf(self, node_id: int) -> bool:
        return not self.children(node_id) and node_id != ROOT_ID

    def nodes_at_level(self, level: int) -> list[int]:
        return [i for i in self.class_ids if self._nodes[i].level == level]

    # -- tree algebra ---------------------------------------------------

    def ancestors(self, node_id: int) -> list[int]:
        """The node itself plus all ancestors, leaf-to-rootward, root excluded."""
        node = self.node(node_id)
        path = [node.id]
        while node.parent != ROOT_ID:
            node = self.node(node.parent)
            path.append(node.id)
        return path

    def descendants(self, node_id: int) -> frozenset[int]:
        """The node itself plus all nodes below it."""
        if node_id != ROOT_ID:
            self.node(node_id)
        out = []
        stack = [node_id]
        while stack:
            v = stack.pop()
            out.append(v)
            stack.extend(self._children[v])
        return frozenset(out)

    def expand_label(self, leaf_id: int) -> LabelExpansion:
        if not self.is_leaf(leaf_id):
            raise TaxonomyError(
                f"node {self.name(leaf_id)!r} is internal and cannot label a pixel")
        path = self.ancestors(leaf_id)
        return LabelExpansion(
            leaf=leaf_id,
            positives=frozenset(path),
            per_level={self._nodes[v].level: v for v in path},
        )

    # -- construction ---------------------------------------------------

    def insert_subtree(self, parent_id: int, new_nodes: list[tuple[str, str]],
                       task: int) -> "TaxonomyTree":
        """Return a new tree with `new_nodes` = [(name, parent_name), ...] added.

        Parent names may refer to existing nodes or to earlier entries of
        `new_nodes` (so whole chains can be inserted at once). A former leaf
        that gains children keeps its id and simply stops being a leaf.
        """
        if parent_id != ROOT_ID:
            self.node(parent_id)
        nodes = list(self._nodes.values())
        names = dict(self._name_to_id)
        next_id = max(names.values(), default=ROOT_ID) + 1
        levels = {i: n.level for i, n in self._nodes.items()}
        levels[ROOT_ID] = 0
        anchor = self.name(parent_id) if parent_id != ROOT_ID else ROOT_NAME
        names_here = {anchor: parent_id}
        for name, parent_name in new_nodes:
            if name in names:
                raise TaxonomyError(f"node name {name!r} already exists")
            if parent_name in names_here:
                pid = names_here[parent_name]
            elif parent_name in names:
                pid = names[parent_name]
            elif parent_name == ROOT_NAME:
                pid = ROOT_ID
            else:
                raise TaxonomyError(f"unknown parent {parent_name!r} for {name!r}")
            node = ClassNode(id=next_id, name=name, parent=pid,
                             level=levels[pid] + 1, introduced_at=task)
            nodes.append(node)
            names[name] = next_id
            names_here[name] = next_id
            levels[next_id] = node.level
            next_id += 1
        return TaxonomyTree(nodes)

    def subtree_at_task(self, task: int) -> "TaxonomyTree":
        """The tree as it stands after task `task` (ids preserved)."""
        return TaxonomyTree(
            [n for n in self._nodes.values() if n.introduced_at <= task])

    def max_task(self) -> int:
        return max((n.introduced_at for n in self._nodes.values()), default=1)

    # -- validation and hashing -------------------------------------------

    def validate(self) -> None:
        for n in self._nodes.values():
            if n.id == ROOT_ID:
                raise TaxonomyError(f"node {n.name!r} reuses the root id")
            if n.parent != ROOT_ID and n.parent not in self._nodes:
                raise TaxonomyError(f"node {n.name!r} has missing parent id {n.parent}")
            parent_level = 0 if n.parent == ROOT_ID else self._nodes[n.parent].level
            if n.level != parent_level + 1:
                raise TaxonomyError(
                    f"node {n.name!r} has level {n.level}, expected {parent_level + 1}")
            if n.parent != ROOT_ID:
                if self._nodes[n.parent].introduced_at > n.introduced_at:
                    raise TaxonomyError(
                        f"node {n.name!r} appears at task {n.introduced_at} "
                        f"before its parent {self._nodes[n.parent].name!r}")
        if len({n.name for n in self._nodes.values()}) != len(self._nodes):
            raise TaxonomyError("duplicate node names")
        reachable = self.descendants(ROOT_ID) if self._nodes else frozenset()
        if self._nodes and not self.leaves:
            raise TaxonomyError("tree has no leaves")
        missing = set(self._nodes) - set(reachable)
        if missing:
            names = ", ".join(sorted(self._nodes[i].name for i in missing))
            raise TaxonomyError(f"nodes unreachable from the root: {names}")

    def to_text(self) -> str:
        lines = []
        for i in self.class_ids:
            n = self._nodes[i]
            parent = ROOT_NAME if n.parent == ROOT_ID else self._nodes[n.parent].name
            lines.append(f"{n.name} {parent} task={n.introduced_at}")
        return "\n".join(lines) + "\n"

    def structural_hash(self) -> str:
        """Hash of (name, parent) pairs in id order; ignores task annotations,
        so schedule variants over the same class structure share a hash."""
        payload = "\n".join(
            f"{self._nodes[i].name}|"
            f"{ROOT_NAME if self._nodes[i].parent == ROOT_ID else self._nodes[self._nodes[i].parent].name}"
            for i in self.class_ids)
        return hashlib.sha256(payload.encode()).hexdigest()

    def full_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def descendants_brute_force(tree: TaxonomyTree, node_id: int) -> frozenset[int]:
    """Reference DFS used by sanity checks; intentionally naive."""
    out = {node_id}
    for child in tree.children(node_id):
        out |= descendants_brute_force(tree, child)
    return frozenset(out)


def parse_taxonomy(text: str) -> TaxonomyTree:
    entries: list[tuple[int, str, str, int]] = []  # (line_no, name, parent, task)
    names: dict[str, int] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise TaxonomyError(
                f"expected '<name> <parent> [task=N]', got {raw.strip()!r}", line_no)
        name, parent = parts[0], parts[1]
        task = 1
        if len(parts) == 3:
            if not parts[2].startswith("task="):
                raise TaxonomyError(f"bad attribute {parts[2]!r}", line_no)
            try:
                task = int(parts[2][5:])
            except ValueError:
                raise TaxonomyError(f"bad task number {parts[2][5:]!r}", line_no) from None
            if task < 1:
                raise TaxonomyError(f"task must be >= 1, got {task}", line_no)
        if name == ROOT_NAME:
            raise TaxonomyError(f"{ROOT_NAME!r} is reserved for the synthetic root", line_no)
        if name in names:
            raise TaxonomyError(f"duplicate node {name!r}", line_no)
        names[name] = line_no
        entries.append((line_no, name, parent, task))

    ids = {name: idx + 1 for idx, (_, name, _, _) in enumerate(entries)}
    # resolve levels by walking parent links; detects cycles and orphans
    levels: dict[str, int] = {ROOT_NAME: 0}

    def resolve_level(name: str, trail: list[str]) -> int:
        if name in levels:
            return levels[name]
        if name in trail:
            cycle = trail[trail.index(name):] + [name]
            raise TaxonomyError(
                "cycle through nodes " + " -> ".join(cycle), names[name])
        entry = next((e for e in entries if e[1] == name), None)
        if entry is None:
            raise TaxonomyError(f"unknown parent {name!r}",
                                names.get(trail[-1]) if trail else None)
        levels[name] = resolve_level(entry[2], trail + [name]) + 1
        return levels[name]

    for line_no, name, parent, _ in entries:
        if parent != ROOT_NAME and parent not in names:
            raise TaxonomyError(f"unknown parent {parent!r} for node {name!r}", line_no)
        resolve_level(name, [])

    nodes = [
        ClassNode(id=ids[name], name=name,
                  parent=ROOT_ID if parent == ROOT_NAME else ids[parent],
                  level=levels[name], introduced_at=task)
        for _, name, parent, task in entries
    ]
    if not nodes:
        raise TaxonomyError("taxonomy file defines no nodes")
    return TaxonomyTree(nodes)


def load_taxonomy(path) -> TaxonomyTree:
    with open(path, encoding="utf-8") as fh:
        return parse_taxonomy(fh.read())
