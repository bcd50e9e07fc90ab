"""Concurrent n-ary interval index for stabbing invalidation.

Shaped like a B+ tree keyed by interval lower bounds; every node carries
the maximum upper bound of its subtree, which prunes stabbing traversals.
Leaves store (lo, hi, entry_id) triples. Bounds are opaque comparable
keys; a single tree must only ever see mutually comparable keys (one tree
per attribute in practice).

Concurrency protocol:

* Writers (insert/evict) descend with latch coupling and split full nodes
  preemptively while holding the parent, so parent and child always change
  together.
* Stabbing traversals lock one node at a time. A node records the time it
  last shed entries to the right (split or borrow); traversals re-check the
  right sibling when that stamp postdates their snapshot of the parent, and
  hop through merged-away nodes via a forward pointer. Splits and merges
  therefore never block or break readers.
* Invalidation removes matching leaf entries in place (under the leaf
  lock), which makes the drop of every entry exactly-once across threads.
* Underflowed nodes are repaired lazily: a traversal that notices them
  re-balances all children of one parent after finishing its scan, guarded
  by a try-lock so only one thread repairs a given parent.
* Subtree maxima are raised top-down by inserts before the parent latch is
  released, and recomputed exactly on the unwind of every removing
  traversal, so a completed operation is always visible to later stabs.
"""

from __future__ import annotations

import threading
from bisect import bisect_left, bisect_right, insort
from time import monotonic_ns

from .exceptions import InvalidInterval

_NO_MAX = object()  # max of an empty subtree; compares with nothing


class _Node:
    __slots__ = (
        "is_leaf", "lock", "dead", "forward", "right", "last_shed",
        "max", "entries", "children", "seps", "rebal_hint", "format_lock",
    )

    def __init__(self, is_leaf: bool):
        self.is_leaf = is_leaf
        self.lock = threading.Lock()
        self.dead = False
        self.forward = None       # merge target once dead
        self.right = None         # right sibling at the same level
        self.last_shed = monotonic_ns()
        self.max = _NO_MAX
        self.entries = [] if is_leaf else None   # sorted (lo, hi, eid)
        self.children = None if is_leaf else []
        self.seps = None if is_leaf else []      # lower-bound triple per child
        self.rebal_hint = 0
        self.format_lock = threading.Lock()      # formatBit: try-lock as CAS

    def width(self) -> int:
        return len(self.entries) if self.is_leaf else len(self.children)

    def local_max(self):
        if self.is_leaf:
            return max((e[1] for e in self.entries), default=_NO_MAX)
        best = _NO_MAX
        for c in self.children:
            m = c.max
            if m is not _NO_MAX and (best is _NO_MAX or m > best):
                best = m
        return best


def _bump(node: _Node, hi) -> None:
    if node.max is _NO_MAX or hi > node.max:
        node.max = hi


class QTree:
    """Thread-safe interval index supporting insert, evict, and stab-drop."""

    def __init__(self, arity: int = 32):
        if arity < 4:
            raise ValueError("arity must be >= 4")
        self.arity = arity
        self._min_width = (arity + 1) // 2
        self.root = _Node(is_leaf=True)
        self._count = 0
        self._count_lock = threading.Lock()

    def __len__(self):
        return self._count

    @property
    def entry_count(self) -> int:
        return self._count

    def _add_count(self, delta: int) -> None:
        with self._count_lock:
            self._count += delta

    # -- insertion ---------------------------------------------------------

    def insert(self, lo, hi, entry_id) -> None:
        if lo > hi:
            raise InvalidInterval(f"lo {lo!r} > hi {hi!r}")
        entry = (lo, hi, entry_id)
        node = self.root
        node.lock.acquire()
        if node.width() >= self.arity:
            self._split_root(node)
        _bump(node, hi)
        while not node.is_leaf:
            i = max(0, bisect_right(node.seps, entry) - 1)
            if i == 0 and entry < node.seps[0]:
                # leftmost child absorbs keys below its separator; lower the
                # separator so it stays a true lower bound (split safety)
                node.seps[0] = entry
            child = node.children[i]
            child.lock.acquire()
            if child.width() >= self.arity:
                child = self._split_child(node, i, child, entry)
            _bump(child, hi)
            node.lock.release()
            node = child
        insort(node.entries, entry)
        node.lock.release()
        self._add_count(1)

    def _split_root(self, root: _Node) -> None:
        # In-place: the root object stays the root; its content moves down
        # one level, so concurrent traversals never need a new entry point.
        cut = self._split_point(root)
        left = _Node(root.is_leaf)
        right = _Node(root.is_leaf)
        if root.is_leaf:
            left.entries = root.entries[:cut]
            right.entries = root.entries[cut:]
            lo_left, lo_right = left.entries[0], right.entries[0]
        else:
            left.children = root.children[:cut]
            right.children = root.children[cut:]
            left.seps = root.seps[:cut]
            right.seps = root.seps[cut:]
            lo_left, lo_right = left.seps[0], right.seps[0]
        left.right = right
        left.max = left.local_max()
        right.max = right.local_max()
        root.is_leaf = False
        root.entries = None
        root.children = [left, right]
        root.seps = [lo_left, lo_right]

    def _make_split(self, child: _Node) -> tuple:
        """Shed child's upper half into a fresh right node; not yet linked."""
        cut = self._split_point(child)
        new = _Node(child.is_leaf)
        if child.is_leaf:
            new.entries = child.entries[cut:]
            del child.entries[cut:]
            sep = new.entries[0]
        else:
            new.children = child.children[cut:]
            new.seps = child.seps[cut:]
            del child.children[cut:]
            del child.seps[cut:]
            sep = new.seps[0]
        new.right = child.right
        new.max = new.local_max()
        child.max = child.local_max()
        return new, sep

    def _split_child(self, parent: _Node, i: int, child: _Node, entry) -> _Node:
        """Split ``child`` (both locks held); returns the half for ``entry``."""
        new, sep = self._make_split(child)
        new.lock.acquire()
        child.right = new
        child.last_shed = monotonic_ns()
        parent.children.insert(i + 1, new)
        parent.seps.insert(i + 1, sep)
        if entry >= sep:
            child.lock.release()
            return new
        new.lock.release()
        return child

    def _split_overfull(self, parent: _Node, i: int, child: _Node) -> None:
        """Split during rebalancing (both locks held and kept by caller)."""
        new, sep = self._make_split(child)
        child.right = new
        child.last_shed = monotonic_ns()
        parent.children.insert(i + 1, new)
        parent.seps.insert(i + 1, sep)

    def _split_point(self, node: _Node) -> int:
        """Middle cut, shifted off a run of equal triples/seps if possible.

        Keeping equal sort keys on one side lets evict route to a single
        child; an unavoidable mid-run cut is repaired by its right-walk.
        """
        items = node.entries if node.is_leaf else node.seps
        n = len(items)
        cut = n // 2
        r = cut
        while r < n and items[r - 1] == items[r]:
            r += 1
        if r < n:
            return r
        l = cut
        while l > 1 and items[l - 1] == items[l]:
            l -= 1
        return l if l > 1 else cut

    # -- eviction ----------------------------------------------------------

    def evict(self, lo, hi, entry_id) -> bool:
        """Remove one occurrence of the exact triple; False if absent."""
        entry = (lo, hi, entry_id)
        path = []
        node = self.root
        node.lock.acquire()
        while not node.is_leaf:
            # route exactly like insert so unique triples resolve in place;
            # exact-duplicate triples may need the rightward walk below
            i = max(0, bisect_right(node.seps, entry) - 1)
            child = node.children[i]
            child.lock.acquire()
            if child.is_leaf:
                removed, shrunk = self._leaf_evict(node, child, entry)
                if shrunk:
                    node.max = node.local_max()
                node.lock.release()
                break
            path.append(node)
            node.lock.release()
            node = child
        else:
            # root is a leaf; _leaf_evict releases its lock
            return self._leaf_evict(None, node, entry)[0]
        if shrunk:
            # tighten maxima upward until a level is unaffected
            for n in reversed(path):
                n.lock.acquire()
                if n.dead:
                    n.lock.release()
                    continue
                new_max = n.local_max()
                if new_max == n.max:
                    n.lock.release()
                    break
                n.max = new_max
                n.lock.release()
        return removed

    def _leaf_evict(self, parent, leaf: _Node, entry) -> tuple:
        """Remove entry from the routed leaf; releases its lock.

        Returns (removed, max_shrunk). Insert and evict route identically,
        so a stored triple is always found in the routed leaf.
        """
        entries = leaf.entries
        i = bisect_left(entries, entry)
        if i < len(entries) and entries[i] == entry:
            del entries[i]
            shrunk = False
            if entry[1] == leaf.max:
                leaf.max = leaf.local_max()
                shrunk = leaf.max != entry[1]
            if parent is not None and len(entries) < self._min_width:
                parent.rebal_hint += 1
            leaf.lock.release()
            self._add_count(-1)
            return True, shrunk
        leaf.lock.release()
        return False, False

    @staticmethod
    def _lock_alive(node):
        """Lock node, hopping over merged-away carcasses. None stays None."""
        while node is not None:
            node.lock.acquire()
            if not node.dead:
                return node
            nxt = node.forward
            node.lock.release()
            node = nxt
        return None

    # -- stabbing ----------------------------------------------------------

    def stab(self, key) -> set:
        """All entry ids whose interval covers key; no mutation."""
        out = []
        self._travel(self.root, key, 0, out, remove=False)
        return {eid for _, _, eid in out}

    def invalidate(self, key) -> set:
        """Collect and remove every entry covering key (exactly once)."""
        out = []
        self._travel(self.root, key, 0, out, remove=True)
        if out:
            self._add_count(-len(out))
        return {eid for _, _, eid in out}

    def _travel(self, node, key, snap, out, remove) -> None:
        while node is not None:
            node = self._lock_alive(node)
            if node is None:
                return
            if node.max is not _NO_MAX and node.max >= key:
                if node.is_leaf:
                    self._scan_leaf(node, key, out, remove)
                    chase = node.right if node.last_shed >= snap else None
                    node.lock.release()
                else:
                    chase = self._scan_internal(node, key, snap, out, remove)
            else:
                chase = node.right if node.last_shed >= snap else None
                node.lock.release()
            node = chase

    def _scan_leaf(self, leaf, key, out, remove) -> None:
        entries = leaf.entries
        if remove:
            kept = []
            for e in entries:
                if e[0] <= key <= e[1]:
                    out.append(e)
                else:
                    kept.append(e)
            if len(kept) != len(entries):
                leaf.entries = kept
                leaf.max = leaf.local_max()
        else:
            for e in entries:
                if e[0] > key:
                    break
                if e[1] >= key:
                    out.append(e)

    def _scan_internal(self, node, key, snap, out, remove):
        """Scan matching children; returns the sibling to chase, if any.

        Called with node locked; releases it before descending.
        """
        mysnap = monotonic_ns()
        seps = node.seps
        children = node.children
        candidates = []
        underflow = 0
        for i, child in enumerate(children):
            if i > 0 and seps[i][0] > key:
                break
            m = child.max
            if m is not _NO_MAX and m >= key:
                candidates.append(child)
            if remove and child.width() < self._min_width:
                underflow += 1
        if underflow:
            node.rebal_hint += underflow
        do_rebal = remove and node.rebal_hint > 0
        chase = node.right if node.last_shed >= snap else None
        node.lock.release()

        for child in candidates:
            self._travel(child, key, mysnap, out, remove)

        if do_rebal and node.format_lock.acquire(blocking=False):
            try:
                self._rebalance_children(node)
            finally:
                node.format_lock.release()
        if remove:
            with node.lock:
                if not node.dead:
                    node.max = node.local_max()
        return chase

    # -- deferred rebalancing ---------------------------------------------

    def _rebalance_children(self, node) -> bool:
        """Repair underflowed children of node (format lock held)."""
        node.lock.acquire()
        if node.dead or node.is_leaf:
            node.lock.release()
            return False
        node.rebal_hint = 0
        changed = False
        i = 0
        while i < len(node.children) and len(node.children) > 1:
            child = node.children[i]
            child.lock.acquire()
            if child.width() >= self._min_width:
                child.lock.release()
                i += 1
                continue
            changed = True
            if i > 0:
                left = node.children[i - 1]
                left.lock.acquire()
                if left.width() > self._min_width:
                    self._borrow_from_left(node, i, left, child)
                    left.lock.release()
                    child.lock.release()
                    i += 1
                else:
                    self._merge_into_right(node, i - 1, left, child)
                    child.lock.release()
                    i -= 1  # survivor shifted left; re-check its width
            else:
                right = node.children[1]
                right.lock.acquire()
                self._merge_into_right(node, 0, child, right)
                if right.width() > self.arity:
                    # merging into a rich sibling can overflow; shed right
                    self._split_overfull(node, 0, right)
                right.lock.release()
                # survivor is now children[0]; re-check it
        if node is self.root and not node.is_leaf and len(node.children) == 1:
            self._collapse_root(node)
            changed = True
        node.max = node.local_max()
        node.lock.release()
        return changed

    def _borrow_from_left(self, node, i, left, child) -> None:
        """Move the tail of left into the front of child (rightward shed)."""
        total = left.width() + child.width()
        take = total // 2 - child.width()
        if take <= 0:
            return
        if child.is_leaf:
            moved = left.entries[-take:]
            del left.entries[-take:]
            child.entries[:0] = moved
            node.seps[i] = child.entries[0]
        else:
            moved_c = left.children[-take:]
            moved_s = left.seps[-take:]
            del left.children[-take:]
            del left.seps[-take:]
            child.children[:0] = moved_c
            child.seps[:0] = moved_s
            node.seps[i] = child.seps[0]
        left.last_shed = monotonic_ns()
        left.max = left.local_max()
        child.max = child.local_max()

    def _merge_into_right(self, node, left_index, left, right) -> None:
        """Fold left into right; the dead left forwards readers rightward."""
        if right.is_leaf:
            right.entries[:0] = left.entries
        else:
            right.children[:0] = left.children
            right.seps[:0] = left.seps
        node.seps[left_index + 1] = node.seps[left_index]
        del node.children[left_index]
        del node.seps[left_index]
        right.max = right.local_max()
        left.dead = True
        left.forward = right
        left.entries = [] if left.is_leaf else None
        left.children = None if left.is_leaf else []
        left.seps = None if left.is_leaf else []
        left.max = _NO_MAX
        left.lock.release()

    def _collapse_root(self, root) -> None:
        """Absorb a single child into the root object (root lock held)."""
        child = root.children[0]
        child.lock.acquire()
        root.is_leaf = child.is_leaf
        root.entries = child.entries
        root.children = child.children
        root.seps = child.seps
        root.max = child.max
        child.dead = True
        child.forward = root
        child.entries = None
        child.children = None
        child.seps = None
        child.lock.release()

    # -- maintenance and inspection -----------------------------------------

    def bulk_load(self, triples) -> None:
        """Build from scratch out of (lo, hi, entry_id) triples.

        Only valid on an empty tree with no concurrent users.
        """
        if self._count:
            raise RuntimeError("bulk_load requires an empty tree")
        entries = sorted(triples)
        self._count = len(entries)
        root = self.root
        if not entries:
            return
        fill = max(2, (self.arity * 3) // 4)
        level = []
        for i in range(0, len(entries), fill):
            n = _Node(is_leaf=True)
            n.entries = entries[i:i + fill]
            n.max = n.local_max()
            level.append(n)
        for a, b in zip(level, level[1:]):
            a.right = b
        while len(level) > 1:
            parents = []
            for i in range(0, len(level), fill):
                group = level[i:i + fill]
                n = _Node(is_leaf=False)
                n.children = group
                n.seps = [g.entries[0] if g.is_leaf else g.seps[0] for g in group]
                n.max = n.local_max()
                parents.append(n)
            for a, b in zip(parents, parents[1:]):
                a.right = b
            level = parents
        top = level[0]
        if top.is_leaf:
            root.is_leaf = True
            root.entries = top.entries
            root.children = None
            root.seps = None
        else:
            root.is_leaf = False
            root.entries = None
            root.children = top.children
            root.seps = top.seps
        root.max = top.max

    def audit(self, check_fanout: bool = False) -> list:
        """Single-threaded structural check; returns all stored triples.

        Verifies leaf ordering, separator bounds, exact subtree maxima, and
        agreement between the tree walk and the leaf sibling chain. Fanout
        bounds are only asserted on request (after flush_rebalance).
        """
        triples = []
        first_leaf = []
        self._audit_node(self.root, None, triples, first_leaf, check_fanout,
                         is_root=True)
        chain = []
        node = first_leaf[0] if first_leaf else None
        while node is not None:
            if node.dead:
                node = node.forward
                continue
            chain.extend(node.entries)
            node = node.right
        if sorted(chain) != sorted(triples):
            raise AssertionError("leaf sibling chain disagrees with tree walk")
        if self._count != len(triples):
            raise AssertionError(
                f"entry_count {self._count} != stored {len(triples)}")
        return triples

    def _audit_node(self, node, lower, triples, first_leaf, check_fanout,
                    is_root=False):
        if node.dead:
            raise AssertionError("dead node reachable from root")
        if check_fanout and not is_root and node.width() < self._min_width:
            raise AssertionError("underflowed node after flush_rebalance")
        if node.width() > self.arity:
            raise AssertionError("overfull node")
        if node.is_leaf:
            if node.entries != sorted(node.entries):
                raise AssertionError("leaf entries out of order")
            if lower is not None and node.entries and node.entries[0] < lower:
                raise AssertionError("leaf entry below separator bound")
            if node.max != node.local_max():
                raise AssertionError("stale leaf max")
            if not first_leaf:
                first_leaf.append(node)
            triples.extend(node.entries)
            return
        if node.seps != sorted(node.seps):
            raise AssertionError("separators out of order")
        if len(node.seps) != len(node.children):
            raise AssertionError("separator/child count mismatch")
        if node.max != node.local_max():
            raise AssertionError("stale internal max")
        for i, child in enumerate(node.children):
            bound = lower if i == 0 else node.seps[i]
            self._audit_node(child, bound, triples, first_leaf, check_fanout)

    def flush_rebalance(self) -> None:
        """Repair all deferred underflows; single-threaded maintenance."""
        while self._flush_node(self.root):
            pass

    def _flush_node(self, node) -> bool:
        if node.is_leaf:
            return False
        changed = False
        for child in list(node.children):
            changed |= self._flush_node(child)
        with node.format_lock:
            changed |= self._rebalance_children(node)
        return changed
