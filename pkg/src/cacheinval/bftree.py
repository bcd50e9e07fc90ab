"""Concurrent n-ary containment index over bloom filters.

Every node maintains a bitMask: the bitwise OR of all filters stored in
its subtree. A subtree can hold a filter containing the probe only if
``bitMask & probe == probe``, which prunes containment searches the way
subtree maxima prune interval stabbing.

The concurrency protocol mirrors the interval index: writers couple
latches and split preemptively under the parent latch; searches lock one
node at a time and recover from concurrent splits/borrows through
right-sibling links stamped with shed times, and from merges through
forward pointers of dead nodes; underflow repair is deferred and guarded
by a per-node try-lock. Masks only ever over-approximate between repairs:
inserts OR bits in top-down before releasing the parent, removals leave
masks untouched (OR has no inverse), and rebalancing or an explicit
audit pass recomputes them exactly.
"""

from __future__ import annotations

import threading
from time import monotonic_ns

from .bloom import BloomFilter
from .exceptions import ConfigMismatch


class _Node:
    __slots__ = (
        "is_leaf", "lock", "dead", "forward", "right", "last_shed",
        "mask", "entries", "children", "rebal_hint", "format_lock",
    )

    def __init__(self, is_leaf: bool):
        self.is_leaf = is_leaf
        self.lock = threading.Lock()
        self.dead = False
        self.forward = None
        self.right = None
        self.last_shed = monotonic_ns()
        self.mask = 0
        self.entries = [] if is_leaf else None    # (bits, entry_id)
        self.children = None if is_leaf else []
        self.rebal_hint = 0
        self.format_lock = threading.Lock()

    def width(self) -> int:
        return len(self.entries) if self.is_leaf else len(self.children)

    def local_mask(self) -> int:
        m = 0
        if self.is_leaf:
            for bits, _ in self.entries:
                m |= bits
        else:
            for c in self.children:
                m |= c.mask
        return m


class BFTree:
    """Thread-safe index retrieving all stored filters that contain a probe."""

    def __init__(self, config, arity: int = 16):
        if arity < 4:
            raise ValueError("arity must be >= 4")
        self.arity = arity
        self._min_width = (arity + 1) // 2
        self.config_fingerprint = config.fingerprint()
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

    def _check_config(self, f: BloomFilter) -> None:
        if f.config.fingerprint() != self.config_fingerprint:
            raise ConfigMismatch(
                f"tree {self.config_fingerprint} vs filter {f.config.fingerprint()}")

    # -- insertion ---------------------------------------------------------

    def insert(self, f: BloomFilter, entry_id) -> None:
        self._check_config(f)
        bits = f.bits
        node = self.root
        node.lock.acquire()
        if node.width() >= self.arity:
            self._split_root(node)
        node.mask |= bits
        while not node.is_leaf:
            child = self._pick_child(node, bits)
            child.lock.acquire()
            if child.width() >= self.arity:
                child = self._split_child(node, child, bits)
            child.mask |= bits
            node.lock.release()
            node = child
        node.entries.append((bits, entry_id))
        node.lock.release()
        self._add_count(1)

    @staticmethod
    def _pick_child(node: _Node, bits: int) -> _Node:
        """Child with the largest bit overlap; ties to the leftmost."""
        best = node.children[0]
        best_overlap = (best.mask & bits).bit_count()
        for c in node.children[1:]:
            ov = (c.mask & bits).bit_count()
            if ov > best_overlap:
                best, best_overlap = c, ov
        return best

    def _split_root(self, root: _Node) -> None:
        cut = root.width() // 2
        left = _Node(root.is_leaf)
        right = _Node(root.is_leaf)
        if root.is_leaf:
            left.entries = root.entries[:cut]
            right.entries = root.entries[cut:]
        else:
            left.children = root.children[:cut]
            right.children = root.children[cut:]
        left.mask = left.local_mask()
        right.mask = right.local_mask()
        left.right = right
        root.is_leaf = False
        root.entries = None
        root.children = [left, right]

    def _make_split(self, child: _Node) -> _Node:
        """Shed child's upper half into a fresh right node; not yet linked."""
        cut = child.width() // 2
        new = _Node(child.is_leaf)
        if child.is_leaf:
            new.entries = child.entries[cut:]
            del child.entries[cut:]
        else:
            new.children = child.children[cut:]
            del child.children[cut:]
        new.mask = new.local_mask()
        child.mask = child.local_mask()
        new.right = child.right
        return new

    def _split_child(self, parent: _Node, child: _Node, bits: int) -> _Node:
        """Split child (parent and child locked); returns the insertion half."""
        new = self._make_split(child)
        new.lock.acquire()
        child.right = new
        child.last_shed = monotonic_ns()
        i = parent.children.index(child)
        parent.children.insert(i + 1, new)
        keep_new = (new.mask & bits).bit_count() > (child.mask & bits).bit_count()
        if keep_new:
            child.lock.release()
            return new
        new.lock.release()
        return child

    def _split_overfull(self, parent: _Node, i: int, child: _Node) -> None:
        """Split during rebalancing (both locks held and kept by caller)."""
        new = self._make_split(child)
        child.right = new
        child.last_shed = monotonic_ns()
        parent.children.insert(i + 1, new)

    # -- removal -----------------------------------------------------------

    def evict(self, f: BloomFilter, entry_id) -> bool:
        """Remove one exact (filter, entry_id) pair; False if absent.

        Masks are not tightened here; deferred rebalancing or
        audit_and_tighten recomputes them.
        """
        self._check_config(f)
        found = []
        self._travel(self.root, f.bits, 0, found, remove=True,
                      exact=(f.bits, entry_id), containment=False)
        if found:
            self._add_count(-1)
            return True
        return False

    def invalidate(self, probe: BloomFilter) -> set:
        """Collect and remove every filter that contains the probe."""
        self._check_config(probe)
        out = []
        self._travel(self.root, probe.bits, 0, out, remove=True,
                      exact=None, containment=True)
        if out:
            self._add_count(-len(out))
        return {eid for _, eid in out}

    def probe(self, probe: BloomFilter) -> set:
        """Read-only variant of invalidate."""
        self._check_config(probe)
        out = []
        self._travel(self.root, probe.bits, 0, out, remove=False,
                      exact=None, containment=True)
        return {eid for _, eid in out}

    # -- traversal ---------------------------------------------------------

    @staticmethod
    def _lock_alive(node):
        while node is not None:
            node.lock.acquire()
            if not node.dead:
                return node
            nxt = node.forward
            node.lock.release()
            node = nxt
        return None

    def _travel(self, node, bits, snap, out, remove, exact, containment):
        while node is not None:
            if exact is not None and out:
                return
            node = self._lock_alive(node)
            if node is None:
                return
            if node.mask & bits == bits:
                if node.is_leaf:
                    self._scan_leaf(node, bits, out, remove, exact, containment)
                    chase = node.right if node.last_shed >= snap else None
                    node.lock.release()
                else:
                    chase = self._scan_internal(node, bits, snap, out, remove,
                                                exact, containment)
            else:
                chase = node.right if node.last_shed >= snap else None
                node.lock.release()
            node = chase

    def _scan_leaf(self, leaf, bits, out, remove, exact, containment):
        entries = leaf.entries
        if exact is not None:
            for i, e in enumerate(entries):
                if e == exact:
                    out.append(e)
                    if remove:
                        del entries[i]
                    return
            return
        if containment:
            hit = [e for e in entries if e[0] & bits == bits]
        else:
            hit = []
        if hit:
            out.extend(hit)
            if remove:
                leaf.entries = [e for e in entries if e[0] & bits != bits]

    def _scan_internal(self, node, bits, snap, out, remove, exact, containment):
        mysnap = monotonic_ns()
        candidates = [c for c in node.children if c.mask & bits == bits]
        if remove:
            underflow = sum(1 for c in node.children
                            if c.width() < self._min_width)
            if underflow:
                node.rebal_hint += underflow
        do_rebal = remove and node.rebal_hint > 0
        chase = node.right if node.last_shed >= snap else None
        node.lock.release()

        for child in candidates:
            if exact is not None and out:
                break
            self._travel(child, bits, mysnap, out, remove, exact, containment)

        if do_rebal and node.format_lock.acquire(blocking=False):
            try:
                self._rebalance_children(node)
            finally:
                node.format_lock.release()
        return chase

    # -- deferred rebalancing -----------------------------------------------

    def _rebalance_children(self, node) -> bool:
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
                    self._borrow_from_left(left, child)
                    left.lock.release()
                    child.lock.release()
                    i += 1
                else:
                    self._merge_into_right(node, i - 1, left, child)
                    child.lock.release()
                    i -= 1
            else:
                right = node.children[1]
                right.lock.acquire()
                self._merge_into_right(node, 0, child, right)
                if right.width() > self.arity:
                    # merging into a rich sibling can overflow; shed right
                    self._split_overfull(node, 0, right)
                right.lock.release()
        if node is self.root and not node.is_leaf and len(node.children) == 1:
            self._collapse_root(node)
            changed = True
        node.mask = node.local_mask()
        node.lock.release()
        return changed

    def _borrow_from_left(self, left, child) -> None:
        take = (left.width() + child.width()) // 2 - child.width()
        if take <= 0:
            return
        if child.is_leaf:
            moved = left.entries[-take:]
            del left.entries[-take:]
            child.entries[:0] = moved
        else:
            moved = left.children[-take:]
            del left.children[-take:]
            child.children[:0] = moved
        left.last_shed = monotonic_ns()
        left.mask = left.local_mask()
        child.mask = child.local_mask()

    def _merge_into_right(self, node, left_index, left, right) -> None:
        if right.is_leaf:
            right.entries[:0] = left.entries
        else:
            right.children[:0] = left.children
        del node.children[left_index]
        right.mask = right.local_mask()
        left.dead = True
        left.forward = right
        left.entries = [] if left.is_leaf else None
        left.children = None if left.is_leaf else []
        left.mask = 0
        left.lock.release()

    def _collapse_root(self, root) -> None:
        child = root.children[0]
        child.lock.acquire()
        root.is_leaf = child.is_leaf
        root.entries = child.entries
        root.children = child.children
        root.mask = child.mask
        child.dead = True
        child.forward = root
        child.entries = None
        child.children = None
        child.lock.release()

    # -- maintenance and inspection -----------------------------------------

    def bulk_load(self, pairs) -> None:
        """Build from (filter, entry_id) pairs; empty tree, single thread."""
        if self._count:
            raise RuntimeError("bulk_load requires an empty tree")
        entries = []
        for f, eid in pairs:
            self._check_config(f)
            entries.append((f.bits, eid))
        self._count = len(entries)
        if not entries:
            return
        fill = max(2, (self.arity * 3) // 4)
        level = []
        for i in range(0, len(entries), fill):
            n = _Node(is_leaf=True)
            n.entries = entries[i:i + fill]
            n.mask = n.local_mask()
            level.append(n)
        for a, b in zip(level, level[1:]):
            a.right = b
        while len(level) > 1:
            parents = []
            for i in range(0, len(level), fill):
                n = _Node(is_leaf=False)
                n.children = level[i:i + fill]
                n.mask = n.local_mask()
                parents.append(n)
            for a, b in zip(parents, parents[1:]):
                a.right = b
            level = parents
        top = level[0]
        root = self.root
        root.is_leaf = top.is_leaf
        root.entries = top.entries
        root.children = top.children
        root.mask = top.mask

    def audit_and_tighten(self) -> list:
        """Recompute every mask bottom-up and verify structure.

        Single-threaded maintenance; returns all stored (bits, entry_id)
        pairs. After this pass every node's mask equals the exact OR of
        its subtree.
        """
        pairs = []
        self._tighten(self.root, pairs)
        if len(pairs) != self._count:
            raise AssertionError(
                f"entry_count {self._count} != stored {len(pairs)}")
        return pairs

    def _tighten(self, node, pairs) -> int:
        if node.dead:
            raise AssertionError("dead node reachable from root")
        if node.width() > self.arity:
            raise AssertionError("overfull node")
        if node.is_leaf:
            mask = 0
            for bits, eid in node.entries:
                pairs.append((bits, eid))
                mask |= bits
        else:
            mask = 0
            for child in node.children:
                mask |= self._tighten(child, pairs)
        node.mask = mask
        return mask

    def audit(self) -> list:
        """Verify masks are sound over-approximations; returns stored pairs."""
        pairs = []
        self._audit_node(self.root, pairs)
        if len(pairs) != self._count:
            raise AssertionError(
                f"entry_count {self._count} != stored {len(pairs)}")
        return pairs

    def _audit_node(self, node, pairs) -> int:
        if node.dead:
            raise AssertionError("dead node reachable from root")
        if node.is_leaf:
            mask = 0
            for bits, eid in node.entries:
                pairs.append((bits, eid))
                mask |= bits
        else:
            mask = 0
            for child in node.children:
                mask |= self._audit_node(child, pairs)
        if node.mask & mask != mask:
            raise AssertionError("node mask misses subtree bits")
        return mask

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
