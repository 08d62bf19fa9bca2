from __future__ import annotations

from collections import OrderedDict
from typing import Any, Hashable


class MetadataCache:
    """Fully associative LRU cache of 64-B metadata lines.

    Entries are ``[value, dirty]`` lists owned by the caller; eviction hands
    back the victim so the caller can write it back.
    """

    def __init__(self, capacity_bytes: int = 32 * 1024, line_size: int = 64):
        if capacity_bytes < line_size:
            raise ValueError("cache must hold at least one line")
        self.capacity_bytes = capacity_bytes
        self.line_size = line_size
        self.n_lines = capacity_bytes // line_size
        self.lines: OrderedDict[Hashable, list] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def lookup(self, key: Hashable) -> list | None:
        entry = self.lines.get(key)
        if entry is None:
            self.misses += 1
            return None
        self.hits += 1
        self.lines.move_to_end(key)
        return entry

    def insert(self, key: Hashable, value: Any, dirty: bool = False) -> tuple[list, tuple | None]:
        """Insert a line; returns (entry, evicted (key, entry) or None)."""
        entry = [value, dirty]
        self.lines[key] = entry
        self.lines.move_to_end(key)
        victim = None
        if len(self.lines) > self.n_lines:
            victim = self.lines.popitem(last=False)
        return entry, victim

    def __contains__(self, key: Hashable) -> bool:
        return key in self.lines

    def __len__(self) -> int:
        return len(self.lines)

    def drain(self) -> list[tuple[Hashable, list]]:
        """Remove and return every line, oldest first."""
        items = list(self.lines.items())
        self.lines.clear()
        return items
