from __future__ import annotations

from bisect import bisect_right


class KeystreamReuseError(RuntimeError):
    """A counter value would be used twice under the same key."""


class KeystreamAudit:
    """Records every (key, VN, block address) used for encryption.

    Addresses are tracked as merged half-open byte intervals per (key, VN);
    a claim that overlaps an earlier one is a counter reuse.
    """

    def __init__(self):
        self._spans: dict[tuple[str, int], tuple[list[int], list[int]]] = {}
        self.blocks = 0

    def _find(self, key: str, vn: int, start: int, end: int):
        spans = self._spans.get((key, vn))
        if spans is None:
            return None, -1, False
        starts, ends = spans
        i = bisect_right(starts, start) - 1
        hit = (i >= 0 and ends[i] > start) or (i + 1 < len(starts) and starts[i + 1] < end)
        return spans, i, hit

    def conflicts(self, key: str, vn: int, start: int, end: int) -> bool:
        return self._find(key, vn, start, end)[2]

    def claim(self, key: str, vn: int, start: int, end: int) -> None:
        spans, i, hit = self._find(key, vn, start, end)
        if hit:
            raise KeystreamReuseError(f"counter reuse: vn={vn:#x} addr=[{start:#x},{end:#x})")
        self.blocks += (end - start) // 16
        if spans is None:
            self._spans[(key, vn)] = ([start], [end])
            return
        starts, ends = spans
        # merge with neighbours when adjacent
        if i >= 0 and ends[i] == start:
            ends[i] = end
            if i + 1 < len(starts) and starts[i + 1] == end:
                ends[i] = ends.pop(i + 1)
                starts.pop(i + 1)
        elif i + 1 < len(starts) and starts[i + 1] == end:
            starts[i + 1] = start
        else:
            starts.insert(i + 1, start)
            ends.insert(i + 1, end)

    def forget(self, key: str) -> None:
        for k in [k for k in self._spans if k[0] == key]:
            del self._spans[k]
