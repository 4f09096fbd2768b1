from typing import Dict, List


class UnionFind:
    """Disjoint sets over 0..size-1 with path compression and a component counter"""

    def __init__(self, size: int):
        self.size = size
        self.parents = list(range(size))
        self.num_components = size

    def find(self, elem: int) -> int:
        root = elem
        while root != self.parents[root]:
            root = self.parents[root]

        # compress the path so every visited element points at the root
        while elem != root:
            parent = self.parents[elem]
            self.parents[elem] = root
            elem = parent
        return root

    def union(self, a: int, b: int) -> bool:
        """Merge the sets of a and b; returns True when they were separate"""
        root_a = self.find(a)
        root_b = self.find(b)
        if root_a == root_b:
            return False

        # smaller root wins so components are labelled by their lowest member
        if root_b < root_a:
            root_a, root_b = root_b, root_a
        self.parents[root_b] = root_a
        self.num_components -= 1
        return True

    @property
    def connected(self) -> bool:
        return self.num_components <= 1

    def components(self) -> List[List[int]]:
        groups: Dict[int, List[int]] = {}
        for i in range(self.size):
            groups.setdefault(self.find(i), []).append(i)
        return sorted(groups.values(), key=lambda members: members[0])
