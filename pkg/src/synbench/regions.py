"""Hierarchical region codes and the neighbor/sub-region algebra.

Region codes are dot-separated strings with up to three levels, finest
last ("8.3.5" lies inside "8.3", which lies inside "8").  Tokens are
opaque, so synthetic worlds may use codes like "S1.2.3" next to the
EPA-style numeric ones; all classification below depends only on prefix
structure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class RegionError(ValueError):
    """Malformed region code or a code outside the active taxonomy."""


class NeighborClass(Enum):
    """Relation of another level-III region to a level-III region of interest."""

    SELF = "self"
    CLOSE = "close"          # same level-II parent, different level-III
    FAR = "far"              # same level-I parent, different level-II
    DISSIMILAR = "dissimilar"  # different level-I parent


@dataclass(frozen=True, order=True)
class RegionCode:
    """A 1-3 level hierarchical region code."""

    parts: tuple[str, ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.parts) <= 3:
            raise RegionError(
                f"region code must have 1-3 levels, got {len(self.parts)}: "
                f"{'.'.join(self.parts)!r}"
            )
        for tok in self.parts:
            if not tok:
                raise RegionError(f"empty token in region code {'.'.join(self.parts)!r}")
            if "." in tok or any(ch.isspace() for ch in tok):
                raise RegionError(f"invalid token {tok!r} in region code")

    @property
    def depth(self) -> int:
        return len(self.parts)

    @property
    def level1(self) -> str:
        return self.parts[0]

    @property
    def level2(self) -> str | None:
        return ".".join(self.parts[:2]) if len(self.parts) >= 2 else None

    @property
    def level3(self) -> str | None:
        return ".".join(self.parts[:3]) if len(self.parts) >= 3 else None

    def prefix(self, depth: int) -> "RegionCode":
        """The ancestor code truncated to `depth` levels."""
        if not 1 <= depth <= self.depth:
            raise RegionError(f"no depth-{depth} prefix of {self}")
        return RegionCode(self.parts[:depth])

    def is_prefix_of(self, other: "RegionCode") -> bool:
        return other.parts[: len(self.parts)] == self.parts

    def __str__(self) -> str:
        return ".".join(self.parts)


def parse_region_code(text: str) -> RegionCode:
    """Parse a dot-separated region code string.

    Raises RegionError naming the offending token on empty tokens or
    more than three levels.
    """
    if not isinstance(text, str) or not text:
        raise RegionError(f"region code must be a non-empty string, got {text!r}")
    return RegionCode(tuple(text.split(".")))


def render_region_code(code: RegionCode) -> str:
    return str(code)


def classify_neighbor(roi: RegionCode, other: RegionCode) -> NeighborClass:
    """Classify `other` relative to `roi`; both must be full level-III codes."""
    for name, code in (("roi", roi), ("other", other)):
        if code.depth != 3:
            raise RegionError(f"{name} must be a level-III code, got {code!r}")
    if roi.parts == other.parts:
        return NeighborClass.SELF
    if roi.parts[:2] == other.parts[:2]:
        return NeighborClass.CLOSE
    if roi.parts[0] == other.parts[0]:
        return NeighborClass.FAR
    return NeighborClass.DISSIMILAR


@dataclass(frozen=True)
class SubRegion:
    """One lettered experimental sub-region: a disjoint set of member codes.

    Members may sit at level I or level II; a site belongs to the letter
    whose member set contains the longest prefix of the site's code.
    """

    letter: str
    member_codes: frozenset[RegionCode]

    def __post_init__(self) -> None:
        if not self.letter:
            raise RegionError("sub-region letter must be non-empty")
        if not self.member_codes:
            raise RegionError(f"sub-region {self.letter!r} has no member codes")


class Taxonomy:
    """An immutable letter-to-member-codes mapping with prefix lookup."""

    def __init__(self, subregions: Sequence[SubRegion]):
        self.subregions: tuple[SubRegion, ...] = tuple(subregions)
        index: dict[RegionCode, str] = {}
        for sub in self.subregions:
            for code in sub.member_codes:
                if code in index:
                    raise RegionError(
                        f"member code {code} appears in sub-regions "
                        f"{index[code]!r} and {sub.letter!r}"
                    )
                index[code] = sub.letter
        letters = [s.letter for s in self.subregions]
        if len(set(letters)) != len(letters):
            raise RegionError("duplicate sub-region letters")
        self._by_letter: dict[str, SubRegion] = {s.letter: s for s in self.subregions}
        self._member_index = index

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(s.letter for s in self.subregions)

    def subregion(self, letter: str) -> SubRegion:
        try:
            return self._by_letter[letter]
        except KeyError:
            raise RegionError(f"unknown sub-region letter {letter!r}") from None

    def subregion_of(self, code: RegionCode) -> SubRegion:
        """Letter whose member set contains the longest prefix of `code`."""
        for depth in range(code.depth, 0, -1):
            letter = self._member_index.get(code.prefix(depth))
            if letter is not None:
                return self._by_letter[letter]
        raise RegionError(f"region {code} is not covered by the taxonomy")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Taxonomy) and self.subregions == other.subregions

    def __repr__(self) -> str:
        return f"Taxonomy({len(self.subregions)} sub-regions)"


def _sub(letter: str, *codes: str) -> SubRegion:
    return SubRegion(letter, frozenset(parse_region_code(c) for c in codes))


#: The built-in 18-letter sub-region table over EPA-style codes. Level-I
#: regions 8, 9 and 10 enter through their level-II subdivisions; 14 and 15
#: are merged into one letter.
EPA_SUBREGIONS = Taxonomy(
    [
        _sub("A", "5"),
        _sub("B", "6"),
        _sub("C", "7"),
        _sub("D", "8.1"),
        _sub("E", "8.2"),
        _sub("F", "8.3"),
        _sub("G", "8.4"),
        _sub("H", "8.5"),
        _sub("I", "9.2"),
        _sub("J", "9.3"),
        _sub("K", "9.4"),
        _sub("L", "9.5", "9.6"),
        _sub("M", "10.1"),
        _sub("N", "10.2"),
        _sub("O", "11.1"),
        _sub("P", "12.1"),
        _sub("Q", "13"),
        _sub("R", "14", "15"),
    ]
)


def subregion_of(code: RegionCode, taxonomy: Taxonomy = EPA_SUBREGIONS) -> SubRegion:
    """Map a region code to its sub-region letter entry."""
    return taxonomy.subregion_of(code)


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Load a taxonomy from CSV with columns `letter,codes`.

    `codes` is a semicolon-separated member list, e.g. `L,9.5;9.6`.
    """
    path = Path(path)
    subregions = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["letter", "codes"]:
            raise RegionError(f"{path}: expected header 'letter,codes'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise RegionError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            letter, codes = row[0].strip(), row[1].strip()
            members = [tok.strip() for tok in codes.split(";") if tok.strip()]
            if not members:
                raise RegionError(f"{path}:{lineno}: sub-region {letter!r} has no codes")
            subregions.append(_sub(letter, *members))
    if not subregions:
        raise RegionError(f"{path}: no sub-regions defined")
    return Taxonomy(subregions)


def save_taxonomy(taxonomy: Taxonomy, path: str | Path) -> None:
    """Write a taxonomy in the `letter,codes` CSV format."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["letter", "codes"])
        for sub in taxonomy.subregions:
            codes = ";".join(sorted(str(c) for c in sub.member_codes))
            writer.writerow([sub.letter, codes])


def letter_name(i: int) -> str:
    """A, B, ..., Z, AA, AB, ... for generated taxonomies."""
    if i < 0:
        raise ValueError("letter index must be non-negative")
    name = ""
    i += 1
    while i > 0:
        i, rem = divmod(i - 1, 26)
        name = chr(ord("A") + rem) + name
    return name


def taxonomy_from_codes(codes: Iterable[RegionCode], level: int) -> Taxonomy:
    """Generate a taxonomy with one letter per distinct level-`level` prefix.

    Prefixes are lettered in sorted order, so the mapping is stable for a
    given universe of codes.
    """
    if level not in (1, 2):
        raise RegionError(f"taxonomy grouping level must be 1 or 2, got {level}")
    prefixes = sorted({c.prefix(min(level, c.depth)) for c in codes})
    return Taxonomy(
        [SubRegion(letter_name(i), frozenset([p])) for i, p in enumerate(prefixes)]
    )


def validate_partition(
    roi: RegionCode, universe: Iterable[RegionCode]
) -> Mapping[NeighborClass, tuple[RegionCode, ...]]:
    """Group a universe of level-III codes by neighbor class relative to `roi`.

    The four groups are disjoint by construction; returned for test and
    report use.
    """
    groups: dict[NeighborClass, list[RegionCode]] = {c: [] for c in NeighborClass}
    for code in universe:
        groups[classify_neighbor(roi, code)].append(code)
    return {c: tuple(v) for c, v in groups.items()}
