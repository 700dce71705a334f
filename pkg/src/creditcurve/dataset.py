"""In-memory market dataset shared by the loaders, the generator and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ValidationError
from .instruments import CorporateBond, GovernmentBond


@dataclass(frozen=True, eq=False)
class MarketDataset:
    gov_bonds: tuple
    corp_bonds: tuple
    industries: tuple
    ratings: tuple
    valuation_date: str = ""
    frequency: int = 2
    truth: dict | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "gov_bonds", tuple(self.gov_bonds))
        object.__setattr__(self, "corp_bonds", tuple(self.corp_bonds))
        object.__setattr__(self, "industries", tuple(self.industries))
        object.__setattr__(self, "ratings", tuple(self.ratings))
        J, I = len(self.industries), len(self.ratings)
        for b in self.gov_bonds:
            if not isinstance(b, GovernmentBond):
                raise ValidationError(f"{b!r} is not a government bond")
        for b in self.corp_bonds:
            if not isinstance(b, CorporateBond):
                raise ValidationError(f"{b!r} is not a corporate bond")
            if not 1 <= b.grade <= I:
                raise ValidationError(f"bond {b.id}: grade {b.grade} outside the {I} declared ratings")
            if len(b.portfolio) != J:
                raise ValidationError(f"bond {b.id}: portfolio covers {len(b.portfolio)} industries, {J} declared")
        ids = [b.id for b in self.gov_bonds] + [b.id for b in self.corp_bonds]
        if len(set(ids)) != len(ids):
            raise ValidationError("bond ids are not unique")

    def grade_index(self, label) -> int:
        """1-based grade for a rating label or a 1-based index given as text."""
        if label in self.ratings:
            return self.ratings.index(label) + 1
        try:
            i = int(label)
        except (TypeError, ValueError):
            raise ValidationError(f"unknown rating {label!r}; declared {list(self.ratings)}") from None
        if not 1 <= i <= len(self.ratings):
            raise ValidationError(f"rating index {i} outside 1..{len(self.ratings)}")
        return i

    def industry_index(self, label) -> int:
        """0-based industry for a name or a 1-based index given as text."""
        if label in self.industries:
            return self.industries.index(label)
        try:
            j = int(label)
        except (TypeError, ValueError):
            raise ValidationError(f"unknown industry {label!r}; declared {list(self.industries)}") from None
        if not 1 <= j <= len(self.industries):
            raise ValidationError(f"industry index {j} outside 1..{len(self.industries)}")
        return j - 1

    def corp_bond(self, bond_id: str) -> CorporateBond:
        for b in self.corp_bonds:
            if b.id == bond_id:
                return b
        raise ValidationError(f"no corporate bond with id {bond_id!r}")

    def issuer(self, issuer_id: str) -> CorporateBond:
        """First bond of an issuer; carries its grade and portfolio."""
        for b in self.corp_bonds:
            if b.issuer == issuer_id:
                return b
        raise ValidationError(f"no issuer {issuer_id!r}")
