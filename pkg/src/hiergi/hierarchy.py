"""Three-level label taxonomy (tract -> category -> finding) and probability aggregation.

Coarse-level probabilities are never predicted directly: the classifier emits one
logit per leaf finding, and tract/category probabilities are obtained by summing
leaf probabilities over the group memberships defined here.
"""

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.special import logsumexp

PROB_SUM_TOL = 1e-6


class TaxonomyError(ValueError):
    """Raised when a taxonomy document is malformed."""


@dataclass(frozen=True)
class AggregationMap:
    """Membership of leaf findings in one coarse level's groups.

    level is "tract", "category" (per-tract cells) or "category-global".
    membership[g] holds the leaf indices belonging to coarse class g; the
    groups partition {0, ..., n_find - 1}.
    """

    level: str
    group_names: tuple
    membership: tuple  # tuple of tuples of leaf indices

    @property
    def n_groups(self):
        return len(self.group_names)


@dataclass(frozen=True)
class LabelHierarchy:
    findings: tuple
    categories: tuple
    tracts: tuple
    finding_to_category: tuple  # leaf index -> category index
    finding_to_tract: tuple     # leaf index -> tract index
    _maps: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_find(self):
        return len(self.findings)

    @property
    def n_cat(self):
        return len(self.categories)

    @property
    def n_tract(self):
        return len(self.tracts)

    def tract_map(self):
        return self._maps["tract"]

    def category_map(self, per_tract=True):
        """Category-level aggregation map.

        per_tract=True (default) groups findings by (tract, category) cell, so
        e.g. pathological findings of the lower and upper tract are distinct
        groups. per_tract=False groups by category name alone.
        """
        return self._maps["category" if per_tract else "category-global"]

    def finding_index(self, name):
        try:
            return self.findings.index(name)
        except ValueError:
            raise TaxonomyError(f"unknown finding {name!r}") from None

    def content_hash(self):
        import hashlib
        doc = json.dumps(
            [self.findings, self.categories, self.tracts,
             self.finding_to_category, self.finding_to_tract]
        )
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _check_unique(names, kind):
    seen = set()
    for n in names:
        if n in seen:
            raise TaxonomyError(f"duplicate {kind} name {n!r}")
        seen.add(n)


def _build_maps(h):
    tract_members = [[] for _ in h.tracts]
    for i, t in enumerate(h.finding_to_tract):
        tract_members[t].append(i)
    maps = {
        "tract": AggregationMap(
            "tract", tuple(h.tracts), tuple(tuple(m) for m in tract_members)
        )
    }

    cat_members = [[] for _ in h.categories]
    for i, c in enumerate(h.finding_to_category):
        cat_members[c].append(i)
    maps["category-global"] = AggregationMap(
        "category-global", tuple(h.categories),
        tuple(tuple(m) for m in cat_members),
    )

    # per-tract cells, skipping empty (tract, category) combinations
    cells = {}
    for i, (t, c) in enumerate(zip(h.finding_to_tract, h.finding_to_category)):
        cells.setdefault((t, c), []).append(i)
    keys = sorted(cells)
    names = tuple(f"{h.tracts[t]}/{h.categories[c]}" for t, c in keys)
    maps["category"] = AggregationMap(
        "category", names, tuple(tuple(cells[k]) for k in keys)
    )
    maps["category-cells"] = tuple(keys)
    return maps


def load_hierarchy(source) -> LabelHierarchy:
    """Build a validated LabelHierarchy from a taxonomy document.

    source may be a dict, a JSON string, or a path to a JSON file with keys
    `tracts`, `categories`, `findings` (each finding: name/tract/category).
    """
    if isinstance(source, dict):
        doc = source
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        doc = json.loads(source)
    else:
        with open(source) as f:
            doc = json.load(f)

    for key in ("tracts", "categories", "findings"):
        if key not in doc or not doc[key]:
            raise TaxonomyError(f"taxonomy document has empty or missing {key!r}")

    tracts = list(doc["tracts"])
    categories = list(doc["categories"])
    _check_unique(tracts, "tract")
    _check_unique(categories, "category")

    names, f2c, f2t = [], [], []
    for entry in doc["findings"]:
        try:
            name, tract, cat = entry["name"], entry["tract"], entry["category"]
        except (TypeError, KeyError):
            raise TaxonomyError(f"finding entry {entry!r} missing name/tract/category")
        if tract not in tracts:
            raise TaxonomyError(f"finding {name!r} has unknown tract {tract!r}")
        if cat not in categories:
            raise TaxonomyError(f"finding {name!r} has unknown category {cat!r}")
        names.append(name)
        f2t.append(tracts.index(tract))
        f2c.append(categories.index(cat))
    _check_unique(names, "finding")

    if len(tracts) < 2 or len(categories) < 2:
        raise TaxonomyError("need at least 2 tracts and 2 categories")
    if not len(names) >= len(categories) >= len(tracts):
        raise TaxonomyError(
            f"level sizes must satisfy n_find >= n_cat >= n_tract, "
            f"got {len(names)}/{len(categories)}/{len(tracts)}"
        )

    h = LabelHierarchy(
        findings=tuple(names),
        categories=tuple(categories),
        tracts=tuple(tracts),
        finding_to_category=tuple(f2c),
        finding_to_tract=tuple(f2t),
    )
    h._maps.update(_build_maps(h))
    return h


def default_hierarchy() -> LabelHierarchy:
    """The bundled 23-finding GI taxonomy (2 tracts, 4 categories)."""
    text = resources.files("hiergi").joinpath("taxonomy.json").read_text()
    h = load_hierarchy(text)
    assert (h.n_tract, h.n_cat, h.n_find) == (2, 4, 23)
    return h


def aggregate_probs(p_find, agg: AggregationMap):
    """Sum leaf probabilities into coarse-group probabilities."""
    p = np.asarray(p_find, dtype=np.float64)
    n = max(max(m) for m in agg.membership) + 1
    if p.shape != (n,):
        raise ValueError(f"expected probability vector of length {n}, got shape {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_SUM_TOL:
        raise ValueError("p_find must be non-negative and sum to 1")
    return np.array([p[list(m)].sum() for m in agg.membership])


def aggregate_logits(z_find, agg: AggregationMap):
    """Coarse-group log-probabilities from leaf logits, computed in log-space.

    Equivalent to log(aggregate_probs(softmax(z))) but stable for large |z|.
    """
    z = np.asarray(z_find, dtype=np.float64)
    n = max(max(m) for m in agg.membership) + 1
    if z.shape != (n,):
        raise ValueError(f"expected logit vector of length {n}, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    total = logsumexp(z)
    return np.array([logsumexp(z[list(m)]) - total for m in agg.membership])
