"""Data-driven building and street-prop catalogs.

The default catalog covers the asset classes downstream systems rely on:
restaurants (delivery order sources), landmarks (task goals and dropoffs),
sittable props (planner worked example), and generic clutter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .scene import Category


@dataclass(frozen=True)
class BuildingSpec:
    name: str
    frontage: float  # extent along the road, meters
    depth: float     # extent away from the road, meters
    tags: tuple
    weight: float = 1.0


@dataclass(frozen=True)
class PropSpec:
    name: str
    width: float
    depth: float
    category: Category
    tags: tuple
    weight: float = 1.0


DEFAULT_BUILDINGS = [
    BuildingSpec("house", 10.0, 8.0, (), 4.0),
    BuildingSpec("shop", 12.0, 10.0, ("landmark",), 2.0),
    BuildingSpec("restaurant", 10.0, 10.0, ("restaurant", "landmark"), 2.0),
    BuildingSpec("office", 18.0, 14.0, ("landmark",), 1.0),
    BuildingSpec("hospital", 20.0, 16.0, ("landmark", "hospital"), 0.5),
    BuildingSpec("museum", 16.0, 12.0, ("landmark", "museum"), 0.5),
]

DEFAULT_PROPS = [
    PropSpec("tree", 1.0, 1.0, Category.VEGETATION, ("tree",), 3.0),
    PropSpec("bench", 1.8, 0.6, Category.URBAN_PROP, ("bench", "sittable"), 1.5),
    PropSpec("chair", 0.5, 0.5, Category.URBAN_PROP, ("chair", "sittable"), 1.0),
    PropSpec("bin", 0.6, 0.6, Category.URBAN_PROP, ("bin",), 1.5),
    PropSpec("cone", 0.4, 0.4, Category.URBAN_PROP, ("cone",), 1.0),
    PropSpec("parked_vehicle", 4.5, 2.0, Category.URBAN_PROP, ("parked_vehicle",), 0.5),
]


@dataclass(frozen=True)
class Catalog:
    buildings: tuple
    props: tuple

    @staticmethod
    def default() -> "Catalog":
        return Catalog(tuple(DEFAULT_BUILDINGS), tuple(DEFAULT_PROPS))

    @staticmethod
    def from_json(text: str) -> "Catalog":
        doc = json.loads(text)
        buildings = tuple(
            BuildingSpec(b["name"], b["frontage"], b["depth"],
                         tuple(b.get("tags", ())), b.get("weight", 1.0))
            for b in doc.get("buildings", [])
        )
        props = tuple(
            PropSpec(p["name"], p["width"], p["depth"],
                     Category(p.get("category", "urban_prop")),
                     tuple(p.get("tags", ())), p.get("weight", 1.0))
            for p in doc.get("props", [])
        )
        return Catalog(buildings or tuple(DEFAULT_BUILDINGS),
                       props or tuple(DEFAULT_PROPS))

    @staticmethod
    def load(path: str) -> "Catalog":
        with open(path, "r", encoding="utf-8") as fh:
            return Catalog.from_json(fh.read())


def weighted_choice(rng, specs):
    """Deterministic weighted pick using a single uniform draw."""
    total = sum(s.weight for s in specs)
    r = rng.random() * total
    acc = 0.0
    for s in specs:
        acc += s.weight
        if r < acc:
            return s
    return specs[-1]
