"""Planted-pattern toy corpus.

Every session is ``[anchor, distractor, target]``: the anchor is a uniformly drawn core product
of some brand, the distractor an accessory of a different brand, and the target another core
product of the anchor's brand, drawn with a popularity skew. The next item after a
two-item prefix therefore shares the brand of the first item, not the last one.
Categories are product types (one per position within a brand), so a category never
links an anchor to its target; brand, title brand token, buyers and co-occurrence do.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CORE_PER_BRAND = 6
CORE_POPULARITY = np.array([0.5, 0.25, 0.1, 0.07, 0.05, 0.03])
CORE_NOUNS = ["serum", "cream", "lotion", "cleanser", "toner", "mask"]
ACCESSORY_NOUNS = ["case", "pouch", "brush", "mirror"]
ADJECTIVES = ["gentle", "daily", "hydrating", "classic", "travel", "deluxe", "fresh", "soft"]
IMAGE_LABELS = [
    "pearl", "bottle", "tube", "jar", "leaf", "flower", "metal", "glass", "pink", "white",
    "gold", "silver", "pump", "cap", "box", "pattern", "stripe", "dot", "gem", "ribbon",
]


@dataclass
class PlantedCorpus:
    interactions: Path
    metadata: Path
    image_labels: Path
    n_products: int
    n_brands: int


def product_id(i: int) -> str:
    return f"p{i:03d}"


def make_planted_corpus(
    directory,
    seed: int = 0,
    n_products: int = 200,
    n_brands: int = 20,
    n_users: int = 50,
    days: int = 24,
) -> PlantedCorpus:
    per_brand = n_products // n_brands
    if per_brand <= CORE_PER_BRAND:
        raise ValueError("need more than 6 products per brand")
    rng = np.random.default_rng(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def core(b):
        return [b * per_brand + j for j in range(CORE_PER_BRAND)]

    def accessories(b):
        return [b * per_brand + j for j in range(CORE_PER_BRAND, per_brand)]

    events = []
    for u in range(n_users):
        favourites = rng.choice(n_brands, size=2, replace=False)
        for day in range(days):
            brand = int(rng.choice(favourites)) if rng.random() < 0.8 else int(rng.integers(n_brands))
            items = core(brand)
            anchor = int(rng.choice(items))
            weights = np.where(np.array(items) == anchor, 0.0, CORE_POPULARITY)
            target = int(rng.choice(items, p=weights / weights.sum()))
            other = int(rng.choice([b for b in range(n_brands) if b != brand]))
            distractor = int(rng.choice(accessories(other)))
            base = day * 86400 + 3600 * int(rng.integers(1, 12))
            for k, item in enumerate((anchor, distractor, target)):
                events.append((f"u{u:02d}", product_id(item), base + 60 * k))

    interactions = directory / "interactions.tsv"
    with open(interactions, "w", encoding="utf-8") as fh:
        for user, item, ts in events:
            fh.write(f"{user}\t{item}\t{ts}\n")

    metadata = directory / "metadata.jsonl"
    with open(metadata, "w", encoding="utf-8") as fh:
        for i in range(n_products):
            b, j = divmod(i, per_brand)
            is_core = j < CORE_PER_BRAND
            mates = core(b) if is_core else accessories(b)
            mates = [m for m in mates if m != i]
            noun = CORE_NOUNS[j] if is_core else ACCESSORY_NOUNS[(j - CORE_PER_BRAND) % len(ACCESSORY_NOUNS)]
            bought = [product_id(int(m)) for m in rng.choice(mates, size=2, replace=False)]
            viewed = [product_id(int(m)) for m in rng.choice(mates, size=2, replace=False)]
            if rng.random() < 0.3:
                bought.append(f"x{int(rng.integers(60)):03d}")
            if rng.random() < 0.3:
                viewed.append(f"x{int(rng.integers(60)):03d}")
            record = {
                "item_id": product_id(i),
                "brand": f"Brand {b:02d}",
                "categories": [[noun.capitalize() + "s"]],
                "title": f"Brand{b:02d} {ADJECTIVES[int(rng.integers(len(ADJECTIVES)))]} {noun}",
                "also_bought": bought,
                "also_viewed": viewed,
            }
            if rng.random() < 0.2:
                record["bought_together"] = [product_id(int(rng.choice(mates)))]
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    image_labels = directory / "image_labels.tsv"
    with open(image_labels, "w", encoding="utf-8") as fh:
        for i in range(n_products):
            for label in rng.choice(IMAGE_LABELS, size=6, replace=False):
                fh.write(f"{product_id(i)}\t{label}\t{rng.uniform(0.2, 0.95):.3f}\n")

    return PlantedCorpus(interactions, metadata, image_labels, n_products, n_brands)
