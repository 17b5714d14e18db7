"""Seeded synthetic user/item/interaction corpus.

A low-rank user-by-item affinity drives both ratings and which items a
user interacts with, so there is learnable structure at desk scale.  All
text fields are deterministic functions of attributes and the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Dict, List

import numpy as np

BRANDS = ["Nike", "Acme", "Bolt", "Cedar", "Delta", "Ember", "Flux", "Gale"]
CATEGORIES = [
    "t-shirt",
    "sneaker",
    "backpack",
    "jacket",
    "water bottle",
    "headphones",
    "notebook",
    "lamp",
]
ADJECTIVES = ["classic", "sport", "travel", "urban", "eco", "pro", "mini", "deluxe"]
SENTIMENTS = {
    1: ("terrible", "regret buying it"),
    2: ("disappointing", "would not recommend it"),
    3: ("decent", "does the job"),
    4: ("great", "happy with the purchase"),
    5: ("excellent", "could not ask for more"),
}


@dataclass
class Item:
    item_id: str
    name: str
    brand: str
    category: str

    @property
    def description(self) -> str:
        # fixed attribute-pattern description; the text view of the item
        return f"Category: {self.category}. Brand: {self.brand}. Name: {self.name}."


@dataclass
class Interaction:
    user_id: str
    item_id: str
    timestamp: int
    rating: int
    review: str
    explanation: str
    summary: str
    feature: str


@dataclass
class Catalog:
    users: List[str]
    items: List[Item]
    interactions: Dict[str, List[Interaction]]  # per user, timestamp order

    def item(self, item_id: str) -> Item:
        return self._index()[item_id]

    def _index(self) -> Dict[str, Item]:
        if not hasattr(self, "_item_index"):
            object.__setattr__(self, "_item_index", {i.item_id: i for i in self.items})
        return getattr(self, "_item_index")

    def all_texts(self) -> List[str]:
        """Every text field; used to build the tokenizer vocabulary."""
        texts = [i.description for i in self.items]
        for inters in self.interactions.values():
            for it in inters:
                texts.extend([it.review, it.explanation, it.summary, it.feature])
        return texts


def generate_catalog(
    seed: int,
    n_users: int = 20,
    n_items: int = 50,
    n_interactions_per_user: int = 8,
    k_negatives: int = 10,
) -> Catalog:
    if n_items <= k_negatives + 1:
        raise ValueError(
            f"n_items={n_items} too small: contrastive sampling with "
            f"K={k_negatives} negatives needs at least K+2 items"
        )
    if n_interactions_per_user < 3:
        raise ValueError("each user needs at least 3 interactions")
    if n_interactions_per_user > n_items:
        raise ValueError("cannot draw more distinct interactions than items")
    rng = np.random.default_rng(seed)

    items = []
    for i in range(1, n_items + 1):
        brand = BRANDS[rng.integers(len(BRANDS))]
        category = CATEGORIES[rng.integers(len(CATEGORIES))]
        adj = ADJECTIVES[rng.integers(len(ADJECTIVES))]
        items.append(
            Item(
                item_id=f"item_{i}",
                # model number keeps names unique so descriptions identify items
                name=f"{adj} {category} {i}",
                brand=brand,
                category=category,
            )
        )
    users = [f"user_{u}" for u in range(1, n_users + 1)]

    # latent affinity: rank-4 dot product, standardized
    rank = 4
    u_lat = rng.normal(size=(n_users, rank))
    i_lat = rng.normal(size=(n_items, rank))
    affinity = u_lat @ i_lat.T
    affinity = (affinity - affinity.mean()) / (affinity.std() + 1e-12)

    interactions: Dict[str, List[Interaction]] = {}
    for ui, user in enumerate(users):
        # prefer high-affinity items, without replacement
        logits = affinity[ui] * 2.0
        p = np.exp(logits - logits.max())
        p /= p.sum()
        chosen = rng.choice(n_items, size=n_interactions_per_user, replace=False, p=p)
        rows = []
        for ts, ii in enumerate(chosen):
            item = items[ii]
            raw = 3.0 + 1.6 * affinity[ui, ii] + rng.normal(0.0, 0.4)
            rating = int(np.clip(round(raw), 1, 5))
            word, clause = SENTIMENTS[rating]
            feature = item.category if rng.random() < 0.5 else item.brand
            rows.append(
                Interaction(
                    user_id=user,
                    item_id=item.item_id,
                    timestamp=ts,
                    rating=rating,
                    review=(
                        f"this {item.category} from {item.brand} is {word} and i {clause}"
                    ),
                    explanation=(
                        f"the user values the {feature} so this {word} {item.category} fits"
                    ),
                    summary=f"{word} {item.category}",
                    feature=feature,
                )
            )
        interactions[user] = rows
    return Catalog(users=users, items=items, interactions=interactions)


def save_catalog(path: str, catalog: Catalog) -> None:
    """Line-delimited JSON: one record per user, item, or interaction."""
    with open(path, "w") as fh:
        for user in catalog.users:
            fh.write(json.dumps({"kind": "user", "user_id": user}) + "\n")
        for item in catalog.items:
            fh.write(json.dumps({"kind": "item", **asdict(item)}) + "\n")
        for user in catalog.users:
            for it in catalog.interactions[user]:
                fh.write(json.dumps({"kind": "interaction", **asdict(it)}) + "\n")


def load_catalog(path: str) -> Catalog:
    users: List[str] = []
    items: List[Item] = []
    interactions: Dict[str, List[Interaction]] = {}
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            kind = rec.pop("kind")
            if kind == "user":
                users.append(rec["user_id"])
                interactions.setdefault(rec["user_id"], [])
            elif kind == "item":
                items.append(Item(**rec))
            elif kind == "interaction":
                interactions.setdefault(rec["user_id"], []).append(Interaction(**rec))
            else:
                raise ValueError(f"unknown record kind: {kind!r}")
    for user in interactions:
        interactions[user].sort(key=lambda r: r.timestamp)
    return Catalog(users=users, items=items, interactions=interactions)
