"""Synthetic MovieLens-1M-format data with demographic-dependent tastes.

The real MovieLens files are not redistributable, so tests and demos use
this generator. Gender and age marginals follow MovieLens 1M (6040 users).
Item choice depends on a per-user taste vector that mixes a gender and an
age-bracket component with individual noise, so user factors learned from
the choices leak demographics the way the real data does.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import AGE_CODES

GENDER_P = np.array([4331, 1709]) / 6040
AGE_P = np.array([222, 1103, 2096, 1193, 550, 496, 380]) / 6040


def generate(
    n_users: int = 6040,
    n_items: int = 3706,
    mean_ratings: float = 165.0,
    min_ratings: int = 20,
    latent_dim: int = 8,
    gender_strength: float = 0.4,
    age_strength: float = 0.25,
    temperature: float = 1.0,
    seed: int = 0,
):
    """Return ``(ratings, users)`` as lists of tuples in file-field order."""
    rng = np.random.default_rng(seed)
    gender = rng.choice(2, size=n_users, p=GENDER_P)
    age = rng.choice(len(AGE_CODES), size=n_users, p=AGE_P)

    gender_dir = rng.normal(size=(2, latent_dim))
    age_dir = rng.normal(size=(len(AGE_CODES), latent_dim))
    taste = gender_strength * gender_dir[gender] + age_strength * age_dir[age] + rng.normal(size=(n_users, latent_dim))
    items = rng.normal(size=(n_items, latent_dim)) / np.sqrt(latent_dim)
    log_pop = rng.normal(0.0, 1.0, size=n_items)

    counts = min_ratings + rng.geometric(1.0 / max(mean_ratings - min_ratings, 1.0), size=n_users)
    counts = np.minimum(counts, n_items // 2)

    ratings = []
    t0 = 956703932
    for u in range(n_users):
        logits = log_pop + temperature * items @ taste[u]
        keys = logits + rng.gumbel(size=n_items)
        chosen = np.argpartition(-keys, counts[u])[: counts[u]]
        stamps = np.sort(rng.integers(0, 3 * 10**7, size=counts[u])) + t0
        order = rng.permutation(counts[u])
        stars = np.clip(np.round(3.6 + (logits[chosen] - logits[chosen].mean())), 1, 5).astype(int)
        for idx, r, ts in zip(chosen[order], stars[order], stamps):
            ratings.append((u + 1, int(idx) + 1, int(r), int(ts)))
    users = [
        (u + 1, "MF"[gender[u]], AGE_CODES[age[u]], int(rng.integers(0, 21)), f"{int(rng.integers(10000, 99999))}")
        for u in range(n_users)
    ]
    return ratings, users


def write_movielens(out_dir, ratings, users) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "ratings.dat", "w") as fh:
        fh.writelines(f"{u}::{i}::{r}::{t}\n" for u, i, r, t in ratings)
    with open(out_dir / "users.dat", "w") as fh:
        fh.writelines(f"{u}::{g}::{a}::{o}::{z}\n" for u, g, a, o, z in users)
    return out_dir
