"""MovieLens-1M ingestion, dense reindexing and the leave-last-out split."""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path
from typing import NamedTuple

import numpy as np

AGE_CODES = (1, 18, 25, 35, 45, 50, 56)
AGE_BRACKETS = ("0-18", "18-25", "25-35", "35-45", "45-50", "50-56", "56+")
GENDER_CODES = {"M": 0, "F": 1}
ATTRIBUTES = {"gender": 2, "age": len(AGE_CODES)}


class ParseError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class Interaction(NamedTuple):
    user_raw: int
    item_raw: int
    rating: int
    timestamp: int


class Demographics(NamedTuple):
    gender: int
    age_bracket: int


@dataclasses.dataclass(frozen=True)
class Dataset:
    """Implicit-feedback dataset with dense indices.

    ``train_positives[u]`` and ``train_timestamps[u]`` are parallel arrays in
    ascending (timestamp, item) order. ``test_item[u]`` is -1 when user ``u``
    has no held-out item.
    """

    user_ids: np.ndarray
    item_ids: np.ndarray
    train_positives: list
    train_timestamps: list
    test_item: np.ndarray
    test_timestamp: np.ndarray
    demographics: dict

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_train(self) -> int:
        return int(sum(len(p) for p in self.train_positives))

    def user_index(self, raw: int) -> int:
        return _lookup(self.user_ids, raw, "user")

    def item_index(self, raw: int) -> int:
        return _lookup(self.item_ids, raw, "item")

    def test_users(self) -> np.ndarray:
        return np.flatnonzero(self.test_item >= 0)

    def train_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All (user, item) training pairs as two flat int64 arrays, user-major."""
        lengths = np.array([len(p) for p in self.train_positives], dtype=np.int64)
        users = np.repeat(np.arange(self.n_users, dtype=np.int64), lengths)
        items = (
            np.concatenate(self.train_positives).astype(np.int64)
            if self.n_users
            else np.zeros(0, dtype=np.int64)
        )
        return users, items

    def seen_keys(self) -> np.ndarray:
        """Sorted ``u * n_items + i`` keys of every train positive and test item."""
        users, items = self.train_pairs()
        keys = users * self.n_items + items
        held = self.test_users()
        keys = np.concatenate([keys, held * self.n_items + self.test_item[held]])
        return np.unique(keys)


def _lookup(ids: np.ndarray, raw: int, kind: str) -> int:
    pos = int(np.searchsorted(ids, raw))
    if pos >= len(ids) or ids[pos] != raw:
        raise KeyError(f"unknown {kind} id {raw}")
    return pos


def _split_fields(path, lineno: int, line: str, n_fields: int) -> list[str]:
    fields = line.rstrip("\r\n").split("::")
    if len(fields) != n_fields:
        raise ParseError(path, lineno, f"expected {n_fields} '::'-separated fields, got {len(fields)}")
    return fields


def _to_int(path, lineno: int, value: str, name: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(path, lineno, f"{name} is not an integer: {value!r}") from None


def parse_ratings(path) -> list[Interaction]:
    """Read a ``UserID::MovieID::Rating::Timestamp`` file."""
    path = Path(path)
    out = []
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            u, i, r, t = _split_fields(path, lineno, line, 4)
            rating = _to_int(path, lineno, r, "rating")
            timestamp = _to_int(path, lineno, t, "timestamp")
            if not 1 <= rating <= 5:
                raise ParseError(path, lineno, f"rating {rating} outside 1-5")
            if timestamp < 0:
                raise ParseError(path, lineno, f"negative timestamp {timestamp}")
            out.append(Interaction(_to_int(path, lineno, u, "user id"), _to_int(path, lineno, i, "item id"), rating, timestamp))
    if not out:
        raise ParseError(path, 0, "no ratings found")
    return out


def parse_users(path) -> dict[int, Demographics]:
    """Read a ``UserID::Gender::Age::Occupation::Zip-code`` file.

    Occupation and zip code are validated for presence only and dropped.
    """
    path = Path(path)
    out = {}
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            u, g, a, _occupation, _zip = _split_fields(path, lineno, line, 5)
            if g not in GENDER_CODES:
                raise ParseError(path, lineno, f"unknown gender code {g!r}")
            age = _to_int(path, lineno, a, "age")
            if age not in AGE_CODES:
                raise ParseError(path, lineno, f"unknown age code {age}")
            out[_to_int(path, lineno, u, "user id")] = Demographics(GENDER_CODES[g], AGE_CODES.index(age))
    if not out:
        raise ParseError(path, 0, "no users found")
    return out


def build_dataset(interactions, demographics: dict[int, Demographics]) -> Dataset:
    """Reindex users/items densely (ascending raw id) and dedup keeping the latest event.

    Every rating counts as a positive. The returned dataset has no test items;
    call :func:`leave_one_out_split` for that.
    """
    if not interactions:
        raise ValueError("no interactions")
    arr = np.array([(x.user_raw, x.item_raw, x.timestamp) for x in interactions], dtype=np.int64)
    users_raw, items_raw, ts = arr[:, 0], arr[:, 1], arr[:, 2]

    missing = sorted(set(np.unique(users_raw).tolist()) - demographics.keys())
    if missing:
        shown = ", ".join(map(str, missing[:10]))
        raise ValueError(f"{len(missing)} users have ratings but no demographics: {shown}")

    user_ids, u = np.unique(users_raw, return_inverse=True)
    item_ids, i = np.unique(items_raw, return_inverse=True)

    # latest timestamp wins on duplicate (user, item)
    order = np.lexsort((ts, i, u))
    u, i, ts = u[order], i[order], ts[order]
    last = np.ones(len(u), dtype=bool)
    last[:-1] = (u[1:] != u[:-1]) | (i[1:] != i[:-1])
    u, i, ts = u[last], i[last], ts[last]

    order = np.lexsort((i, ts, u))
    u, i, ts = u[order], i[order], ts[order]
    bounds = np.searchsorted(u, np.arange(len(user_ids) + 1))
    positives = [i[bounds[k]:bounds[k + 1]].copy() for k in range(len(user_ids))]
    stamps = [ts[bounds[k]:bounds[k + 1]].copy() for k in range(len(user_ids))]

    demo = [demographics[int(raw)] for raw in user_ids]
    return Dataset(
        user_ids=user_ids,
        item_ids=item_ids,
        train_positives=positives,
        train_timestamps=stamps,
        test_item=np.full(len(user_ids), -1, dtype=np.int64),
        test_timestamp=np.full(len(user_ids), -1, dtype=np.int64),
        demographics={
            "gender": np.array([d.gender for d in demo], dtype=np.int64),
            "age": np.array([d.age_bracket for d in demo], dtype=np.int64),
        },
    )


def leave_one_out_split(dataset: Dataset) -> Dataset:
    """Hold out each user's latest positive (ties: larger item index).

    Users with a single positive keep it in training and get no test item.
    Positives are already ordered by (timestamp, item), so the last entry is
    the one to hold out.
    """
    positives, stamps = [], []
    test_item = dataset.test_item.copy()
    test_ts = dataset.test_timestamp.copy()
    for u, (items, ts) in enumerate(zip(dataset.train_positives, dataset.train_timestamps)):
        if test_item[u] >= 0:
            raise ValueError("dataset is already split")
        if len(items) >= 2:
            test_item[u], test_ts[u] = items[-1], ts[-1]
            items, ts = items[:-1], ts[:-1]
        positives.append(items)
        stamps.append(ts)
    return dataclasses.replace(
        dataset, train_positives=positives, train_timestamps=stamps, test_item=test_item, test_timestamp=test_ts
    )


def negative_sample(dataset: Dataset, user: int, rng: np.random.Generator) -> int:
    """Uniform item that is neither a training positive nor the held-out item of ``user``."""
    seen = set(dataset.train_positives[user].tolist())
    if dataset.test_item[user] >= 0:
        seen.add(int(dataset.test_item[user]))
    if len(seen) >= dataset.n_items:
        raise ValueError(f"user {user} has no negative candidates")
    while True:
        j = int(rng.integers(dataset.n_items))
        if j not in seen:
            return j


def sample_negatives(dataset: Dataset, users: np.ndarray, rng: np.random.Generator, seen_keys=None) -> np.ndarray:
    """Vectorized :func:`negative_sample` for a batch of users (rejection resampling)."""
    n_items = dataset.n_items
    if seen_keys is None:
        seen_keys = dataset.seen_keys()
    counts = np.bincount(seen_keys // n_items, minlength=dataset.n_users)
    if np.any(counts[users] >= n_items):
        bad = int(users[np.argmax(counts[users] >= n_items)])
        raise ValueError(f"user {bad} has no negative candidates")
    neg = rng.integers(n_items, size=len(users))
    todo = np.arange(len(users))
    while len(todo):
        keys = users[todo] * n_items + neg[todo]
        pos = np.searchsorted(seen_keys, keys)
        pos[pos >= len(seen_keys)] = 0
        hit = seen_keys[pos] == keys
        todo = todo[hit]
        neg[todo] = rng.integers(n_items, size=len(todo))
    return neg


def load_movielens(data_dir) -> Dataset:
    """Parse ``ratings.dat`` and ``users.dat`` from ``data_dir`` and split."""
    data_dir = Path(data_dir)
    for name in ("ratings.dat", "users.dat"):
        if not (data_dir / name).is_file():
            raise FileNotFoundError(f"missing {data_dir / name}")
    ratings = parse_ratings(data_dir / "ratings.dat")
    users = parse_users(data_dir / "users.dat")
    return leave_one_out_split(build_dataset(ratings, users))


def write_dump(dataset: Dataset, path) -> None:
    """Write ``user_idx,item_idx,timestamp,split`` rows, users in index order, test row last."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_idx", "item_idx", "timestamp", "split"])
        for u in range(dataset.n_users):
            for i, t in zip(dataset.train_positives[u].tolist(), dataset.train_timestamps[u].tolist()):
                w.writerow([u, i, t, "train"])
            if dataset.test_item[u] >= 0:
                w.writerow([u, int(dataset.test_item[u]), int(dataset.test_timestamp[u]), "test"])


def class_balance(labels: np.ndarray, n_classes: int) -> np.ndarray:
    return np.bincount(labels, minlength=n_classes) / len(labels)
