"""Interaction loading, id remapping, per-user 7:1:2 splits and dataset stats."""
from __future__ import annotations

import gzip
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ARCHIVE_FILES = ("meta.json", "train.tsv", "val.tsv", "test.tsv",
                 "id_map_users.tsv", "id_map_items.tsv")


class DataError(ValueError):
    """Bad interaction input (empty, malformed, inconsistent archive)."""


class MalformedLineError(DataError):
    def __init__(self, path, lineno, line):
        super().__init__(f"{path}:{lineno}: malformed line {line!r} "
                         "(expected user<TAB>item)")
        self.path = path
        self.lineno = lineno


class DataLoadError(OSError):
    """The input could not be read at all."""


@dataclass(frozen=True)
class RawInteractions:
    pairs: list[tuple[str, str]]
    source_path: str


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """Remapped interactions with disjoint train/val/test splits.

    Each split is an ``(n, 2)`` int64 array of ``(user_id, item_id)`` rows
    sorted lexicographically. ``train_items_of[u]`` is the sorted array of
    items user ``u`` has in train.
    """

    num_users: int
    num_items: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    train_items_of: tuple
    split_seed: int
    user_tokens: tuple = field(default=())
    item_tokens: tuple = field(default=())

    def items_of(self, split: str) -> list[np.ndarray]:
        """Per-user sorted item arrays for ``split`` (train, val or test)."""
        return group_by_user(getattr(self, split), self.num_users)


@dataclass(frozen=True)
class DatasetStats:
    num_users: int
    num_items: int
    num_interactions: int
    density: float

    def table_row(self, name: str = "dataset") -> str:
        return (f"{name} | #Users {self.num_users:,} | #Items {self.num_items:,} | "
                f"#Interactions {self.num_interactions:,} | Density {format_density(self.density)}")


def _open_text(path: Path):
    if path.suffix in (".gz", ".gzip"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def load_interactions(path) -> RawInteractions:
    """Read ``user<TAB>item[<TAB>...]`` lines, dropping exact duplicates."""
    path = Path(path)
    seen = set()
    pairs = []
    try:
        with _open_text(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\r\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) < 2 or not parts[0] or not parts[1]:
                    raise MalformedLineError(str(path), lineno, line)
                pair = (parts[0], parts[1])
                if pair not in seen:
                    seen.add(pair)
                    pairs.append(pair)
    except (OSError, UnicodeDecodeError, EOFError) as exc:
        raise DataLoadError(f"cannot load interactions from {path}: {exc}") from exc
    if not pairs:
        raise DataError(f"{path}: no interactions")
    return RawInteractions(pairs=pairs, source_path=str(path))


def split_sizes(n: int) -> tuple[int, int, int]:
    """Per-user (train, val, test) counts for ``n`` interactions."""
    if n < 3:
        return n, 0, 0
    n_train = (7 * n + 9) // 10            # ceil(0.7 n) in integers
    n_val = min((n + 9) // 10, n - n_train)
    return n_train, n_val, n - n_train - n_val


def group_by_user(pairs: np.ndarray, num_users: int) -> list[np.ndarray]:
    out = [[] for _ in range(num_users)]
    for u, i in pairs:
        out[u].append(i)
    return [np.array(sorted(items), dtype=np.int64) for items in out]


def _sorted_pairs(rows) -> np.ndarray:
    arr = np.array(rows, dtype=np.int64).reshape(-1, 2)
    if len(arr):
        arr = arr[np.lexsort((arr[:, 1], arr[:, 0]))]
    return arr


def remap_and_split(raw: RawInteractions, seed: int) -> InteractionDataset:
    """Assign ids by first appearance and split each user's history 7:1:2."""
    if not raw.pairs:
        raise DataError("no interactions")
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    per_user: list[list[int]] = []
    for ut, it in raw.pairs:
        u = users.setdefault(ut, len(users))
        i = items.setdefault(it, len(items))
        if u == len(per_user):
            per_user.append([])
        per_user[u].append(i)

    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for u, hist in enumerate(per_user):
        hist = np.asarray(hist, dtype=np.int64)
        if len(hist) >= 3:
            hist = hist[rng.permutation(len(hist))]
        a, b, _ = split_sizes(len(hist))
        train.extend((u, int(i)) for i in hist[:a])
        val.extend((u, int(i)) for i in hist[a:a + b])
        test.extend((u, int(i)) for i in hist[a + b:])

    train_arr = _sorted_pairs(train)
    return InteractionDataset(
        num_users=len(users),
        num_items=len(items),
        train=train_arr,
        val=_sorted_pairs(val),
        test=_sorted_pairs(test),
        train_items_of=tuple(group_by_user(train_arr, len(users))),
        split_seed=int(seed),
        user_tokens=tuple(users),
        item_tokens=tuple(items),
    )


def from_splits(num_users, num_items, train, val=(), test=(), seed=0) -> InteractionDataset:
    """Build a dataset directly from integer id pairs (synthetic data, tests)."""
    train_arr = _sorted_pairs(train)
    return InteractionDataset(
        num_users=int(num_users),
        num_items=int(num_items),
        train=train_arr,
        val=_sorted_pairs(val),
        test=_sorted_pairs(test),
        train_items_of=tuple(group_by_user(train_arr, num_users)),
        split_seed=int(seed),
        user_tokens=tuple(str(u) for u in range(num_users)),
        item_tokens=tuple(str(i) for i in range(num_items)),
    )


def compute_stats(ds: InteractionDataset) -> DatasetStats:
    n = len(ds.train) + len(ds.val) + len(ds.test)
    return stats_from_counts(ds.num_users, ds.num_items, n)


def format_density(density: float, digits: int = 1) -> str:
    """Scientific notation with the mantissa truncated (not rounded).

    Truncation is how the published dataset tables report density, e.g.
    1.956e-3 is shown as 1.9e-03.
    """
    if density <= 0:
        return f"{0:.{digits}e}"
    exp = math.floor(math.log10(density))
    mant = density / 10 ** exp
    step = 10 ** digits
    mant = math.floor(mant * step + 1e-9) / step
    if mant >= 10:
        mant, exp = mant / 10, exp + 1
    return f"{mant:.{digits}f}e{exp:+03d}"


def stats_from_counts(num_users: int, num_items: int, num_interactions: int) -> DatasetStats:
    density = num_interactions / (num_users * num_items)
    return DatasetStats(num_users, num_items, num_interactions, density)


# -- split archive ---------------------------------------------------------

def _write_pairs(path: Path, pairs: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i in pairs:
            fh.write(f"{u}\t{i}\n")


def _read_pairs(path: Path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            try:
                rows.append((int(parts[0]), int(parts[1])))
            except (IndexError, ValueError):
                raise MalformedLineError(str(path), lineno, line) from None
    return _sorted_pairs(rows)


def write_archive(ds: InteractionDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "num_users": ds.num_users,
        "num_items": ds.num_items,
        "num_train": len(ds.train),
        "num_val": len(ds.val),
        "num_test": len(ds.test),
        "seed": ds.split_seed,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _write_pairs(out / "train.tsv", ds.train)
    _write_pairs(out / "val.tsv", ds.val)
    _write_pairs(out / "test.tsv", ds.test)
    for name, tokens in (("id_map_users.tsv", ds.user_tokens), ("id_map_items.tsv", ds.item_tokens)):
        with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
            for idx, tok in enumerate(tokens):
                fh.write(f"{tok}\t{idx}\n")
    return out


def _read_tokens(path: Path) -> tuple:
    if not path.exists():
        return ()
    toks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                toks.append(line.rsplit("\t", 1)[0])
    return tuple(toks)


def read_archive(path) -> InteractionDataset:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
        train = _read_pairs(path / "train.tsv")
        val = _read_pairs(path / "val.tsv")
        test = _read_pairs(path / "test.tsv")
    except OSError as exc:
        raise DataLoadError(f"cannot read split archive {path}: {exc}") from exc
    nu, ni = int(meta["num_users"]), int(meta["num_items"])
    for name, arr in (("train", train), ("val", val), ("test", test)):
        if len(arr) and (arr[:, 0].max() >= nu or arr[:, 1].max() >= ni or arr.min() < 0):
            raise DataError(f"{path}/{name}.tsv: ids out of range for {nu} users x {ni} items")
    return InteractionDataset(
        num_users=nu,
        num_items=ni,
        train=train,
        val=val,
        test=test,
        train_items_of=tuple(group_by_user(train, nu)),
        split_seed=int(meta.get("seed", 0)),
        user_tokens=_read_tokens(path / "id_map_users.tsv"),
        item_tokens=_read_tokens(path / "id_map_items.tsv"),
    )


def fingerprint(ds: InteractionDataset) -> str:
    """Content hash of the integer splits."""
    h = hashlib.sha256()
    h.update(f"{ds.num_users},{ds.num_items};".encode())
    for arr in (ds.train, ds.val, ds.test):
        h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
        h.update(b"|")
    return h.hexdigest()
