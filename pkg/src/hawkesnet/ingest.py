"""Catalog I/O and the check-in preprocessing pipeline.

Catalog CSVs carry the header node,t,x,y with an optional parent column for
simulation ground truth. Check-in records (user, timestamp, lat, lon) pass
through bounding-box and activity filters, restriction to the largest
connected friendship component or an ego network, and projection to a flat
catalog in kilometers and days.

Fits store triggering probabilities for every event pair, so catalogs are
capped at 10,000 events at ingest; pass a larger max_events explicitly to
override.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .core import Event, EventCatalog, Region

MAX_EVENTS_DEFAULT = 10_000
EARTH_RADIUS_KM = 6371.0
SECONDS_PER_DAY = 86_400.0

CATALOG_FIELDS = ("node", "t", "x", "y")


@dataclass(frozen=True)
class CheckinRecord:
    """One check-in: opaque user id, epoch seconds, position in degrees."""

    user_id: str
    timestamp: float
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


class FriendEdgeList:
    """Undirected, deduplicated user pairs; self-pairs are rejected."""

    def __init__(self, pairs=()):
        self._edges = set()
        self._adj = defaultdict(set)
        for a, b in pairs:
            self.add(a, b)

    def add(self, a, b):
        a, b = str(a), str(b)
        if a == b:
            raise ValueError(f"self-pair {a!r} not allowed")
        key = (a, b) if a < b else (b, a)
        if key not in self._edges:
            self._edges.add(key)
            self._adj[a].add(b)
            self._adj[b].add(a)

    def neighbors(self, user):
        return set(self._adj.get(str(user), ()))

    def __len__(self):
        return len(self._edges)

    def __iter__(self):
        return iter(sorted(self._edges))

    def __contains__(self, pair):
        a, b = str(pair[0]), str(pair[1])
        return ((a, b) if a < b else (b, a)) in self._edges


def save_events(catalog, path):
    """Write a catalog CSV; values use 12 significant digits.

    The parent column is emitted only when the catalog carries ground truth.
    Node ids from a persisted id map are written back when present.
    """
    has_parent = catalog.parent is not None
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CATALOG_FIELDS + (("parent",) if has_parent else ()))
        for k in range(len(catalog)):
            node = (
                catalog.node_ids[catalog.node[k]]
                if catalog.node_ids is not None
                else int(catalog.node[k])
            )
            row = [node, f"{catalog.t[k]:.12g}", f"{catalog.x[k]:.12g}", f"{catalog.y[k]:.12g}"]
            if has_parent:
                row.append(int(catalog.parent[k]))
            writer.writerow(row)


class CatalogFormatError(ValueError):
    pass


def load_events(path, T=None, region=None, n_nodes=None, max_events=MAX_EVENTS_DEFAULT):
    """Read a catalog CSV written by save_events (or compatible).

    Node labels are re-indexed densely in sorted order; the original labels
    live on catalog.node_ids. Missing T / region / n_nodes are inferred from
    the data (max time, bounding box, distinct node count). Unsorted rows
    are sorted with a notice; malformed rows raise with their line number.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CatalogFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:4] != list(CATALOG_FIELDS):
            raise CatalogFormatError(
                f"{path}: expected header node,t,x,y[,parent], got {','.join(header)}"
            )
        has_parent = len(header) > 4 and header[4] == "parent"
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            want = 5 if has_parent else 4
            if len(row) != want:
                raise CatalogFormatError(f"{path}:{line_no}: expected {want} fields")
            try:
                t = float(row[1])
                x = float(row[2])
                y = float(row[3])
                parent = int(row[4]) if has_parent else -1
            except ValueError as exc:
                raise CatalogFormatError(f"{path}:{line_no}: {exc}") from None
            if not (math.isfinite(t) and math.isfinite(x) and math.isfinite(y)):
                raise CatalogFormatError(f"{path}:{line_no}: non-finite value")
            rows.append((row[0].strip(), t, x, y, parent))
    if len(rows) > max_events:
        raise ValueError(
            f"{path} holds {len(rows)} events, above the {max_events} cap; "
            "pass a larger max_events to override"
        )
    if not rows:
        raise CatalogFormatError(f"{path}: no events")

    times = [r[1] for r in rows]
    order = list(range(len(rows)))
    if any(times[k] > times[k + 1] for k in range(len(times) - 1)):
        import warnings

        warnings.warn(f"{path}: rows were not time-sorted; sorting", RuntimeWarning)
        order.sort(key=lambda k: times[k])
        remap = {old: new for new, old in enumerate(order)}
        rows = [
            (r[0], r[1], r[2], r[3], remap[r[4]] if r[4] >= 0 else -1)
            for r in (rows[k] for k in order)
        ]

    labels = sorted({r[0] for r in rows}, key=_label_sort_key)
    label_to_idx = {lab: i for i, lab in enumerate(labels)}
    node = [label_to_idx[r[0]] for r in rows]
    t = np.array([r[1] for r in rows])
    x = np.array([r[2] for r in rows])
    y = np.array([r[3] for r in rows])
    parent = np.array([r[4] for r in rows], dtype=np.int64)
    if region is None:
        region = Region(float(x.min()), float(x.max()), float(y.min()), float(y.max()))
    if T is None:
        T = float(max(t.max(), np.nextafter(0.0, 1.0)))
    has_truth = np.any(parent >= 0)
    return EventCatalog(
        node=node,
        t=t,
        x=x,
        y=y,
        T=T,
        region=region,
        n_nodes=n_nodes if n_nodes is not None else len(labels),
        parent=parent if has_truth else None,
        node_ids=labels,
    )


def _label_sort_key(label):
    try:
        return (0, float(label), "")
    except ValueError:
        return (1, 0.0, label)


def bbox_filter(records, north, south, east, west):
    """Keep records with south <= lat <= north and west <= lon <= east."""
    if north <= south:
        raise ValueError(f"north {north} must exceed south {south}")
    if east <= west:
        raise ValueError(f"east {east} must exceed west {west}")
    return [
        r for r in records if south <= r.lat <= north and west <= r.lon <= east
    ]


def activity_filter(records, min_count, max_count):
    """Keep all records of users with a record count in [min_count, max_count]."""
    if min_count > max_count:
        raise ValueError("min_count must not exceed max_count")
    counts = Counter(r.user_id for r in records)
    return [r for r in records if min_count <= counts[r.user_id] <= max_count]


def lcc_restrict(edges, users):
    """Users in the largest connected component of the induced friend graph.

    Isolated users count as singleton components. Ties between equal-size
    components go to the one containing the smallest label.
    """
    users = sorted(set(str(u) for u in users))
    if not users:
        return set()
    user_set = set(users)
    seen = set()
    best = None
    # components surface in order of their smallest member, so keeping the
    # first largest one breaks size ties by smallest lexicographic member
    for start in users:
        if start in seen:
            continue
        comp = {start}
        frontier = [start]
        seen.add(start)
        while frontier:
            cur = frontier.pop()
            for nb in edges.neighbors(cur):
                if nb in user_set and nb not in seen:
                    seen.add(nb)
                    comp.add(nb)
                    frontier.append(nb)
        if best is None or len(comp) > len(best):
            best = comp
    return best


def ego_network(edges, center, radius=1, users=None):
    """Center plus everything within the given hop radius, with induced edges.

    The center must appear in the edge list, or in users when that universe
    is given (allowing isolated centers).
    """
    center = str(center)
    known = (
        {str(u) for u in users}
        if users is not None
        else {u for pair in edges for u in pair}
    )
    if center not in known:
        raise ValueError(f"unknown center {center!r}")
    members = {center}
    frontier = {center}
    for _ in range(radius):
        frontier = {nb for cur in frontier for nb in edges.neighbors(cur)} - members
        members |= frontier
    induced = FriendEdgeList(
        (a, b) for a, b in edges if a in members and b in members
    )
    return members, induced


def to_catalog(records, time_origin=None, projection="equirectangular",
               max_events=MAX_EVENTS_DEFAULT):
    """Project check-in records to a flat catalog in kilometers and days.

    Coordinates use an equirectangular projection about the bounding-box
    centroid; times are days since time_origin (default: earliest record).
    Users map to dense node indices in sorted-id order.
    """
    records = list(records)
    if not records:
        raise ValueError("cannot build a catalog from zero records")
    if len(records) > max_events:
        raise ValueError(
            f"{len(records)} events exceed the {max_events} cap; "
            "pass a larger max_events to override"
        )
    if projection != "equirectangular":
        raise ValueError(f"unknown projection {projection!r}")
    if time_origin is None:
        time_origin = min(r.timestamp for r in records)

    lat = np.array([r.lat for r in records])
    lon = np.array([r.lon for r in records])
    lat0 = 0.5 * (lat.min() + lat.max())
    lon0 = 0.5 * (lon.min() + lon.max())
    k = math.pi / 180.0 * EARTH_RADIUS_KM
    x = (lon - lon0) * math.cos(math.radians(lat0)) * k
    y = (lat - lat0) * k
    t = np.array([(r.timestamp - time_origin) / SECONDS_PER_DAY for r in records])
    if np.any(t < 0):
        raise ValueError("records precede the time origin")

    users = sorted({r.user_id for r in records})
    user_idx = {u: i for i, u in enumerate(users)}
    node = np.array([user_idx[r.user_id] for r in records], dtype=np.int64)

    order = np.argsort(t, kind="stable")
    region = Region(float(x.min()), float(x.max()), float(y.min()), float(y.max()))
    horizon = float(max(t.max(), np.nextafter(0.0, 1.0)))
    return EventCatalog(
        node=node[order],
        t=t[order],
        x=x[order],
        y=y[order],
        T=horizon,
        region=region,
        n_nodes=len(users),
        node_ids=users,
    )
