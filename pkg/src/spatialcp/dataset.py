"""Housing transactions: data model, CSV I/O, planar projection and splits.

Transactions follow the Oslo apartment-sales schema (16 dwelling covariates
plus the sale price in million NOK).  Numerical work downstream operates on
:class:`HousingData`, a columnar view with coordinates already projected to
kilometres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import (
    DataError,
    EmptyFile,
    InvalidFractions,
    MissingColumn,
    ParseError,
)

KM_PER_DEGREE = 111.195

#: CSV column names, in canonical output order.
COLUMNS = (
    "sale_price",
    "size",
    "gross_size",
    "longitude",
    "latitude",
    "city_district",
    "altitude",
    "bedrooms",
    "floor",
    "age",
    "coast_distance",
    "lake_distance",
    "balcony",
    "elevator",
    "units_on_address",
    "homes_nearby",
    "other_buildings_nearby",
)
COVARIATES = COLUMNS[1:]

# Missing values in these columns mean "absent" and parse as 0.
_ZERO_IF_MISSING = ("balcony", "elevator")
_INTEGER_COLUMNS = ("city_district", "bedrooms", "floor", "balcony", "elevator",
                    "units_on_address", "homes_nearby", "other_buildings_nearby")


@dataclass(frozen=True)
class Dwelling:
    size: float
    gross_size: float
    longitude: float
    latitude: float
    district: int
    altitude: float
    bedrooms: int
    floor: int
    age: float
    coast_distance: float
    lake_distance: float
    balcony: int
    elevator: int
    units_on_address: int
    homes_nearby: int
    other_buildings_nearby: int

    def __post_init__(self):
        if not (self.size > 0 and self.gross_size > 0):
            raise DataError(f"sizes must be positive, got {self.size}, {self.gross_size}")
        if self.balcony not in (0, 1) or self.elevator not in (0, 1):
            raise DataError("balcony and elevator must be 0 or 1")


@dataclass(frozen=True)
class Transaction:
    dwelling: Dwelling
    sale_price: float
    location_km: tuple[float, float]

    def __post_init__(self):
        if not self.sale_price > 0:
            raise DataError(f"sale_price must be positive, got {self.sale_price}")


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    calibration: np.ndarray
    test: np.ndarray
    seed: int


def project_to_km(longitude, latitude, reference):
    """Equirectangular projection of degrees to planar kilometres.

    ``reference`` is the ``(lon0, lat0)`` pair mapped to the origin.  Works on
    scalars and arrays alike.
    """
    lon0, lat0 = reference
    lon = np.asarray(longitude, dtype=float)
    lat = np.asarray(latitude, dtype=float)
    if np.any(np.abs(lat) >= 89.0):
        raise DataError("latitude must satisfy |lat| < 89 degrees")
    y = KM_PER_DEGREE * (lat - lat0)
    x = KM_PER_DEGREE * math.cos(math.radians(lat0)) * (lon - lon0)
    return x, y


def km_to_degrees(x, y, reference):
    """Inverse of :func:`project_to_km`."""
    lon0, lat0 = reference
    lat = lat0 + np.asarray(y, dtype=float) / KM_PER_DEGREE
    lon = lon0 + np.asarray(x, dtype=float) / (KM_PER_DEGREE * math.cos(math.radians(lat0)))
    return lon, lat


def distance_km(a, b):
    """Euclidean distance between planar points (broadcasts over leading axes)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return np.sqrt(np.sum(d * d, axis=-1))


@dataclass
class HousingData:
    """Columnar transactions.

    ``covariates`` holds the 16 covariates in :data:`COVARIATES` order;
    ``locations`` the projected ``(x, y)`` km coordinates; ``districts`` the
    integer district ids.  ``district_ids`` lists the declared districts of the
    whole dataset so that subsets keep a consistent encoding.
    """

    covariates: np.ndarray
    y: np.ndarray
    locations: np.ndarray
    districts: np.ndarray
    district_ids: tuple[int, ...] = field(default=())
    reference: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.covariates = np.asarray(self.covariates, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.locations = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        self.districts = np.asarray(self.districts, dtype=int)
        n = len(self.y)
        if not (len(self.covariates) == len(self.locations) == len(self.districts) == n):
            raise DataError("HousingData columns have inconsistent lengths")
        if not self.district_ids:
            self.district_ids = tuple(int(d) for d in np.unique(self.districts))

    def __len__(self):
        return len(self.y)

    def column(self, name):
        return self.covariates[:, COVARIATES.index(name)]

    def subset(self, idx):
        idx = np.asarray(idx)
        return replace(
            self,
            covariates=self.covariates[idx],
            y=self.y[idx],
            locations=self.locations[idx],
            districts=self.districts[idx],
        )

    def with_response(self, y):
        return replace(self, y=np.asarray(y, dtype=float).copy())

    def to_frame(self):
        df = pd.DataFrame(self.covariates, columns=list(COVARIATES))
        df.insert(0, "sale_price", self.y)
        for col in _INTEGER_COLUMNS:
            df[col] = df[col].round().astype(np.int64)
        return df

    def to_transactions(self):
        out = []
        for i in range(len(self)):
            vals = dict(zip(COVARIATES, self.covariates[i]))
            kwargs = {}
            for f in fields(Dwelling):
                key = "city_district" if f.name == "district" else f.name
                v = vals[key]
                kwargs[f.name] = int(round(v)) if key in _INTEGER_COLUMNS else float(v)
            out.append(Transaction(Dwelling(**kwargs), float(self.y[i]),
                                   (float(self.locations[i, 0]), float(self.locations[i, 1]))))
        return out


def frame_to_data(df, reference=None):
    """Build :class:`HousingData` from a validated frame; reference defaults to the centroid."""
    lon = df["longitude"].to_numpy(float)
    lat = df["latitude"].to_numpy(float)
    if reference is None:
        reference = (float(lon.mean()), float(lat.mean()))
    x, y = project_to_km(lon, lat, reference)
    return HousingData(
        covariates=df[list(COVARIATES)].to_numpy(float),
        y=df["sale_price"].to_numpy(float),
        locations=np.column_stack([x, y]),
        districts=df["city_district"].to_numpy(int),
        reference=(float(reference[0]), float(reference[1])),
    )


def _parse_column(cells, name, original):
    # float() is correctly rounded, unlike pandas' fast parser
    values = np.empty(len(cells))
    for i, cell in enumerate(cells):
        try:
            values[i] = float(cell)
        except ValueError:
            raise ParseError(i, name, original.iloc[i]) from None
        if not math.isfinite(values[i]):
            raise ParseError(i, name, original.iloc[i])
    return values


def read_housing_csv(path, schema=None):
    """Read and validate a housing CSV into a pandas frame.

    ``schema`` optionally maps canonical column names to the names used in the
    file header.  Binding is by header name, so column order is free.
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise EmptyFile(f"{path} is empty") from None
    if schema:
        raw = raw.rename(columns={v: k for k, v in schema.items()})
    raw.columns = [c.strip() for c in raw.columns]
    for name in COLUMNS:
        if name not in raw.columns:
            raise MissingColumn(name)
    if raw.empty:
        raise EmptyFile(f"{path} has no data rows")

    out = {}
    for name in COLUMNS:
        text = raw[name].str.strip()
        if name in _ZERO_IF_MISSING:
            text = text.mask(text.isin(["", "NA", "nan", "NaN"]), "0")
        out[name] = _parse_column(text.tolist(), name, raw[name])
    return pd.DataFrame(out)


def load_housing(path, schema=None, reference=None):
    """Load a CSV straight into :class:`HousingData`."""
    return frame_to_data(read_housing_csv(path, schema), reference)


def load_transactions(path, schema=None, reference=None):
    """Load a CSV into a list of :class:`Transaction`, preserving row order.

    Unlike :func:`load_housing`, this rejects non-positive sale prices, which
    can only arise from simulated Gaussian responses.
    """
    df = read_housing_csv(path, schema)
    bad = np.flatnonzero(df["sale_price"].to_numpy() <= 0)
    if bad.size:
        raise ParseError(int(bad[0]), "sale_price", df["sale_price"].iloc[bad[0]])
    return frame_to_data(df, reference).to_transactions()


def write_housing_csv(data, path):
    """Write ``data`` in the canonical CSV schema; floats keep full precision."""
    lon, lat = km_to_degrees(data.locations[:, 0], data.locations[:, 1], data.reference)
    df = data.to_frame()
    df["longitude"] = lon
    df["latitude"] = lat
    df[list(COLUMNS)].to_csv(path, index=False, float_format="%.17g")


def three_way_split(n_total, fractions=(1 / 3, 1 / 3, 1 / 3), seed=0):
    """Uniformly random train/calibration/test partition of ``range(n_total)``.

    Sizes are allocated by largest remainder, so equal fractions give sizes
    differing by at most one.
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise InvalidFractions(f"fractions must be three positive numbers summing to 1: {fractions}")
    exact = fr * n_total
    sizes = np.floor(exact).astype(int)
    remainder = n_total - sizes.sum()
    # stable order: ties go to the earlier split
    order = np.argsort(-(exact - sizes), kind="stable")
    sizes[order[:remainder]] += 1
    perm = np.random.default_rng(seed).permutation(n_total)
    a, b = sizes[0], sizes[0] + sizes[1]
    return SplitIndices(train=np.sort(perm[:a]), calibration=np.sort(perm[a:b]),
                        test=np.sort(perm[b:]), seed=seed)


# Approximate Oslo district centres (degrees) used by the synthetic generator.
_DISTRICT_CENTRES = (
    (10.700, 59.935), (10.735, 59.930), (10.770, 59.925), (10.760, 59.940),
    (10.790, 59.935), (10.775, 59.950), (10.820, 59.930), (10.860, 59.920),
    (10.900, 59.935), (10.880, 59.960), (10.800, 59.890), (10.780, 59.860),
    (10.840, 59.850), (10.680, 59.955), (10.740, 59.910),
)


def synthetic_dwellings(n, seed=0, cluster_sd_km=0.7):
    """Draw ``n`` Oslo-like dwellings (covariates and locations, no price).

    Locations cluster around 15 district centres; covariate marginals roughly
    follow the Oslo summary statistics.  The returned ``y`` is all zeros.
    """
    rng = np.random.default_rng(seed)
    centres = np.asarray(_DISTRICT_CENTRES)
    reference = tuple(centres.mean(axis=0))
    cx, cy = project_to_km(centres[:, 0], centres[:, 1], reference)
    district = rng.integers(0, len(centres), size=n)
    x = cx[district] + cluster_sd_km * rng.standard_normal(n)
    y = cy[district] + cluster_sd_km * rng.standard_normal(n)
    lon, lat = km_to_degrees(x, y, reference)

    size = np.clip(rng.lognormal(math.log(61.0), 0.35, n), 12, 343).round()
    gross = np.clip(size * (1 + rng.uniform(0.0, 0.06, n)), 12, 368).round()
    altitude = np.clip(60 + 8 * y + 25 * (district % 5) + 30 * rng.standard_normal(n), 0, 480).round()
    bedrooms = np.clip(np.round(size / 35 + 0.5 * rng.standard_normal(n)), 0, 8)
    floor = np.clip(np.round(rng.gamma(2.5, 1.2, n)), -4, 99)
    age = np.clip(rng.gamma(2.5, 23.0, n), 0, 266).round()
    coast = np.clip(1000 * np.hypot(x + 1.0, y + 3.0) + 300 * rng.standard_normal(n), 5, 12201).round()
    lake = np.clip(rng.gamma(4.0, 250.0, n), 26, 3018).round()
    balcony = (rng.random(n) < 0.75).astype(float)
    elevator = (rng.random(n) < 0.36).astype(float)
    units = np.clip(rng.poisson(20.0, n), 0, 274).astype(float)
    homes = np.clip(2721 - 150 * np.hypot(x, y) + 900 * rng.standard_normal(n), 98, 6746).round()
    others = np.clip(homes + np.round(10 * rng.standard_normal(n)), 98, 6746)

    df = pd.DataFrame({
        "sale_price": np.zeros(n), "size": size, "gross_size": gross,
        "longitude": lon, "latitude": lat, "city_district": district + 1.0,
        "altitude": altitude, "bedrooms": bedrooms, "floor": floor, "age": age,
        "coast_distance": coast, "lake_distance": lake, "balcony": balcony,
        "elevator": elevator, "units_on_address": units, "homes_nearby": homes,
        "other_buildings_nearby": others,
    })
    data = frame_to_data(df)
    data.district_ids = tuple(range(1, len(centres) + 1))
    return data
