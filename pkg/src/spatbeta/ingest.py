"""Readers and aggregation from point-located records to areal rates.

Provider files carry per-prescriber claim counts and panel covariates
keyed by ZIP code; tax files carry per-ZIP return counts and dollar
amounts. Schema files map file columns to roles, so ingestion adapts to
changing source layouts without code edits. Records are located on the
triangulation through a ZIP centroid table, aggregated per triangle with
count-weighted averaging, and assembled into a modeling dataset with a
Yeo-Johnson covariate transform and a deterministic train/test split.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .mesh import locate_points

__all__ = [
    "SchemaError",
    "ProviderRecord",
    "TaxRecord",
    "ReadReport",
    "AreaDataset",
    "resolve_delimiter",
    "read_schema",
    "read_provider_csv",
    "read_tax_csv",
    "read_zipgeo_csv",
    "aggregate_providers",
    "aggregate_tax",
    "compute_brandrate",
    "build_area_dataset",
    "yeo_johnson",
    "transform_covariates",
    "split_train_test",
]

_PROVIDER_ROLES = {
    "npi",
    "zip",
    "brand_claims",
    "total_claims",
    "beneficiaries",
    "avg_age",
    "avg_risk_score",
    "ignore",
}
_TAX_ROLES = {"zip", "returns", "count", "amount", "ignore"}
_PROVIDER_REQUIRED = _PROVIDER_ROLES - {"ignore"}

_DELIMITERS = {"tab": "\t", "comma": ",", "semicolon": ";", "pipe": "|"}


class SchemaError(ValueError):
    """Raised for malformed schema files or mismatched file headers."""


def resolve_delimiter(text):
    """Map a config word (tab, comma, ...) or literal character to itself."""
    if text in _DELIMITERS:
        return _DELIMITERS[text]
    if len(text) == 1:
        return text
    raise SchemaError(f"unknown delimiter {text!r}")


@dataclass
class ProviderRecord:
    npi: str
    zip: str
    brand_claims: float
    total_claims: float
    beneficiaries: float
    avg_age: float
    avg_risk_score: float


@dataclass
class TaxRecord:
    zip: str
    returns: float
    counts: dict = field(default_factory=dict)
    amounts: dict = field(default_factory=dict)


@dataclass
class ReadReport:
    n_rows: int
    n_kept: int
    n_dropped: int


def read_schema(path, kind):
    """Parse a ``column = role`` schema file for the given file kind.

    ``kind`` is "provider" or "tax". Every non-ignore provider role must
    appear exactly once; a tax schema needs a zip column and exactly one
    returns column.
    """
    roles = _PROVIDER_ROLES if kind == "provider" else _TAX_ROLES
    if kind not in ("provider", "tax"):
        raise ValueError(f"unknown schema kind {kind!r}")
    mapping = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchemaError(f"{path}:{ln}: expected 'column = role'")
            column, role = (part.strip() for part in line.split("=", 1))
            if not column or role not in roles:
                raise SchemaError(f"{path}:{ln}: bad role {role!r} for {kind}")
            if column in mapping:
                raise SchemaError(f"{path}:{ln}: column {column!r} mapped twice")
            mapping[column] = role
    assigned = list(mapping.values())
    if kind == "provider":
        for need in sorted(_PROVIDER_REQUIRED):
            if assigned.count(need) != 1:
                raise SchemaError(f"{path}: role {need!r} must appear exactly once")
    else:
        if assigned.count("zip") != 1:
            raise SchemaError(f"{path}: role 'zip' must appear exactly once")
        if assigned.count("returns") != 1:
            raise SchemaError(f"{path}: role 'returns' must appear exactly once")
    return mapping


def _normalize_zip(text):
    digits = text.strip()
    return digits.zfill(5) if digits else ""


def read_provider_csv(path, schema, delimiter="\t"):
    """Read provider rows, dropping and counting incomplete ones.

    Returns (records, report). The header must contain every schema
    column; rows missing a required value or carrying a non-numeric
    count are dropped, not imputed.
    """
    records = []
    n_rows = 0
    dropped = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file")
        missing = [col for col in schema if col not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: header lacks schema columns {missing}")
        by_role = {role: col for col, role in schema.items() if role != "ignore"}
        for row in reader:
            n_rows += 1
            try:
                rec = ProviderRecord(
                    npi=row[by_role["npi"]].strip(),
                    zip=_normalize_zip(row[by_role["zip"]]),
                    brand_claims=float(row[by_role["brand_claims"]]),
                    total_claims=float(row[by_role["total_claims"]]),
                    beneficiaries=float(row[by_role["beneficiaries"]]),
                    avg_age=float(row[by_role["avg_age"]]),
                    avg_risk_score=float(row[by_role["avg_risk_score"]]),
                )
            except (TypeError, ValueError, KeyError):
                dropped += 1
                continue
            if not rec.npi or not rec.zip:
                dropped += 1
                continue
            records.append(rec)
    return records, ReadReport(n_rows=n_rows, n_kept=len(records), n_dropped=dropped)


def read_tax_csv(path, schema, delimiter=","):
    """Read tax rows keyed by ZIP; same drop-and-count policy."""
    records = []
    n_rows = 0
    dropped = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file")
        missing = [col for col in schema if col not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: header lacks schema columns {missing}")
        zip_col = next(col for col, role in schema.items() if role == "zip")
        ret_col = next(col for col, role in schema.items() if role == "returns")
        count_cols = [col for col, role in schema.items() if role == "count"]
        amount_cols = [col for col, role in schema.items() if role == "amount"]
        for row in reader:
            n_rows += 1
            try:
                rec = TaxRecord(
                    zip=_normalize_zip(row[zip_col]),
                    returns=float(row[ret_col]),
                    counts={c: float(row[c]) for c in count_cols},
                    amounts={c: float(row[c]) for c in amount_cols},
                )
            except (TypeError, ValueError, KeyError):
                dropped += 1
                continue
            if not rec.zip:
                dropped += 1
                continue
            records.append(rec)
    return records, ReadReport(n_rows=n_rows, n_kept=len(records), n_dropped=dropped)


def read_zipgeo_csv(path, delimiter=","):
    """ZIP centroid table with columns zip, lon, lat."""
    table = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None or not {"zip", "lon", "lat"} <= set(
            reader.fieldnames
        ):
            raise SchemaError(f"{path}: expected columns zip, lon, lat")
        for row in reader:
            z = _normalize_zip(row["zip"])
            if not z:
                continue
            table[z] = (float(row["lon"]), float(row["lat"]))
    return table


def _zip_to_area(zips, zipgeo, mesh):
    """Map each distinct ZIP to its triangle (-1 when unknown/outside)."""
    unique = sorted(set(zips))
    known = [z for z in unique if z in zipgeo]
    coords = np.array([zipgeo[z] for z in known], dtype=float).reshape(-1, 2)
    located = locate_points(mesh, coords) if len(coords) else np.empty(0, dtype=int)
    mapping = {z: -1 for z in unique}
    for z, tri in zip(known, located):
        mapping[z] = int(tri)
    return mapping


@dataclass
class AreaSums:
    brand_claims: float = 0.0
    total_claims: float = 0.0
    beneficiaries: float = 0.0
    age_weight: float = 0.0
    score_weight: float = 0.0


def aggregate_providers(records, zipgeo, mesh):
    """Sum provider counts per triangle.

    Panel covariates (average age, average risk score) are weighted by
    each provider's beneficiary count, so the per-area values are
    beneficiary-weighted means once divided out. Records with unknown
    ZIPs or locations outside the mesh are excluded and counted.

    Returns (sums_by_area, n_excluded).
    """
    mapping = _zip_to_area([r.zip for r in records], zipgeo, mesh)
    sums = {}
    excluded = 0
    for rec in records:
        area = mapping[rec.zip]
        if area < 0:
            excluded += 1
            continue
        agg = sums.setdefault(area, AreaSums())
        agg.brand_claims += rec.brand_claims
        agg.total_claims += rec.total_claims
        agg.beneficiaries += rec.beneficiaries
        agg.age_weight += rec.avg_age * rec.beneficiaries
        agg.score_weight += rec.avg_risk_score * rec.beneficiaries
    return sums, excluded


def aggregate_tax(records, zipgeo, mesh):
    """Aggregate tax columns per triangle.

    Count columns and returns are summed; amount columns are summed and
    then divided by the summed returns (0 where an area has no returns).
    Returns (values_by_area, n_excluded) where each value dict maps
    column name to the per-area covariate.
    """
    mapping = _zip_to_area([r.zip for r in records], zipgeo, mesh)
    returns = {}
    counts = {}
    amounts = {}
    excluded = 0
    for rec in records:
        area = mapping[rec.zip]
        if area < 0:
            excluded += 1
            continue
        returns[area] = returns.get(area, 0.0) + rec.returns
        cdict = counts.setdefault(area, {})
        for name, val in rec.counts.items():
            cdict[name] = cdict.get(name, 0.0) + val
        adict = amounts.setdefault(area, {})
        for name, val in rec.amounts.items():
            adict[name] = adict.get(name, 0.0) + val
    values = {}
    for area in returns:
        row = {}
        for name, val in counts.get(area, {}).items():
            row[name] = val
        ret = returns[area]
        for name, val in amounts.get(area, {}).items():
            row[name] = val / ret if ret > 0.0 else 0.0
        values[area] = row
    return values, excluded


def compute_brandrate(sums_by_area):
    """Brand rate and weighted panel covariates per populated triangle.

    Areas with zero total claims, zero beneficiaries, or a rate on the
    closed boundary {0, 1} cannot enter the Beta likelihood; they are
    dropped and tallied by reason.

    Returns (rates_by_area, drop_reasons) where each rate entry is a
    dict with brandrate, avgage, avgscore.
    """
    rates = {}
    reasons = {"no_claims": 0, "no_beneficiaries": 0, "boundary_rate": 0}
    for area in sorted(sums_by_area):
        agg = sums_by_area[area]
        if agg.total_claims <= 0.0:
            reasons["no_claims"] += 1
            continue
        if agg.beneficiaries <= 0.0:
            reasons["no_beneficiaries"] += 1
            continue
        rate = agg.brand_claims / agg.total_claims
        if rate <= 0.0 or rate >= 1.0:
            reasons["boundary_rate"] += 1
            continue
        rates[area] = {
            "brandrate": rate,
            "avgage": agg.age_weight / agg.beneficiaries,
            "avgscore": agg.score_weight / agg.beneficiaries,
        }
    return rates, reasons


@dataclass
class AreaDataset:
    """One modeling row per populated triangle.

    ``covariates`` columns follow ``covariate_names``; the first two are
    always avgage and avgscore, then the tax covariates in sorted name
    order. ``train`` flags the rows whose likelihood enters fitting.
    """

    area_id: np.ndarray
    brandrate: np.ndarray
    covariates: np.ndarray
    covariate_names: list
    train: np.ndarray

    def __post_init__(self):
        self.area_id = np.asarray(self.area_id, dtype=np.int64)
        self.brandrate = np.asarray(self.brandrate, dtype=float)
        self.covariates = np.asarray(self.covariates, dtype=float)
        self.train = np.asarray(self.train, dtype=bool)
        n = len(self.area_id)
        if len(self.brandrate) != n or len(self.covariates) != n or len(self.train) != n:
            raise ValueError("field lengths disagree")
        if self.covariates.ndim != 2 or self.covariates.shape[1] != len(
            self.covariate_names
        ):
            raise ValueError("covariate matrix does not match covariate_names")
        if len(set(self.area_id.tolist())) != n:
            raise ValueError("duplicate area ids")

    @property
    def n(self):
        return len(self.area_id)

    def column(self, name):
        if name not in self.covariate_names:
            raise KeyError(f"unknown covariate {name!r}")
        return self.covariates[:, self.covariate_names.index(name)].copy()

    def to_csv(self, path):
        header = ["area_id", "brandrate"] + list(self.covariate_names) + ["split"]
        lines = [",".join(header)]
        for i in range(self.n):
            cells = [str(int(self.area_id[i])), repr(float(self.brandrate[i]))]
            cells += [repr(float(x)) for x in self.covariates[i]]
            cells.append("train" if self.train[i] else "test")
            lines.append(",".join(cells))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["area_id", "brandrate"] or header[-1] != "split":
                raise ValueError(f"{path}: not an area dataset file")
            names = header[2:-1]
            area_id, rate, cov, train = [], [], [], []
            for row in reader:
                area_id.append(int(row[0]))
                rate.append(float(row[1]))
                cov.append([float(x) for x in row[2:-1]])
                train.append(row[-1] == "train")
        return cls(
            area_id=np.asarray(area_id, dtype=np.int64),
            brandrate=np.asarray(rate, dtype=float),
            covariates=np.asarray(cov, dtype=float).reshape(len(area_id), len(names)),
            covariate_names=names,
            train=np.asarray(train, dtype=bool),
        )


def build_area_dataset(rates_by_area, tax_by_area):
    """Merge provider rates and tax covariates into one dataset.

    Keeps every area with a valid brand rate; tax covariates missing for
    an area default to 0 (an area without returns has zero per-return
    averages). All rows start flagged as training.
    """
    tax_names = sorted({name for row in tax_by_area.values() for name in row})
    areas = sorted(rates_by_area)
    names = ["avgage", "avgscore"] + tax_names
    cov = np.zeros((len(areas), len(names)))
    rate = np.empty(len(areas))
    for i, area in enumerate(areas):
        entry = rates_by_area[area]
        rate[i] = entry["brandrate"]
        cov[i, 0] = entry["avgage"]
        cov[i, 1] = entry["avgscore"]
        tax_row = tax_by_area.get(area, {})
        for j, name in enumerate(tax_names):
            cov[i, 2 + j] = tax_row.get(name, 0.0)
    return AreaDataset(
        area_id=np.asarray(areas, dtype=np.int64),
        brandrate=rate,
        covariates=cov,
        covariate_names=names,
        train=np.ones(len(areas), dtype=bool),
    )


def yeo_johnson(x):
    """Symmetric log transform: log(1+x) for x >= 0, -log(1-x) below."""
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0.0, np.log1p(np.maximum(x, 0.0)), -np.log1p(np.maximum(-x, 0.0)))


def transform_covariates(dataset, exclude=("avgscore",)):
    """Yeo-Johnson transform every covariate column not excluded."""
    for name in exclude:
        if name not in dataset.covariate_names:
            raise ValueError(f"excluded covariate {name!r} not in dataset")
    cov = dataset.covariates.copy()
    for j, name in enumerate(dataset.covariate_names):
        if name not in exclude:
            cov[:, j] = yeo_johnson(cov[:, j])
    return AreaDataset(
        area_id=dataset.area_id.copy(),
        brandrate=dataset.brandrate.copy(),
        covariates=cov,
        covariate_names=list(dataset.covariate_names),
        train=dataset.train.copy(),
    )


def split_train_test(dataset, train_fraction=0.8, seed=0):
    """Deterministic random split; floor(n * fraction) rows train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n = dataset.n
    n_train = int(np.floor(n * train_fraction))
    order = rng.permutation(n)
    train = np.zeros(n, dtype=bool)
    train[order[:n_train]] = True
    return AreaDataset(
        area_id=dataset.area_id.copy(),
        brandrate=dataset.brandrate.copy(),
        covariates=dataset.covariates.copy(),
        covariate_names=list(dataset.covariate_names),
        train=train,
    )
