"""Regenerate the synthetic CSV fixtures.

Writes zipgeo.csv, providers.txt, and tax.csv next to this script. The
files are deterministic for the fixed seed, sized like a small slice of
the real inputs, and deliberately messy: a few malformed rows that the
readers must drop, ZIP centroids outside the study region, ZIP codes
with missing leading zeros, ZIPs with no tax records (placed so every
area keeps at least one tax-bearing ZIP and the design matrix avoids
zero-imputed leverage points), and two single-ZIP areas whose claim mix
is forced to all-generic and all-brand so the rate filter has boundary
cases to reject.

Usage: python3 fixtures/make_synthetic.py
"""

import os

import numpy as np

from spatbeta.mesh import (
    build_mesh,
    build_neighbor_graph,
    load_region,
    locate_points,
    precision_matrix,
)

HERE = os.path.dirname(os.path.abspath(__file__))
SEED = 20260819
N_ZIPS = 160
EMPTY_AREAS = (7, 23, 41)


def smooth_field(Q, rng, scale):
    """Draw a centered, scaled field with CAR-like smoothness."""
    n = Q.shape[0]
    L = np.linalg.cholesky(Q.toarray() + 1e-6 * np.eye(n))
    u = np.linalg.solve(L.T, rng.normal(size=n))
    u -= u.mean()
    return scale * u / u.std()


def main():
    rng = np.random.default_rng(SEED)
    region = load_region(os.path.join(HERE, "region.json"))
    mesh = build_mesh(region, 60, 0)
    graph = build_neighbor_graph(mesh)
    Q = precision_matrix(graph)
    u_field = smooth_field(Q, rng, 0.30)

    # ZIP centroids: rejection-sample inside the region, skipping the
    # areas that must stay empty, plus a handful outside the mesh
    lo_x, lo_y, hi_x, hi_y = region.bounds
    pts, zone = [], []
    while len(pts) < N_ZIPS:
        x = rng.uniform(lo_x, hi_x)
        y = rng.uniform(lo_y, hi_y)
        if not region.contains_points(np.array([x]), np.array([y]))[0]:
            continue
        tri = locate_points(mesh, np.array([[x, y]]))[0]
        if tri < 0 or tri in EMPTY_AREAS:
            continue
        pts.append((x, y))
        zone.append(int(tri))
    outside = [(hi_x + 1.0, hi_y + 1.0), (lo_x - 1.0, lo_y - 1.0),
               (hi_x + 2.0, lo_y - 0.5), (lo_x - 0.8, hi_y + 0.7),
               (hi_x + 0.5, (lo_y + hi_y) / 2.0)]

    zips = []
    for i in range(N_ZIPS):
        code = str(412 + i) if i < 10 else str(60000 + i)
        zips.append(code.zfill(5))
    out_zips = [str(90000 + i) for i in range(len(outside))]

    # per-ZIP tax profile; income carries the covariate signal
    income = 55.0 + 18.0 * rng.normal(size=N_ZIPS)
    income = np.clip(income, 18.0, 130.0)
    returns = rng.integers(800, 3000, size=N_ZIPS)
    n_single = rng.binomial(returns, 0.45)
    n_dividend = rng.binomial(returns, 0.25)
    dividend_amount = n_dividend * (5.0 + rng.normal(0.0, 0.6, size=N_ZIPS))

    # single-ZIP areas host the forced boundary rates; tax gaps go to
    # ZIPs whose area keeps at least one other tax record, so no area
    # falls back to the zero-imputed per-return default
    by_area = {}
    for i, a in enumerate(zone):
        by_area.setdefault(a, []).append(i)
    single = sorted(a for a, members in by_area.items() if len(members) == 1)
    if len(single) < 2:
        raise RuntimeError("fixture needs two single-ZIP areas; reseed")
    all_generic = by_area[single[0]][0]
    all_brand = by_area[single[1]][0]
    tax_left = {a: len(members) for a, members in by_area.items()}
    skip_tax = set()
    for i in rng.permutation(N_ZIPS):
        if len(skip_tax) == 6:
            break
        i = int(i)
        if i in (all_generic, all_brand) or tax_left[zone[i]] < 2:
            continue
        skip_tax.add(i)
        tax_left[zone[i]] -= 1

    # providers: a few per ZIP, brand share driven by income, age, and
    # the smooth spatial field
    inc_std = (income - income.mean()) / income.std()
    provider_rows = []
    npi = 9_100_000_000
    for i in range(N_ZIPS):
        n_prov = int(rng.integers(2, 6))
        age_zip = 72.0 + rng.normal(0.0, 2.0)
        for _ in range(n_prov):
            npi += 7
            total = int(rng.integers(80, 600))
            bene = int(rng.integers(30, 400))
            age = age_zip + rng.normal(0.0, 1.5)
            score = 1.05 + 0.12 * rng.normal()
            eta = (-0.9 + 1.3 * inc_std[i] + 0.15 * (age - 72.0)
                   + u_field[zone[i]] + 0.05 * rng.normal())
            p = 1.0 / (1.0 + np.exp(-eta))
            if i == all_generic:
                brand = 0
            elif i == all_brand:
                brand = total
            else:
                brand = int(rng.binomial(total, min(max(p, 0.02), 0.95)))
            provider_rows.append((
                str(npi), zips[i], "ZZ", str(brand), str(total), str(bene),
                f"{age:.2f}", f"{score:.3f}",
            ))
    for j, code in enumerate(out_zips):
        for _ in range(2):
            npi += 7
            provider_rows.append((
                str(npi), code, "ZZ", "40", "150", "90",
                f"{71.0 + j:.2f}", "1.020",
            ))
    bad_provider_rows = [
        ("9999999991", zips[3], "ZZ", "10", "100", "", "70.10", "1.100"),
        ("9999999992", zips[5], "ZZ", "12", "NA", "80", "69.90", "0.950"),
        ("9999999993", "", "ZZ", "8", "90", "55", "72.30", "1.010"),
        ("9999999994", zips[8], "ZZ", "15", "120", "60", "old", "1.040"),
    ]
    provider_rows.extend(bad_provider_rows)

    header = ("npi", "nppes_provider_zip5", "nppes_provider_state",
              "brand_claim_count", "total_claim_count", "bene_count",
              "average_age_of_beneficiaries", "average_hcc_risk_score")
    with open(os.path.join(HERE, "providers.txt"), "w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in provider_rows:
            fh.write("\t".join(row) + "\n")

    with open(os.path.join(HERE, "zipgeo.csv"), "w") as fh:
        fh.write("zip,lon,lat\n")
        for i in range(N_ZIPS):
            x, y = pts[i]
            fh.write(f"{zips[i]},{x:.6f},{y:.6f}\n")
        for code, (x, y) in zip(out_zips, outside):
            fh.write(f"{code},{x:.6f},{y:.6f}\n")

    tax_header = ("zipcode", "agi_stub", "n_returns", "n_single_returns",
                  "n_dividend_returns", "total_income_amount",
                  "total_dividend_amount")
    with open(os.path.join(HERE, "tax.csv"), "w") as fh:
        fh.write(",".join(tax_header) + "\n")
        for i in range(N_ZIPS):
            if i in skip_tax:
                continue
            # providers carry the ZIP bare to exercise zero-padding
            code = zips[i].lstrip("0") if i < 10 else zips[i]
            total_inc = income[i] * returns[i]
            fh.write(
                f"{code},1,{returns[i]},{n_single[i]},{n_dividend[i]},"
                f"{total_inc:.1f},{dividend_amount[i]:.1f}\n"
            )
        for j, code in enumerate(out_zips):
            fh.write(f"{code},1,1200,500,300,60000.0,1500.{j}\n")
        fh.write("88001,1,n/a,100,50,5000.0,200.0\n")
        fh.write(",1,900,400,200,45000.0,900.0\n")
        fh.write("88002,1,1100,450,210,oops,800.0\n")

    n_good = len(provider_rows) - len(bad_provider_rows)
    print(f"providers.txt: {len(provider_rows)} rows ({n_good} clean)")
    print(f"zipgeo.csv: {N_ZIPS + len(out_zips)} centroids")
    print(f"tax.csv: {N_ZIPS - len(skip_tax) + len(out_zips) + 3} rows "
          f"({len(skip_tax)} ZIPs without tax data)")
    print(f"empty areas: {sorted(EMPTY_AREAS)}; "
          f"all-generic zip {zips[all_generic]} (area {single[0]}), "
          f"all-brand zip {zips[all_brand]} (area {single[1]}); "
          f"tax gaps at zips {sorted(zips[i] for i in skip_tax)}")


if __name__ == "__main__":
    main()
