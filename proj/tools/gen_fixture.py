#!/usr/bin/env python3
"""Writes the bundled synthetic fixture: 200 three-hour steps (25 days) of Kp, satellite
readings and 768-wide image features, plus a config and a persistence baseline.

Kp switches between quiet, active and storm regimes. The solar-wind columns follow Kp with
a 3 h lead and the image features carry a regime direction with a one-day lead, so the model
has something to learn. Output is deterministic for a given --seed.
"""

import argparse
import datetime as dt
import struct
from pathlib import Path

import numpy as np

STEPS = 200
DIM = 768
START = dt.datetime(2024, 5, 1, tzinfo=dt.timezone.utc)

COLUMNS = [
    "YEAR", "DOY", "Hour", "Scalar B, nT", "Vector B Magnitude, nT", "Lat. Angle of B (GSE)",
    "Long. Angle of B (GSE)", "BX, nT (GSE, GSM)", "BY, nT (GSE)", "BZ, nT (GSE)", "BY, nT (GSM)",
    "BZ, nT (GSM)", "RMS_magnitude, nT", "RMS_field_vector, nT", "RMS_BX_GSE, nT", "RMS_BY_GSE, nT",
    "RMS_BZ_GSE, nT", "SW Plasma Temperature, K", "SW Proton Density, N/cm^3", "SW Plasma Speed, km/s",
    "SW Plasma flow long. angle", "SW Plasma flow lat. angle", "Alpha/Prot. ratio", "Flow pressure",
    "E electric field", "Plasma Beta", "Alfven mach number", "Magnetosonic Mach number", "Quasy-Invariant",
]

REGIME_KP = {0: (1.0, 3.0), 1: (4.0, 4.67), 2: (5.0, 7.67)}


def iso(t):
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


def kp_series(rng):
    kp = np.empty(STEPS)
    regime = np.empty(STEPS, dtype=int)
    i, r = 0, 0
    while i < STEPS:
        n = int(rng.integers(8, 24))
        lo, hi = REGIME_KP[r]
        for j in range(i, min(STEPS, i + n)):
            kp[j] = round(rng.uniform(lo, hi) * 3) / 3
            regime[j] = r
        i += n
        r = int(rng.choice([x for x in range(3) if x != r], p=[0.5, 0.5]))
    return kp, regime


def satellite_rows(rng, kp):
    # hourly rows; the driver for step s is Kp at step s + 1
    rows = []
    for h in range(STEPS * 3):
        t = START + dt.timedelta(hours=h)
        s = min(h // 3 + 1, STEPS - 1)
        k = kp[s]
        b = 4 + 1.5 * k + rng.normal(0, 0.5)
        bz = -0.8 * k + rng.normal(0, 0.7)
        speed = 350 + 45 * k + rng.normal(0, 15)
        dens = 5 + 0.6 * k + abs(rng.normal(0, 1))
        temp = 5e4 + 2e4 * k + rng.normal(0, 5e3)
        vals = [
            t.year, t.timetuple().tm_yday, t.hour, b, b * 0.95, rng.normal(0, 20), rng.uniform(0, 360),
            rng.normal(0, 3), rng.normal(0, 3), bz, rng.normal(0, 3), bz * 1.1 + rng.normal(0, 0.2),
            abs(rng.normal(0.5, 0.2)), abs(rng.normal(1.5, 0.4)), abs(rng.normal(0.8, 0.2)),
            abs(rng.normal(0.8, 0.2)), abs(rng.normal(0.8, 0.2)), temp, dens, speed, rng.normal(0, 2),
            rng.normal(0, 2), abs(rng.normal(0.04, 0.01)), 1.6e-6 * dens * speed * speed, -speed * bz * 1e-3,
            abs(rng.normal(1.0, 0.3)), 8 + rng.normal(0, 1), 6 + rng.normal(0, 0.8), abs(rng.normal(0.01, 0.005)),
        ]
        rows.append(vals)
    # a few fill values and one dropped hour exercise the conditioning chain
    rows[17][19] = 9999.0
    rows[250][17] = 9999999.0
    rows[251][12] = 999.9
    del rows[401]
    return rows


def write_satellite(path, rows):
    with open(path, "w") as f:
        f.write(",".join(f'"{c}"' if "," in c else c for c in COLUMNS) + "\n")
        for r in rows:
            f.write(f"{r[0]},{r[1]},{r[2]}," + ",".join(f"{v:.6g}" for v in r[3:]) + "\n")


def write_kp(path, kp):
    with open(path, "w") as f:
        f.write("timestamp,kp\n")
        for s in range(STEPS):
            f.write(f"{iso(START + dt.timedelta(hours=3 * s))},{kp[s]:.3f}\n")


def write_images(path, rng, regime):
    base = rng.normal(0, 1, DIM)
    dirs = rng.normal(0, 1, (3, DIM))
    with open(path, "wb") as f:
        f.write(b"KPIMGF01")
        f.write(struct.pack("<IQ", DIM, STEPS))
        for s in range(STEPS):
            lead = regime[min(s + 8, STEPS - 1)]
            v = base + 1.5 * dirs[lead] + rng.normal(0, 0.6, DIM)
            ts = int((START + dt.timedelta(hours=3 * s)).timestamp())
            f.write(struct.pack("<Iq", 8 + 8 * DIM, ts))
            f.write(np.asarray(v, dtype="<f8").tobytes())


def write_baseline(path, kp):
    # persistence: every step of horizon h repeats the last Kp before the issue day
    with open(path, "w") as f:
        f.write("day,horizon,step_timestamp,kp_pred\n")
        for d in range(1, 25):
            day = START + dt.timedelta(days=d)
            last = kp[d * 8 - 1]
            for h in range(1, 4):
                for j in range(8):
                    s = (d + h - 1) * 8 + j
                    if s >= STEPS:
                        continue
                    f.write(f"{iso(day)},{h},{iso(START + dt.timedelta(hours=3 * s))},{last:.17g}\n")


CONFIG = """\
# Synthetic fixture: 200 three-hour steps from 2024-05-01.
[run]
seed = 42
work_dir = work

[paths]
satellite = satellite.csv
kp = kp.csv
image_features = image_features.kpf

[split]
train_end = 2024-05-16T00:00:00Z
test_start = 2024-05-16T00:00:00Z
test_end = 2024-05-25T00:00:00Z

[window]
input_steps = 8
output_steps = 24
stride_train = 1
stride_daily = 8

[features]
pca_k = 16

[balance]
enabled = true
key = max_input

[model]
model_dim = 16
heads = 2
ff_dim = 32
conv_kernel = 3
align_bins = 10
dropout = 0.1

[loss]
alpha = 0.8
lambda_align = 0.1
lambda_l2 = 0.0001
wasserstein = mean

[train]
lr = 0.002
batch_size = 16
max_epochs = 8
patience = 3
val_fraction = 0.1

[forecast]
finetune_epochs = 1
finetune_lr = 0.0001
horizons = 1,2,3

[report]
baseline = baseline.csv
baseline_format = csv
"""


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "fixture"))
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    kp, regime = kp_series(rng)
    write_satellite(out / "satellite.csv", satellite_rows(rng, kp))
    write_kp(out / "kp.csv", kp)
    write_images(out / "image_features.kpf", rng, regime)
    write_baseline(out / "baseline.csv", kp)
    (out / "fixture.cfg").write_text(CONFIG)


if __name__ == "__main__":
    main()
