#!/usr/bin/env python3
"""Derive an evenly sampled heart-rate series from an MIT-BIH ECG excerpt.

Input is the 5-minute excerpt of MIT-BIH Arrhythmia Database record 208
(lead MLII, 360 Hz) that older SciPy releases shipped as scipy/misc/ecg.dat.
R peaks are located with a height/distance rule, instantaneous heart rate is
60 / RR (beats per minute) placed at the later beat, and the result is
linearly resampled every 0.5 s. Output is one value per line.
"""
import argparse

import numpy as np
from scipy.signal import find_peaks


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("ecg_dat", help="path to ecg.dat (npz with 'ecg' key)")
    ap.add_argument("out_csv")
    ap.add_argument("--step", type=float, default=0.5)
    args = ap.parse_args()

    with np.load(args.ecg_dat) as f:
        raw = f["ecg"]
    ecg = (raw.astype(np.int64) - 1024) / 200.0
    fs = 360.0

    peaks, _ = find_peaks(ecg, height=0.6, distance=int(0.25 * fs))
    t = peaks / fs
    rr = np.diff(t)
    keep = (rr > 0.3) & (rr < 2.0)
    beat_t = t[1:][keep]
    hr = 60.0 / rr[keep]

    grid = np.arange(beat_t[0], beat_t[-1], args.step)
    series = np.interp(grid, beat_t, hr)
    with open(args.out_csv, "w") as out:
        out.write("heart_rate_bpm\n")
        for v in series:
            out.write(f"{v:.6f}\n")


if __name__ == "__main__":
    main()
