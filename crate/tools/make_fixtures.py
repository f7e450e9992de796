#!/usr/bin/env python3
"""Generate the synthetic WFDB fixtures under testdata/.

The public MIT-BIH Arrhythmia and Noise Stress Test databases cannot be
redistributed inside this repository, so the test suites run on synthetic
stand-ins written in the same on-disk formats (header, format-212 signal,
MIT annotation stream). Files are written by the reference `wfdb` Python
package, which also produces the oracle listings the Rust decoders are
checked against.

Usage: python3 tools/make_fixtures.py [--out testdata]
"""

import argparse
import os

import numpy as np
import wfdb
from scipy import signal as sps

FS = 360
GAIN = 200.0
BASELINE = 1024

# Beat symbols as defined by WFDB's annotation code table.
BEAT_SYMBOLS = {
    "N", "L", "R", "a", "V", "F", "J", "A", "S", "E", "j", "/", "Q", "e", "f", "n"
}

NORMAL_LEAD0 = [
    # (offset s, amplitude mV, width s)
    (-0.16, 0.15, 0.025),
    (-0.030, -0.12, 0.010),
    (0.0, 1.10, 0.011),
    (0.030, -0.25, 0.011),
    (0.26, 0.30, 0.050),
]
NORMAL_LEAD1 = [
    (-0.16, 0.08, 0.025),
    (0.0, 0.35, 0.011),
    (0.028, -0.90, 0.015),
    (0.26, 0.15, 0.050),
]
VENTRICULAR_LEAD0 = [
    (0.0, 1.40, 0.028),
    (0.065, -0.50, 0.030),
    (0.30, -0.35, 0.060),
]
VENTRICULAR_LEAD1 = [
    (0.0, -0.60, 0.030),
    (0.07, 0.40, 0.030),
    (0.30, 0.20, 0.060),
]


def beat_times(rng, n_samples, mean_rr, p_ectopic, pause_at=None):
    """Return (times_s, kinds) for a sinus rhythm with respiratory and
    Mayer-wave modulation plus occasional premature ventricular beats."""
    duration = n_samples / FS
    t = 0.35
    times, kinds = [], []
    ph1, ph2 = rng.uniform(0, 2 * np.pi, 2)
    pending_comp = False
    while t < duration - 0.6:
        rr = mean_rr * (
            1
            + 0.035 * np.sin(2 * np.pi * 0.1 * t + ph1)
            + 0.025 * np.sin(2 * np.pi * 0.25 * t + ph2)
        ) + rng.normal(0, 0.008 * mean_rr)
        kind = "N"
        if pending_comp:
            rr *= 1.3
            pending_comp = False
        elif rng.uniform() < p_ectopic and times:
            rr *= 0.72
            kind = "V"
            pending_comp = True
        if pause_at is not None and times and abs(t - pause_at) < rr / 2:
            rr = 3.2  # sinus arrest: forces a SKIP in the annotation stream
        t += rr
        if t < duration - 0.6:
            times.append(t)
            kinds.append(kind)
    return np.array(times), kinds


def render(times, kinds, n_samples, rr_mean, lead_normal, lead_v, scale):
    x = np.zeros(n_samples)
    tt = np.arange(n_samples) / FS
    span = int(0.7 * FS)
    for t0, kind in zip(times, kinds):
        c = int(round(t0 * FS))
        lo, hi = max(0, c - span), min(n_samples, c + span)
        seg = tt[lo:hi] - t0
        waves = lead_v if kind == "V" else lead_normal
        for off, amp, width in waves:
            if off > 0.1:
                off = off * np.sqrt(rr_mean / 0.8)
            x[lo:hi] += scale * amp * np.exp(-((seg - off) ** 2) / (2 * width**2))
    return x


def make_record(out_dir, name, seed, mean_rr, p_ectopic, scale, n_samples, pause_at=None):
    rng = np.random.default_rng(seed)
    times, kinds = beat_times(rng, n_samples, mean_rr, p_ectopic, pause_at)
    lead0 = render(times, kinds, n_samples, mean_rr, NORMAL_LEAD0, VENTRICULAR_LEAD0, scale)
    lead1 = render(times, kinds, n_samples, mean_rr, NORMAL_LEAD1, VENTRICULAR_LEAD1, scale)
    tt = np.arange(n_samples) / FS
    resp = 0.04 * np.sin(2 * np.pi * 0.22 * tt + rng.uniform(0, 6.28))
    lead0 += resp + rng.normal(0, 0.012, n_samples)
    lead1 += 0.5 * resp + rng.normal(0, 0.012, n_samples)

    # Annotate each beat at the apex of the dominant deflection on lead 0.
    win = int(0.03 * FS)
    samples = []
    for t0 in times:
        c = int(round(t0 * FS))
        lo, hi = max(0, c - win), min(n_samples, c + win + 1)
        samples.append(lo + int(np.argmax(lead0[lo:hi])))
    samples = np.array(samples)

    p_signal = np.column_stack([lead0, lead1])
    wfdb.wrsamp(
        name,
        fs=FS,
        units=["mV", "mV"],
        sig_name=["MLII", "V1"],
        p_signal=p_signal,
        fmt=["212", "212"],
        adc_gain=[GAIN, GAIN],
        baseline=[BASELINE, BASELINE],
        comments=["synthetic stand-in record generated by tools/make_fixtures.py"],
        write_dir=out_dir,
    )

    # Annotation stream: beats plus non-beat annotations that exercise the
    # AUX, NUM, CHN and SUB modifiers of the MIT format.
    ann_samples = list(samples)
    symbols = ["V" if k == "V" else "N" for k in kinds]
    subtype = [0] * len(samples)
    chan = [0] * len(samples)
    num = [0] * len(samples)
    aux = [""] * len(samples)

    extra = [(18, "+", 0, 0, 0, "(N")]
    for j, pos in enumerate(rng.choice(len(samples) - 2, size=6, replace=False)):
        mid = (samples[pos] + samples[pos + 1]) // 2
        extra.append((int(mid), "~", 1 + j % 3, j % 2, 0, ""))
    vpos = [i for i, k in enumerate(kinds) if k == "V"]
    for i in vpos[:3]:
        num[i] = 1
    if len(samples) > 40:
        extra.append((int(samples[40] + 20), "+", 0, 0, 2, "(B"))
    for s, sym, sub, ch, nm, ax in extra:
        ann_samples.append(s)
        symbols.append(sym)
        subtype.append(sub)
        chan.append(ch)
        num.append(nm)
        aux.append(ax)

    order = np.argsort(np.array(ann_samples), kind="stable")
    ann_samples = np.array(ann_samples)[order]
    wfdb.wrann(
        name,
        "atr",
        sample=ann_samples,
        symbol=[symbols[i] for i in order],
        subtype=np.array([subtype[i] for i in order]),
        chan=np.array([chan[i] for i in order]),
        num=np.array([num[i] for i in order]),
        aux_note=[aux[i] for i in order],
        write_dir=out_dir,
    )


def bandpassed(rng, n, lo, hi, order=3):
    w = rng.normal(0, 1, n)
    if lo is None:
        sos = sps.butter(order, hi, btype="lowpass", fs=FS, output="sos")
    else:
        sos = sps.butter(order, [lo, hi], btype="bandpass", fs=FS, output="sos")
    y = sps.sosfiltfilt(sos, w)
    return y / y.std()


def envelope(rng, n, rate_hz, floor):
    env = bandpassed(rng, n, None, rate_hz)
    env = np.clip(floor + 0.6 * env, 0.05, None)
    return env / env.mean()


def make_noise(out_dir, name, seed, n_samples):
    rng = np.random.default_rng(seed)
    tt = np.arange(n_samples) / FS
    chans = []
    for _ in range(2):
        if name == "bw":
            x = np.zeros(n_samples)
            for _ in range(6):
                f = rng.uniform(0.05, 0.6)
                x += rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * f * tt + rng.uniform(0, 6.28))
            x += 0.15 * bandpassed(rng, n_samples, None, 0.4)
        elif name == "ma":
            x = 0.08 * bandpassed(rng, n_samples, 15.0, 120.0) * envelope(rng, n_samples, 0.5, 0.9)
            x += 0.03 * bandpassed(rng, n_samples, 0.5, 5.0)
        else:  # em
            x = 0.15 * bandpassed(rng, n_samples, 1.0, 15.0) * envelope(rng, n_samples, 0.3, 0.7)
            x += 0.08 * bandpassed(rng, n_samples, None, 1.0)
            for c in rng.choice(n_samples - FS, size=n_samples // (4 * FS), replace=False):
                k = np.arange(FS)
                x[c : c + FS] += rng.uniform(-0.5, 0.5) * np.exp(-k / rng.uniform(10, 60))
        chans.append(x)
    wfdb.wrsamp(
        name,
        fs=FS,
        units=["mV", "mV"],
        sig_name=["noise1", "noise2"],
        p_signal=np.column_stack(chans),
        fmt=["212", "212"],
        adc_gain=[GAIN, GAIN],
        baseline=[BASELINE, BASELINE],
        comments=["synthetic stand-in noise record generated by tools/make_fixtures.py"],
        write_dir=out_dir,
    )


def write_oracles(rec_dir, oracle_dir, name):
    ann = wfdb.rdann(os.path.join(rec_dir, name), "atr")
    with open(os.path.join(oracle_dir, f"{name}_beats.txt"), "w") as f:
        for s, sym in zip(ann.sample, ann.symbol):
            if sym in BEAT_SYMBOLS:
                code = wfdb.io.annotation.ann_label_table.set_index("symbol").loc[sym, "label_store"]
                f.write(f"{s} {code}\n")
    with open(os.path.join(oracle_dir, f"{name}_all_annotations.txt"), "w") as f:
        for s, sym, sub, ch, nm, ax in zip(
            ann.sample, ann.symbol, ann.subtype, ann.chan, ann.num, ann.aux_note
        ):
            f.write(f"{s} {sym} {sub} {ch} {nm} {ax!r}\n")

    rec = wfdb.rdrecord(os.path.join(rec_dir, name), physical=False)
    d = rec.d_signal.astype(np.int64)
    with open(os.path.join(oracle_dir, f"{name}_raw.txt"), "w") as f:
        f.write(f"n_samples {d.shape[0]}\n")
        for ch in range(d.shape[1]):
            f.write(f"sum {ch} {int(d[:, ch].sum())}\n")
            f.write(f"sumsq {ch} {int((d[:, ch] ** 2).sum())}\n")
        for row in d[:2000]:
            f.write(" ".join(str(v) for v in row) + "\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="testdata")
    args = ap.parse_args()
    rec_dir = os.path.join(args.out, "synthetic", "mitdb")
    noise_dir = os.path.join(args.out, "synthetic", "nstdb")
    oracle_dir = os.path.join(args.out, "oracle")
    for d in (rec_dir, noise_dir, oracle_dir):
        os.makedirs(d, exist_ok=True)

    n_rec = 430_000
    make_record(rec_dir, "100", 100, mean_rr=0.80, p_ectopic=0.002, scale=1.0, n_samples=n_rec)
    make_record(rec_dir, "101", 101, mean_rr=0.86, p_ectopic=0.004, scale=0.9, n_samples=n_rec)
    make_record(
        rec_dir, "102", 102, mean_rr=0.74, p_ectopic=0.01, scale=1.15, n_samples=n_rec, pause_at=600.0
    )
    n_noise = 230_400
    for seed, name in enumerate(("bw", "em", "ma")):
        make_noise(noise_dir, name, 500 + seed, n_noise)
    for name in ("100", "101", "102"):
        write_oracles(rec_dir, oracle_dir, name)


if __name__ == "__main__":
    main()
