#!/usr/bin/env python3
"""Brute-force EER / minDCF used to generate the expected values in eval6/.

Every candidate threshold is tried by direct counting; no sorting tricks.
Accept when score >= threshold. Usage: metric_oracle.py scores trials [p_tar c_miss c_fa]
"""
import sys
from fractions import Fraction


def load(scores_path, trials_path):
    labels = {}
    for line in open(trials_path):
        f = line.split()
        if f:
            labels[(f[0], f[1])] = f[2] == "1"
    out = []
    for line in open(scores_path):
        f = line.split()
        if f:
            out.append((Fraction(f[2]), labels[(f[0], f[1])]))
    return out


def rates(trials, th):
    tar = [s for s, l in trials if l]
    non = [s for s, l in trials if not l]
    def accept(s):
        return th == "-inf" or (th != "inf" and s >= th)

    miss = sum(1 for s in tar if not accept(s))
    fa = sum(1 for s in non if accept(s))
    return Fraction(miss, len(tar)), Fraction(fa, len(non))


def sweep(trials):
    ths = ["-inf"] + sorted(set(s for s, _ in trials)) + ["inf"]
    return [(th,) + rates(trials, th) for th in ths]


def eer(points):
    for i, (th, pm, pf) in enumerate(points):
        if pm - pf >= 0:
            if pm - pf == 0 or i == 0:
                return pm, th
            th0, pm0, pf0 = points[i - 1]
            d0, d1 = pm0 - pf0, pm - pf
            a = -d0 / (d1 - d0)
            rate = pm0 + a * (pm - pm0)
            if th == "inf":
                return rate, th0
            return rate, th0 + a * (th - th0)


def min_dcf(points, p_tar, c_miss, c_fa):
    norm = min(p_tar * c_miss, (1 - p_tar) * c_fa)
    best = None
    for th, pm, pf in points:
        c = (p_tar * c_miss * pm + (1 - p_tar) * c_fa * pf) / norm
        if best is None or c < best[0]:
            best = (c, th)
    return best


if __name__ == "__main__":
    trials = load(sys.argv[1], sys.argv[2])
    p_tar, c_miss, c_fa = (Fraction(x) for x in (sys.argv[3:6] or ["0.01", "1", "1"]))
    pts = sweep(trials)
    e, et = eer(pts)
    d, dt = min_dcf(pts, p_tar, c_miss, c_fa)
    print(f"eer {float(e)!r}")
    print(f"eer_threshold {float(et)!r}")
    print(f"min_dcf {float(d)!r}")
    print(f"dcf_threshold {float(dt)!r}")
