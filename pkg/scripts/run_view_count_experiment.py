#!/usr/bin/env python3
"""Characterize skeleton accuracy versus the number of rig views.

Runs Monte-Carlo trials of the full triangulation chain with a noisy
synthetic detector and reports median/p90 joint position error per view
count. More views should monotonically shrink the error; this script
quantifies by how much for a given noise level.

    python scripts/run_view_count_experiment.py --trials 100 --noise 2.0
"""

import argparse

import numpy as np

from humanforge.demo import blocky_person
from humanforge.geometry import CameraIntrinsics
from humanforge.skeleton import JOINT_COUNT, OracleDetector, estimate_skeleton, make_ring_rig


def run(view_counts, trials, noise_sigma, drop_prob, seed):
    intr = CameraIntrinsics(fx=500.0, fy=500.0, cx=256.0, cy=256.0, width=512, height=512)
    mesh, _ = blocky_person(0)
    rows = []
    for n_views in view_counts:
        rig = make_ring_rig(n_views, 1.5, [0.0, -0.5, 0.0], 0.0, intr)
        errors = []
        unresolved = 0
        for trial in range(trials):
            rng = np.random.default_rng(seed * 100_000 + trial)
            joints = np.column_stack([
                rng.uniform(-0.25, 0.25, JOINT_COUNT),
                rng.uniform(-1.0, 0.0, JOINT_COUNT),
                rng.uniform(-0.25, 0.25, JOINT_COUNT),
            ])
            detector = OracleDetector(joints, noise_sigma=noise_sigma,
                                      drop_prob=drop_prob, seed=trial)
            result = estimate_skeleton(mesh, rig, detector)
            for joint_id, est in enumerate(result):
                if est.resolved:
                    errors.append(float(np.linalg.norm(est.position - joints[joint_id])))
                else:
                    unresolved += 1
        errors = np.asarray(errors)
        rows.append((n_views, float(np.median(errors)),
                     float(np.percentile(errors, 90)), unresolved))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--views", type=int, nargs="+", default=[2, 4, 8, 16, 24, 32])
    parser.add_argument("--trials", type=int, default=100)
    parser.add_argument("--noise", type=float, default=2.0, help="pixel noise sigma")
    parser.add_argument("--drop", type=float, default=0.0, help="per-detection drop probability")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rows = run(args.views, args.trials, args.noise, args.drop, args.seed)
    print(f"trials={args.trials} noise={args.noise}px drop={args.drop}")
    print(f"{'views':>6} {'median err':>12} {'p90 err':>12} {'unresolved':>11}")
    for n_views, median, p90, unresolved in rows:
        print(f"{n_views:>6} {median:>12.5f} {p90:>12.5f} {unresolved:>11}")


if __name__ == "__main__":
    main()
