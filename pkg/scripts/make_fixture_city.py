#!/usr/bin/env python3
"""Generate the synthetic 4x4 grid town (provider fixtures, OSM extract,
ground-truth detections/annotations, truth table, pipeline config)."""

import argparse
from pathlib import Path

from laneforge.fixtures import generate_fixture_city


def main():
    parser = argparse.ArgumentParser(description="Write the fixture city to a directory.")
    parser.add_argument("--out", type=Path, required=True, help="target directory")
    args = parser.parse_args()
    truth = generate_fixture_city(args.out)
    print(f"fixture city written to {args.out}")
    print(f"  ways: {len(truth['ways'])}  junctions: {len(truth['junctions'])}  panoramas: {len(truth['panos'])}")
    print(f"  run the pipeline with: laneforge all --config {args.out / 'config.json'}")


if __name__ == "__main__":
    main()
