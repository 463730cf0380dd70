#!/usr/bin/env python3
"""Predictions for rows with no training entries on bias-generated data."""

import argparse

import numpy as np

from gcmf.experiments.synth import gen_bias_only
from gcmf.model import linear_predictor
from gcmf.store import ObservedMatrix
from gcmf.vb import fit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cold", type=int, default=10, help="rows with every entry held out")
    ap.add_argument("--observed", type=float, default=0.6, help="training density of the other rows")
    args = ap.parse_args()

    schema, data, _ = gen_bias_only(seed=args.seed)
    X = data[1].to_dense()
    rng = np.random.default_rng(args.seed)
    train_mask = rng.random(X.shape) < args.observed
    train_mask[: args.cold] = False
    test_mask = np.zeros(X.shape, bool)
    test_mask[: args.cold] = True
    train = ObservedMatrix.from_dense(1, X, train_mask)
    test = ObservedMatrix.from_dense(1, X, test_mask)

    state, trace = fit(schema, {1: train}, seed=args.seed)
    pred = linear_predictor(state, 1, test.rows, test.cols)
    model = np.sqrt(np.mean((pred - test.values) ** 2))
    baseline = np.sqrt(np.mean((train.values.mean() - test.values) ** 2))
    print(f"sweeps {len(trace)}; cold-row mu {state.bias[1].mu_row:.4f}")
    print(f"cold-row test rmse {model:.4f} vs global mean {baseline:.4f}")


if __name__ == "__main__":
    main()
