#!/usr/bin/env python3
"""Write a random policy weight file and matching golden input/output vectors.

The forward pass here is an independent numpy implementation of the weight
format (row-major dense layers, sigmoid hidden / identity output unless an
activation is given, LSTM gates stacked input/forget/cell/output). The Rust
test suite checks its own forward pass against the vectors written here.

    python3 scripts/golden_vectors.py crates/core/tests/fixtures
"""

import argparse
import json
from pathlib import Path

import numpy as np

HEADS = {"pi_I": (10, 3), "pi_E": (6, 2), "pi_alpha": (9, 1)}
TRANSFORMS = {
    "pi_I": ["symlog"] * 4 + ["log10"] + ["symlog"] * 5,
    "pi_E": ["symlog", "symlog", "log10", "symlog", "symlog", "symlog"],
    "pi_alpha": ["log10"] * 9,
}
ROWS = 10


def sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


ACT = {"sigmoid": sigmoid, "tanh": np.tanh, "identity": lambda v: v}


def transform(kind, u):
    if kind == "log10":
        return np.log10(u + 1e-12)
    if kind == "symlog":
        return np.sign(u) * np.log10(1.0 + np.abs(u) / 1e-6)
    return u


def dense(rng, rows, cols, activation=None):
    layer = {
        "rows": rows,
        "cols": cols,
        "w": rng.normal(0.0, 1.0 / np.sqrt(cols), rows * cols).tolist(),
        "b": rng.normal(0.0, 0.1, rows).tolist(),
    }
    if activation is not None:
        layer["activation"] = activation
    return layer


def dense_head(layers, x):
    for i, l in enumerate(layers):
        w = np.array(l["w"]).reshape(l["rows"], l["cols"])
        default = "identity" if i == len(layers) - 1 else "sigmoid"
        x = ACT[l.get("activation", default)](w @ x + np.array(l["b"]))
    return x


def mlp(rng, n_in, n_out, hidden, activation=None):
    widths = [n_in] + hidden
    layers = [dense(rng, widths[i + 1], widths[i], activation) for i in range(len(hidden))]
    layers.append(dense(rng, n_out, widths[-1]))
    return {"arch": "mlp", "layers": layers}


def lstm(rng, n_in, n_out, hidden):
    g = 4 * hidden
    s = 1.0 / np.sqrt(hidden)
    cell = {
        "input_size": n_in,
        "hidden_size": hidden,
        "w_ih": rng.uniform(-s, s, g * n_in).tolist(),
        "w_hh": rng.uniform(-s, s, g * hidden).tolist(),
        "b_ih": rng.uniform(-s, s, g).tolist(),
        "b_hh": rng.uniform(-s, s, g).tolist(),
    }
    return {"arch": "lstm", "lstm": cell, "layers": [dense(rng, hidden, hidden), dense(rng, n_out, hidden)]}


def run(net, rows):
    if net["arch"] == "mlp":
        return [dense_head(net["layers"], x) for x in rows]
    c = net["lstm"]
    n_in, h = c["input_size"], c["hidden_size"]
    w_ih = np.array(c["w_ih"]).reshape(4 * h, n_in)
    w_hh = np.array(c["w_hh"]).reshape(4 * h, h)
    b = np.array(c["b_ih"]) + np.array(c["b_hh"])
    hs, cs = np.zeros(h), np.zeros(h)
    out = []
    for x in rows:
        z = w_ih @ x + w_hh @ hs + b
        i, f, gg, o = sigmoid(z[:h]), sigmoid(z[h:2 * h]), np.tanh(z[2 * h:3 * h]), sigmoid(z[3 * h:])
        cs = f * cs + i * gg
        hs = o * np.tanh(cs)
        out.append(dense_head(net["layers"], hs))
    return out


def raw_inputs(rng, kinds):
    mags = 10.0 ** rng.uniform(-8.0, 2.0, (ROWS, len(kinds)))
    signs = np.where(rng.random((ROWS, len(kinds))) < 0.5, -1.0, 1.0)
    for j, k in enumerate(kinds):
        if k == "symlog":
            mags[:, j] *= signs[:, j]
    return mags


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--seed", type=int, default=20240)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    weights = {
        "pi_I": mlp(rng, 10, 3, [32, 32]),
        "pi_E": lstm(rng, 6, 2, 16),
        "pi_alpha": mlp(rng, 9, 1, [16, 16], activation="tanh"),
        "input_transforms": TRANSFORMS,
        "version": 1,
        "kl": 3.25,
    }
    golden = []
    for head, (n_in, _) in HEADS.items():
        kinds = TRANSFORMS[head]
        raw = raw_inputs(rng, kinds)
        x = [np.array([transform(k, u) for k, u in zip(kinds, row)]) for row in raw]
        outs = run(weights[head], x)
        golden.append({
            "head": head,
            "inputs": raw.tolist(),
            "expected_outputs": [o.tolist() for o in outs],
        })

    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "policy_weights.json").write_text(json.dumps(weights, indent=1) + "\n")
    (args.out_dir / "policy_golden.json").write_text(json.dumps(golden, indent=1) + "\n")


if __name__ == "__main__":
    main()
