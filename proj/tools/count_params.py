#!/usr/bin/env python3
"""Independent parameter count for a model configuration.

Derives the count from the architecture definition alone so the test golden
value does not depend on the C++ registration code it is checking.
"""

import argparse


def lstm_params(f, h, layers, bidirectional):
    dirs = 2 if bidirectional else 1
    total = 0
    for layer in range(layers):
        in_dim = f if layer == 0 else h * dirs
        per_dir = 4 * h * in_dim + 4 * h * h + 4 * h + 4 * h
        total += dirs * per_dir
    return total


def attention_params(d):
    return 4 * (d * d + d)  # q, k, v, o projections with bias


def encoder_layer_params(d, ffn):
    layer_norms = 2 * (2 * d)
    ffw = (ffn * d + ffn) + (d * ffn + d)
    return layer_norms + attention_params(d) + ffw


def decoder_layer_params(d, ffn):
    layer_norms = 3 * (2 * d)
    ffw = (ffn * d + ffn) + (d * ffn + d)
    return layer_norms + 2 * attention_params(d) + ffw


def total_params(f, h, bidir, L, d, V, enc_layers, dec_layers, maxlen):
    ffn = 4 * d
    lstm_out = h * (2 if bidir else 1)
    n = lstm_params(f, h, L, bidir)
    n += d * lstm_out + d          # projection
    n += V * d                     # word embedding (tied with the output head)
    n += maxlen * d                # positional embedding
    n += enc_layers * encoder_layer_params(d, ffn) + 2 * d
    n += dec_layers * decoder_layer_params(d, ffn) + 2 * d
    return n


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--f", type=int, default=840)
    ap.add_argument("--h", type=int, default=64)
    ap.add_argument("--bidir", type=int, default=1)
    ap.add_argument("--L", type=int, default=2)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--V", type=int, default=34)
    ap.add_argument("--enc", type=int, default=2)
    ap.add_argument("--dec", type=int, default=2)
    ap.add_argument("--maxlen", type=int, default=64)
    args = ap.parse_args()
    print(total_params(args.f, args.h, bool(args.bidir), args.L, args.d, args.V,
                       args.enc, args.dec, args.maxlen))


if __name__ == "__main__":
    main()
