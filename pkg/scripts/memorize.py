"""Overfit the first N pairs of the bundled fixture and report exact-match recall."""

import argparse

from excomment import corpus, experiments
from excomment.cli import BUNDLED_FIXTURE


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("-n", type=int, default=20)
    parser.add_argument("--target-loss", type=float, default=0.01)
    parser.add_argument("--max-epochs", type=int, default=500)
    args = parser.parse_args()

    pairs = corpus.ingest(corpus.read_raw_samples(BUNDLED_FIXTURE))[: args.n]
    r = experiments.memorize(pairs, target_loss=args.target_loss, max_epochs=args.max_epochs)
    print(f"epochs {r.epochs}, loss {r.final_loss:.4f} (< 0.05 from epoch {r.first_epoch_below(0.05)})")
    print(f"exact reproductions {r.exact_matches}/{r.total}, {r.seconds:.1f}s")


if __name__ == "__main__":
    main()
