"""Train the full model and its exemplar-ablated twin on the synthetic template corpus.

    python3 scripts/exemplar_benefit.py [--pairs 2000] [--families N] [--seed 0]
"""

import argparse
import json
import logging

from excomment import experiments, synthetic


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--pairs", type=int, default=2000)
    parser.add_argument("--families", type=int, default=None, help="default: the corpus generator's default")
    parser.add_argument("--seed", type=int, default=0, help="corpus seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    kwargs = {"n_families": args.families} if args.families else {}
    samples = synthetic.template_corpus(args.pairs, seed=args.seed, **kwargs)
    result = experiments.exemplar_benefit(samples)
    print(json.dumps({**result.__dict__, "gap": result.gap}, indent=2))


if __name__ == "__main__":
    main()
