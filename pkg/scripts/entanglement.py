"""Train Regular and Armour toy models and compare weight redundancy.

The comparison is qualitative: the direction of the effect is printed, not
checked.
"""

import argparse

from armour.toy_train import entanglement_probe, train

parser = argparse.ArgumentParser()
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--epsilon", type=float, default=1e-2)
args = parser.parse_args()

reg = train("regular", seed=args.seed)
arm = train("armour", seed=args.seed)
for layer in (0, 1):
    print(f"layer{layer}:")
    for row in entanglement_probe(reg, arm, args.epsilon, layer).rows:
        print(f"  {row.pair:<16} {row.fraction_below:.4f}")
