"""Run the default toy budget for Regular and Armour and freeze the results.

Writes tests/data/toy_calibration.json, which the test suite compares
against. Re-run only when the task, model or defaults change on purpose.
"""

import json
import os
import sys

from armour.toy_train import DEFAULT_EPOCHS, DEFAULT_LR, DEFAULT_SEED, ToyTask, train

OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "data", "toy_calibration.json")


def main():
    task = ToyTask()
    fixture = {"epochs": DEFAULT_EPOCHS, "lr": DEFAULT_LR, "seed": DEFAULT_SEED, "runs": {}}
    for variant in ("regular", "armour"):
        rec = train(variant, task, DEFAULT_EPOCHS, DEFAULT_LR, DEFAULT_SEED)
        fixture["runs"][variant] = {
            "param_count": rec.param_count,
            "initial_eval_loss": rec.initial_loss,
            "final_eval_loss": rec.final_loss,
            "final_eval_accuracy": rec.final_accuracy,
            "eval_accuracy_by_epoch": [h.eval_accuracy for h in rec.history],
        }
        print(f"{variant}: acc={rec.final_accuracy:.4f} loss={rec.final_loss:.6f}", file=sys.stderr)
    with open(OUT, "w") as fh:
        json.dump(fixture, fh, indent=2)
        fh.write("\n")


if __name__ == "__main__":
    main()
