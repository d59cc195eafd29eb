"""Regenerate reference_fixtures.json from scratch.

Usage, from the repository root after installing the package:

    python3 tests/make_reference_fixtures.py

Trains the three reference models at pure default settings, so expect about
a minute of runtime.  Regenerating should be a byte-level no-op unless the
defaults or the numerics changed on purpose.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import (
    FIXTURES_PATH,
    best_frame_oracle_top1,
    max_abs_prototype_cos,
    mean_pool_oracle_top1,
)

from seqcls.data import SynthConfig, synth_generate, synth_prototypes
from seqcls.fusion import late_fuse, top_k_accuracy
from seqcls.training import MODELS, TrainConfig, train


def main() -> None:
    config = SynthConfig()
    train_samples, val_samples = synth_generate(config)
    prototypes = synth_prototypes(config)
    labels = {s.video_id: s.label for s in val_samples}

    fixtures = {
        "dataset": {
            "num_train": len(train_samples),
            "num_val": len(val_samples),
            "prototype_max_abs_cos": max_abs_prototype_cos(prototypes),
            "mean_pool_oracle_top1": mean_pool_oracle_top1(val_samples, prototypes),
            "best_frame_oracle_top1": best_frame_oracle_top1(val_samples, prototypes),
        },
        "models": {},
    }
    print("dataset:", json.dumps(fixtures["dataset"]))

    tables = {}
    for model in MODELS:
        result = train(TrainConfig(model=model), train_samples, val_samples)
        tables[model] = result.best_table
        fixtures["models"][model] = {
            "best_epoch": result.report.best_epoch,
            "best_top1": result.report.best_top1,
            "best_top5": result.report.best_top5,
        }
        print(f"{model}: best_epoch={result.report.best_epoch} "
              f"top1={result.report.best_top1:.4f} top5={result.report.best_top5:.4f} "
              f"({result.report.wall_seconds:.1f}s)")

    fused = late_fuse([tables["satt"], tables["txn"]], [0.5, 0.5])
    fixtures["fusion"] = {"satt_txn_equal_top1": top_k_accuracy(fused, labels, 1)}
    print(f"fusion satt+txn: top1={fixtures['fusion']['satt_txn_equal_top1']:.4f}")

    FIXTURES_PATH.write_text(json.dumps(fixtures, indent=2, sort_keys=True) + "\n")
    print(f"wrote {FIXTURES_PATH}")


if __name__ == "__main__":
    main()
