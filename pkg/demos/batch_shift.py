"""Why a held-out batch matters.

We build a small uniform dataset (one part design, one camera setup) and a
diverse one (many designs, quarter-turn rotations). The holdout images of each
were "photographed on another day": brighter or darker, a bit noisier, nudged
by a few pixels. We then train the whole-image classifier and the window
detector and compare validation AUC with holdout AUC.

The classifier learns what the one part it has seen looks like pixel by
pixel, so it does well on validation and loses ground on the shifted batch
(at full size the drop is much steeper). The
detector scores local windows, so it cares much less about where things are.

    python3 demos/batch_shift.py [workdir]

Sizes are cut down so this finishes in about a minute; the CLI ``matrix``
command runs the full-size version.
"""
import sys
import tempfile
from pathlib import Path

from inspecta.harness import DatasetRef, ExperimentConfig, Workspace, run_experiment
from inspecta.syngen import GeneratorConfig, gen_dataset

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="inspecta-demo-"))
for family in ("uniform", "diverse"):
    gen_dataset(GeneratorConfig(family=family, n_train_val=120, n_holdout=24, seed=42), work)
uniform = str(work / "uniform" / "manifest.json")
diverse = str(work / "diverse" / "manifest.json")

ws = Workspace()  # shares decoded images and trained models across runs
rows = [
    ("uniform", uniform, uniform, "validation"),
    ("uniform", uniform, uniform, "holdout"),
    ("uniform", uniform, diverse, "holdout"),
    ("diverse", diverse, diverse, "validation"),
    ("diverse", diverse, diverse, "holdout"),
    ("diverse", diverse, uniform, "holdout"),
]
print(f"{'kind':<11}{'train':<9}{'test':<20}{'AUC':>6}")
for kind in ("classifier", "detector"):
    for i, (name, train, test, split) in enumerate(rows):
        cfg = ExperimentConfig(str(i), kind, DatasetRef(train, "train"), DatasetRef(test, split), seed=42)
        rep = run_experiment(cfg, work / "runs" / f"{kind}-{i}", ws)
        print(f"{kind:<11}{name:<9}{Path(test).parent.name + ':' + split:<20}{rep.auc:6.3f}")
print("reports under", work / "runs")
