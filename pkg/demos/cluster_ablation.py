"""Which training images actually matter?

The diverse training set is grouped by appearance (a coarse 16x16 thumbnail,
normalised so brightness drops out) with Ward clustering. The number of groups
is picked by silhouette score. We then retrain once per group with that group
left out and see how holdout AUC on the *other* family moves.

Dropping a big group of look-alike parts should hurt. Dropping a handful of
odd ones should barely register.

    python3 demos/cluster_ablation.py [workdir]

This uses a reduced dataset and the classifier so that it runs in a few
minutes; ``inspecta ablate --kind detector`` on the default datasets is the
full experiment.
"""
import sys
import tempfile
from pathlib import Path

from inspecta.harness import DatasetRef, run_ablation
from inspecta.syngen import GeneratorConfig, gen_dataset

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="inspecta-ablate-"))
gen_dataset(GeneratorConfig(family="diverse", n_train_val=160, n_holdout=16, seed=7), work)
gen_dataset(GeneratorConfig(family="uniform", n_train_val=40, n_holdout=40, seed=7), work)

report = run_ablation(
    work / "diverse" / "manifest.json",
    "classifier",
    DatasetRef(str(work / "uniform" / "manifest.json"), "holdout"),
    seed=7,
    out_dir=work / "ablation",
    k_max=10,
)
doc = report.to_dict()
print(f"k = {doc['k']} clusters, baseline AUC {doc['baseline']['auc']:.3f}")
for c in sorted(doc["clusters"], key=lambda c: -c["excluded"]):
    print(f"  cluster {c['cluster']:>2}: {c['excluded']:>3} images left out -> AUC {c['auc']:.3f} ({c['delta_auc']:+.3f})")
big, small = report.largest(), report.smallest()
print(f"largest group drop {doc['baseline']['auc'] - big[1].auc:+.3f}, smallest {doc['baseline']['auc'] - small[1].auc:+.3f}")
