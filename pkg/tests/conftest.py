import numpy as np
import pytest

from family import (
    LOGREG_DETECTOR_ENTRY,
    UTAD_DETECTOR_ENTRIES,
    acceptance_spec,
    stand_config,
)
from standbench import baselines, data, stand
from standbench.metrics import MetricsConfig, evaluate


class AcceptanceRuns:
    """Lazily computed, memoized detector runs on the acceptance family.

    Several acceptance criteria (and the category-ordering test) share the
    same trained models; computing each (detector, threshold, seed) cell once
    keeps the suite inside its runtime budgets.
    """

    def __init__(self):
        self._datasets = {}
        self._prepared = {}
        self._cells = {}

    def dataset(self, seed):
        if seed not in self._datasets:
            self._datasets[seed] = data.generate_synthetic(acceptance_spec(seed))
        return self._datasets[seed]

    def prepared(self, seed, threshold):
        key = (seed, threshold)
        if key not in self._prepared:
            ds = self.dataset(seed)
            split = data.prefix_split(ds, threshold)
            stats = data.zscore_fit(ds, (0, split.train_end))
            norm = data.zscore_apply(ds, stats)
            self._prepared[key] = {
                "split": split,
                "train_values": norm.values[: split.train_end],
                "train_labels": ds.labels[: split.train_end],
                "eval_values": norm.values[split.train_end :],
                "eval_labels": ds.labels[split.train_end :],
            }
        return self._prepared[key]

    def _build(self, name, seed):
        if name == "stand":
            return baselines.StandDetector(stand_config(seed), train_stride=2, infer_stride=4)
        if name == "stand_no_bidir":
            return baselines.StandDetector(
                stand_config(seed, bidirectional=False), train_stride=2, infer_stride=4
            )
        if name == "stand_no_tem":
            return baselines.StandDetector(
                stand_config(seed, bidirectional=False, use_tem=False, use_embedding=False),
                train_stride=2,
                infer_stride=4,
            )
        if name == "logreg":
            cfg = {k: v for k, v in LOGREG_DETECTOR_ENTRY.items() if k != "kind"}
            return baselines.LogRegDetector(**cfg)
        for entry in UTAD_DETECTOR_ENTRIES:
            if entry["kind"] == name:
                kwargs = {k: v for k, v in entry.items() if k != "kind"}
                if name in ("random", "kmeans"):
                    kwargs["seed"] = seed
                return baselines.build_detector(name, **kwargs)
        raise KeyError(name)

    def cell(self, name, seed, threshold=0.10):
        key = (name, seed, threshold)
        if key not in self._cells:
            prep = self.prepared(seed, threshold)
            detector = self._build(name, seed)
            if detector.supervision == baselines.STAD:
                detector.fit(prep["train_values"], prep["train_labels"])
            else:
                detector.fit(prep["train_values"])
            scores = detector.score(prep["eval_values"])
            report = evaluate(scores, prep["eval_labels"], MetricsConfig(seed=seed))
            self._cells[key] = report
        return self._cells[key]

    def mean_of_six(self, name, seeds, threshold=0.10):
        return float(np.mean([self.cell(name, s, threshold).mean_score() for s in seeds]))

    def mean_auc(self, name, seeds, threshold=0.10):
        return float(np.mean([self.cell(name, s, threshold).auc_roc for s in seeds]))


@pytest.fixture(scope="session")
def acceptance_runs():
    return AcceptanceRuns()
