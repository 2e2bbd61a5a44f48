"""Build metamorphic test suites, score a model snapshot, partition relations.

A suite pairs one relation with a set of source images. Per case the model
passes when its prediction on the transformed image matches the reference:
for label-preserving relations the reference is the model's own prediction on
the source (self-consistency, usable without labels); for non-label-preserving
relations with a known source label it is the mapped ground truth. The global
success rate over all cases is the robustness metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import ImageSample, to_model_input
from .errors import ValidationError
from .nn import Model, ModelSnapshot
from .relations import LABEL_PRESERVING, label_map_array


@dataclass(frozen=True)
class TestSuite:
    __test__ = False  # not a pytest class

    mr: object
    sources: tuple
    suite_id: Optional[str] = None
    use_source_labels: bool = True

    def __post_init__(self):
        if not self.sources:
            raise ValidationError("a test suite needs at least one source sample")

    @property
    def n_cases(self) -> int:
        return len(self.sources)

    @property
    def name(self) -> str:
        return self.suite_id if self.suite_id is not None else self.mr.id


@dataclass(frozen=True)
class SuiteOutcome:
    suite_id: str
    mr: object
    bits: np.ndarray  # int8 per-case results
    success_rate: float
    verdict: str  # "passed" | "failed"
    mode: str  # "consistency" | "mapped_truth" | "mapped_consistency"

    def to_record(self) -> dict:
        return {
            "suite_id": self.suite_id,
            "mr_id": self.mr.id,
            "n_cases": int(self.bits.size),
            "success_rate": self.success_rate,
            "verdict": self.verdict,
            "mode": self.mode,
        }


@dataclass(frozen=True)
class RobustnessReport:
    sr_mt: float
    total_cases: int
    outcomes: tuple
    model_version: int

    def to_dict(self) -> dict:
        return {
            "sr_mt": self.sr_mt,
            "total_cases": self.total_cases,
            "model_version": self.model_version,
            "suites": [o.to_record() for o in self.outcomes],
        }

    def to_text(self) -> str:
        lines = [f"{'suite':24s} {'cases':>5s} {'rate':>7s} verdict  mode"]
        for o in self.outcomes:
            lines.append(
                f"{o.suite_id:24s} {o.bits.size:5d} {o.success_rate:7.4f} {o.verdict:7s}  {o.mode}"
            )
        lines.append(f"SR_MT = {self.sr_mt:.4f} over {self.total_cases} cases (model v{self.model_version})")
        return "\n".join(lines)


def build_suites(mrs, sources, max_cases: Optional[int] = None, seed: int = 0,
                 use_source_labels: bool = True) -> list:
    """One suite per relation over a shared source set."""
    sources = list(sources)
    if not sources:
        raise ValidationError("no source samples for suite construction")
    if max_cases is not None and len(sources) > max_cases:
        order = np.random.default_rng(seed).permutation(len(sources))[:max_cases]
        sources = [sources[i] for i in sorted(order)]
    return [TestSuite(mr=mr, sources=tuple(sources), use_source_labels=use_source_labels) for mr in mrs]


def _model_of(model_or_snapshot) -> Model:
    if isinstance(model_or_snapshot, ModelSnapshot):
        return Model.from_snapshot(model_or_snapshot)
    return model_or_snapshot


def run_case(model_or_snapshot, mr, sample: ImageSample, seed: int = 0,
             use_source_label: bool = True) -> int:
    """Single metamorphic test case; returns 1 on pass, 0 on fail."""
    model = _model_of(model_or_snapshot)
    transformed = mr.transform(sample.pixels, (seed, sample.source_id))
    pred_t = int(np.argmax(model.predict_logits(to_model_input(transformed)[None])[0]))
    if mr.kind == LABEL_PRESERVING or not use_source_label:
        pred_o = int(np.argmax(model.predict_logits(to_model_input(sample.pixels)[None])[0]))
        return int(pred_t == mr.label_map(pred_o))
    return int(pred_t == mr.label_map(sample.label))


def run_suite(model_or_snapshot, suite: TestSuite, pass_threshold: float = 0.8,
              seed: int = 0) -> SuiteOutcome:
    if not 0.0 <= pass_threshold <= 1.0:
        raise ValidationError("pass_threshold must be in [0, 1]")
    model = _model_of(model_or_snapshot)
    mr = suite.mr
    transformed = np.stack(
        [to_model_input(mr.transform(s.pixels, (seed, s.source_id))) for s in suite.sources]
    )
    preds_t = np.argmax(model.predict_logits(transformed), axis=1)

    n_classes = model.spec.num_classes
    table = label_map_array(mr, n_classes)
    if mr.kind == LABEL_PRESERVING:
        mode = "consistency"
    elif suite.use_source_labels:
        mode = "mapped_truth"
    else:
        mode = "mapped_consistency"
    if mode == "mapped_truth":
        reference = table[np.array([s.label for s in suite.sources])]
    else:
        originals = np.stack([to_model_input(s.pixels) for s in suite.sources])
        preds_o = np.argmax(model.predict_logits(originals), axis=1)
        reference = table[preds_o]

    bits = (preds_t == reference).astype(np.int8)
    rate = float(bits.mean())
    verdict = "passed" if rate >= pass_threshold else "failed"
    return SuiteOutcome(suite_id=suite.name, mr=mr, bits=bits, success_rate=rate,
                        verdict=verdict, mode=mode)


def robustness(model_or_snapshot, suites, pass_threshold: float = 0.8,
               seed: int = 0) -> RobustnessReport:
    """SR_MT over every case of every suite, plus per-suite outcomes."""
    suites = list(suites)
    if not suites:
        raise ValidationError("robustness() needs at least one suite")
    model = _model_of(model_or_snapshot)
    outcomes = []
    seen: dict[str, int] = {}
    for suite in suites:
        outcome = run_suite(model, suite, pass_threshold=pass_threshold, seed=seed)
        k = seen.get(outcome.suite_id, 0)
        seen[outcome.suite_id] = k + 1
        if k:
            outcome = SuiteOutcome(
                suite_id=f"{outcome.suite_id}#{k + 1}", mr=outcome.mr, bits=outcome.bits,
                success_rate=outcome.success_rate, verdict=outcome.verdict, mode=outcome.mode,
            )
        outcomes.append(outcome)
    outcomes.sort(key=lambda o: o.suite_id)
    total = sum(o.bits.size for o in outcomes)
    passes = sum(int(o.bits.sum()) for o in outcomes)
    version = model_or_snapshot.version if isinstance(model_or_snapshot, ModelSnapshot) else model.version
    return RobustnessReport(
        sr_mt=passes / total, total_cases=total, outcomes=tuple(outcomes), model_version=version
    )


def partition(outcomes):
    """Split tested relations into (failed, passed) by verdict.

    Deduplicated by relation id; when duplicate suites disagree the relation
    lands in the failed set so retraining targets the weakness.
    """
    failed: dict[str, object] = {}
    passed: dict[str, object] = {}
    for o in outcomes:
        if o.verdict == "failed":
            failed[o.mr.id] = o.mr
            passed.pop(o.mr.id, None)
        elif o.mr.id not in failed:
            passed[o.mr.id] = o.mr
    return list(failed.values()), list(passed.values())
