import csv
import io
import math
from decimal import Decimal

import numpy as np
import pytest
from _support import attack_rng

from vkdlab import evaluation as ev
from vkdlab import unlearn as ul
from vkdlab.numerics import Rng
from vkdlab.synthbench import QA, SPLITS, VQA, DatasetError, Sample, SplitDatasets
from vkdlab.toy_mllm import COMPONENTS, Dims, ToyMLLM


def random_samples(rng, n, kind=VQA, dims=Dims()):
    ents = rng.integers(dims.n_entities, n)
    attrs = rng.integers(dims.n_attributes, n)
    answers = rng.integers(dims.n_answers, n)
    imgs = rng.normal((n, dims.image_dim))
    return [Sample(kind, int(e), int(a), int(y), tuple(im) if kind == VQA else None)
            for e, a, y, im in zip(ents, attrs, answers, imgs)]


class TestAccuracy:
    def test_chance_level(self):
        model = ToyMLLM.init(Dims(), Rng(0))
        samples = random_samples(Rng(1), 4000)
        p = 1 / 8
        sigma = math.sqrt(p * (1 - p) / len(samples))
        assert abs(ev.accuracy(model, samples) - p) < 3 * sigma

    def test_ties_pick_lowest_answer(self):
        model = ToyMLLM.init(Dims(), Rng(0))
        model.params["W.out.weight"][...] = 0.0
        model.params["W.out.bias"][...] = 0.0
        samples = random_samples(Rng(2), 300, QA)
        expected = sum(s.answer == 0 for s in samples) / len(samples)
        assert ev.accuracy(model, samples) == expected

    def test_empty(self):
        assert ev.accuracy(ToyMLLM.init(Dims(), Rng(0)), []) is None

    def test_vanilla_memorises(self, pipeline0):
        data, vanilla = pipeline0
        for split in ("forget_vqa", "forget_qa", "retain_vqa", "retain_qa"):
            assert ev.accuracy(vanilla, data.split(split)) >= 0.9


class TestReport:
    def test_evaluate_all_splits(self, pipeline0):
        data, vanilla = pipeline0
        rep = ev.evaluate(vanilla, data, label="vanilla", seed=0, config={"k": 1})
        assert set(rep.accuracies) == set(SPLITS)
        d = rep.to_dict()
        assert "wall_seconds" not in d and d["config"] == {"k": 1}
        assert "wall_seconds" in rep.to_dict(timing=True)

    def test_missing_split_is_empty_cell(self):
        model = ToyMLLM.init(Dims(), Rng(0))
        data = SplitDatasets(forget_vqa=random_samples(Rng(3), 5))
        rep = ev.evaluate(model, data, label="x", seed=3)
        assert rep.accuracies["retain_qa"] is None
        rows = list(csv.reader(io.StringIO(ev.report_csv([rep]))))
        assert rows[0] == list(ev.REPORT_COLUMNS)
        assert rows[1][ev.REPORT_COLUMNS.index("retain_qa")] == ""

    def test_csv_config_comment(self):
        rep = ev.RunReport({s: 0.5 for s in SPLITS}, label="a", seed=1)
        text = ev.report_csv([rep], {"b": 2, "a": 1})
        assert text.splitlines()[0] == '# config={"a": 1, "b": 2}'
        assert text.splitlines()[2] == "a,1," + ",".join(["0.5"] * 6)

    def test_range_check(self):
        with pytest.raises(ValueError):
            ev.RunReport({"forget_vqa": 1.5})


class TestRouge:
    def test_examples(self):
        assert ev.rouge_l("a b c".split(), "a c".split()) == pytest.approx(0.8, abs=1e-12)
        assert ev.rouge_l("a b".split(), "a b".split()) == 1.0
        assert ev.rouge_l("a b".split(), "c d".split()) == 0.0
        assert ev.rouge_l([], ["a"]) == 0.0
        assert ev.rouge_l(["a"], []) == 0.0

    def test_symmetric(self):
        rng = Rng(4)
        for _ in range(50):
            a = rng.integers(4, int(rng.integers(8, 1)[0]) + 1).tolist()
            b = rng.integers(4, int(rng.integers(8, 1)[0]) + 1).tolist()
            assert ev.rouge_l(a, b) == pytest.approx(ev.rouge_l(b, a), abs=1e-15)

    def test_hashable_tokens(self):
        assert ev.rouge_l(["x", 1, None], ["x", None]) == pytest.approx(0.8)


class TestAccuracyGap:
    def test_examples(self):
        assert ev.accuracy_gap(ev.AttackCurve(0.2, [0.3, 0.5])) == pytest.approx(0.3)
        assert ev.accuracy_gap(ev.AttackCurve(0.5, [0.4])) == pytest.approx(-0.1)
        assert ev.accuracy_gap(ev.AttackCurve(0.5, [0.4]), magnitude=True) == pytest.approx(0.1)
        assert ev.AttackCurve(0.3, [0.3, 0.3]).accuracy_gap == 0

    def test_decimal_exact(self):
        c = ev.AttackCurve(Decimal("29.3"), [Decimal(v) for v in ("29.2", "27.6", "30.6")])
        assert ev.accuracy_gap(c) == Decimal("1.3")

    def test_empty_curve(self):
        with pytest.raises(ValueError):
            ev.accuracy_gap(ev.AttackCurve(0.1, []))


class TestAttack:
    def test_zero_lr_is_flat(self, pipeline0):
        data, vanilla = pipeline0
        curve = ev.relearn_attack(vanilla, data.forget_vqa, 0.2, 3, 0.0, ("V", "P"), attack_rng(0))
        assert curve.per_epoch == [curve.pre_attack] * 3
        assert curve.accuracy_gap == 0.0
        assert curve.n_attack_samples == math.ceil(0.2 * len(data.forget_vqa))

    def test_input_model_untouched(self, pipeline0):
        data, vanilla = pipeline0
        forgot, _ = ul.unlearn_vkd(vanilla, data, ul.UnlearnConfig(epochs=2), Rng(0))
        snap = forgot.copy()
        curve = ev.relearn_attack(forgot, data.forget_vqa, 0.2, 2, 0.01, ("V", "P"), attack_rng(0))
        assert curve.scope == ["V", "P"]
        # attack works on a copy
        assert forgot.flat().tobytes() == snap.flat().tobytes()

    def test_attack_recovers_and_is_deterministic(self, pipeline0):
        data, vanilla = pipeline0
        forgot, _ = ul.unlearn_vkd(vanilla, data, ul.UnlearnConfig(), Rng(0))
        a = ev.relearn_attack(forgot, data.forget_vqa, 0.3, 5, 0.05, COMPONENTS, attack_rng(0))
        b = ev.relearn_attack(forgot, data.forget_vqa, 0.3, 5, 0.05, COMPONENTS, attack_rng(0))
        assert a.to_dict() == b.to_dict()
        assert a.per_epoch[-1] >= a.pre_attack

    def test_errors(self, pipeline0):
        data, vanilla = pipeline0
        with pytest.raises(ValueError):
            ev.relearn_attack(vanilla, data.forget_vqa, 0.2, 0, 0.01, COMPONENTS, Rng(0))
        with pytest.raises(DatasetError):
            ev.relearn_attack(vanilla, [], 0.2, 1, 0.01, COMPONENTS, Rng(0))

    def test_attack_csv(self):
        curve = ev.AttackCurve(0.25, [0.5, 0.75], 0.2, ["V", "P"], 2)
        rows = list(csv.reader(io.StringIO(ev.attack_csv([("vkd", 3, curve)], 2))))
        assert rows[0] == ["method", "fraction", "seed", "scope", "pre_attack", "epoch1", "epoch2",
                           "accuracy_gap"]
        assert rows[1] == ["vkd", "0.2", "3", "V+P", "0.25", "0.5", "0.75", "0.5"]


def test_format_cell():
    assert ev.format_cell(None) == ""
    assert ev.format_cell(np.float64(0.1)) == "0.1"
