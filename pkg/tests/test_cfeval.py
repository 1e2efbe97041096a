import numpy as np
import pytest

from cfbench.cfeval import (
    Cell,
    MetricStats,
    QualityRecord,
    aggregate,
    count_by_cell,
    read_quality_records,
    score,
    write_cell_summaries,
    write_quality_records,
)
from cfbench.cfgen import SPARSITY, CfRequest, Counterfactual, nice, whatif
from cfbench.dataset import FAIL, PASS, LabeledDataset
from cfbench.distance import RangeTable

from conftest import StubModel


def dataset(rows, labels):
    return LabeledDataset.from_arrays(np.asarray(rows, dtype=float), labels)


def make_cf(values, req, method="moc", cell=None):
    return Counterfactual(values=np.asarray(values, dtype=float), method=method,
                          source_request=req, cell=cell)


def quality(request_id=0, cell=Cell("original", "vanilla", "moc"), validity=1,
            proximity=0.1, sparsity=2, minimality=0, plausibility=0.05):
    return QualityRecord(request_id, cell, validity, proximity, sparsity, minimality, plausibility)


class TestScore:
    def setup_method(self):
        # pass iff f1 >= 1, regardless of f2
        self.model = StubModel(lambda r: 0.0 if r[0] >= 1 else 1.0, p=2)
        self.train = dataset([[1, 1], [0, 0], [2, 5]], [PASS, FAIL, PASS])
        self.ranges = RangeTable.from_dataset(self.train)
        self.x = np.array([0.0, 0.0])
        self.req = CfRequest.for_instance(self.x, self.train)

    def test_whatif_output_is_plausible_and_valid(self):
        cfs = whatif(self.req, self.model, self.train, k=1)
        rec = score(self.x, cfs[0], self.model, self.train, self.ranges)
        assert rec.validity == 1
        assert rec.plausibility == 0.0

    def test_identity_counterfactual(self):
        rec = score(self.x, make_cf([0, 0], self.req), self.model, self.train, self.ranges)
        assert (rec.validity, rec.proximity, rec.sparsity, rec.minimality) == (0, 0.0, 0, 0)

    def test_redundant_change_counted_by_reversion(self):
        """cf changes both features but only f1 was necessary: minimality 1."""
        rec = score(self.x, make_cf([1, 5], self.req), self.model, self.train, self.ranges)
        assert rec.validity == 1
        assert rec.sparsity == 2
        assert rec.minimality == 1

    def test_reversion_oracle_on_random_cases(self):
        """Minimality equals a brute-force one-at-a-time reversion count."""
        rng = np.random.default_rng(3)
        model = StubModel(lambda r: 0.0 if (r[0] >= 1 or r[2] >= 3) else 1.0, p=3)
        train = dataset(rng.uniform(0, 5, size=(10, 3)), [PASS] * 5 + [FAIL] * 5)
        ranges = RangeTable.from_dataset(train)
        x = np.zeros(3)
        req = CfRequest.for_instance(x, train)
        for _ in range(50):
            cand = np.where(rng.random(3) < 0.5, rng.uniform(0, 5, 3), x)
            if model.predict_proba(cand) >= 0.5:
                continue
            rec = score(x, make_cf(cand, req), model, train, ranges)
            expected = 0
            for j in range(3):
                if cand[j] != x[j]:
                    probe = cand.copy()
                    probe[j] = x[j]
                    if model.predict_proba(probe) < 0.5:
                        expected += 1
            assert rec.minimality == expected
            assert rec.minimality <= rec.sparsity

    def test_pure_function(self):
        cf = make_cf([1, 3], self.req)
        a = score(self.x, cf, self.model, self.train, self.ranges)
        b = score(self.x, cf, self.model, self.train, self.ranges)
        assert a == b

    def test_nice_always_valid(self):
        cf = nice(self.req, self.model, self.train, SPARSITY)
        rec = score(self.x, cf, self.model, self.train, self.ranges)
        assert rec.validity == 1

    def test_invariant_enforced(self):
        with pytest.raises(ValueError, match="minimality"):
            quality(sparsity=1, minimality=2)


class TestAggregate:
    def test_single_record(self):
        s = aggregate([quality(proximity=0.3)])
        assert len(s) == 1
        stats = s[0].stats["proximity"]
        assert stats == MetricStats(0.3, 0.3, 0.3, 1)

    def test_hand_order_statistics(self):
        cell = Cell("original", "vanilla", "moc")
        recs = [quality(request_id=i, cell=cell, sparsity=v, minimality=0)
                for i, v in enumerate([1, 2, 3, 4, 5])]
        stats = aggregate(recs)[0].stats["sparsity"]
        assert (stats.median, stats.q1, stats.q3, stats.count) == (3.0, 2.0, 4.0, 5)

    def test_groups_cells_separately(self):
        a = Cell("original", "vanilla", "moc")
        b = Cell("smote", "tuned", "whatif")
        recs = [quality(cell=a), quality(cell=a), quality(cell=b)]
        out = aggregate(recs)
        assert [s.cell for s in out] == [a, b]
        assert out[0].stats["validity"].count == 2
        assert out[1].stats["validity"].count == 1

    def test_quartile_ordering_invariant(self):
        rng = np.random.default_rng(8)
        cell = Cell("smote", "vanilla", "moc")
        recs = [
            quality(request_id=i, cell=cell, proximity=float(rng.random()),
                    sparsity=int(rng.integers(0, 6)), minimality=0,
                    plausibility=float(rng.random()))
            for i in range(40)
        ]
        for summary in aggregate(recs):
            for stats in summary.stats.values():
                assert stats.q1 <= stats.median <= stats.q3

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no records"):
            aggregate([])


class TestCounts:
    def test_empty(self):
        assert count_by_cell([]) == {}

    def test_counts_per_cell(self):
        train = dataset([[0, 0], [1, 1]], [FAIL, PASS])
        req = CfRequest.for_instance(np.zeros(2), train)
        a = Cell("original", "vanilla", "moc")
        b = Cell("original", "vanilla", "whatif")
        cfs = [make_cf([1, 1], req, cell=a), make_cf([1, 0], req, cell=a),
               make_cf([0, 1], req, cell=b)]
        assert count_by_cell(cfs) == {a: 2, b: 1}

    def test_missing_cell_rejected(self):
        train = dataset([[0, 0], [1, 1]], [FAIL, PASS])
        req = CfRequest.for_instance(np.zeros(2), train)
        with pytest.raises(ValueError, match="no cell"):
            count_by_cell([make_cf([1, 1], req)])


class TestCsv:
    def test_quality_round_trip(self, tmp_path):
        recs = [
            quality(request_id="3", proximity=0.125, plausibility=0.0625),
            quality(request_id="9", cell=Cell("smote", "tuned", "nice_sp"),
                    validity=0, sparsity=5, minimality=2),
        ]
        path = tmp_path / "q.csv"
        write_quality_records(path, recs)
        assert read_quality_records(path) == recs

    def test_summaries_layout(self, tmp_path):
        path = tmp_path / "s.csv"
        write_cell_summaries(path, aggregate([quality()]))
        lines = path.read_text().splitlines()
        assert lines[0] == "balancing,tuning,method,metric,median,q1,q3,count"
        assert len(lines) == 1 + 5  # one row per metric
        assert lines[1].startswith("original,vanilla,moc,validity,")
