import pytest

from stasc.core import SamplingParams
from stasc.errors import DatasetError, StascError
from stasc.evaluation import (
    CORRECTION_ACC_LABEL,
    INITIAL_ACC_LABEL,
    IterationMetrics,
    _aggregate,
    curves_csv,
    evaluate_iteration,
    render_report_text,
    summarize_run,
    write_report,
)
from stasc.loop import Runner
from stasc.mock import MockRule
from stasc.prompts import default_template
from stasc.reward import make_reward
from stasc.store import RunDirectory

from tests.conftest import make_items, make_mock, make_run_config


def _metrics(n, initial_acc, correction_acc):
    return IterationMetrics(
        iteration=n,
        generator_model="m",
        corrector_model="m",
        aggregation="mean",
        initial_acc=initial_acc,
        initial_std=0.0,
        correction_acc=correction_acc,
        correction_std=0.0,
        item_ids=["a"],
        initial_rewards=[[initial_acc]],
        correction_rewards=[[[correction_acc]]],
    )


class TestAggregation:
    # Hand-computed 2x2 oracle: items' samples [[1,0],[0,0]].
    MATRIX = [[1.0, 0.0], [0.0, 0.0]]

    def test_mean_aggregation(self):
        acc, _ = _aggregate(self.MATRIX, "mean")
        assert acc == pytest.approx((0.5 + 0.0) / 2)  # = 0.25

    def test_max_aggregation_differs(self):
        acc, _ = _aggregate(self.MATRIX, "max")
        assert acc == pytest.approx((1.0 + 0.0) / 2)  # = 0.5

    def test_std_over_flat_samples(self):
        import statistics

        _, std = _aggregate(self.MATRIX, "mean")
        assert std == pytest.approx(statistics.pstdev([1.0, 0.0, 0.0, 0.0]))


def run_eval(items, test_items, backend, **kw):
    defaults = dict(
        backend=backend,
        initial_template=default_template("initial"),
        correction_template=default_template("correction"),
        reward_fn=make_reward("in_accuracy"),
        sampling=SamplingParams(),
        n_init=1,
        n_corr=1,
        aggregation="mean",
        run_seed=0,
        iteration=1,
        parallelism=2,
        train_ids={i.id for i in items},
    )
    defaults.update(kw)
    return evaluate_iteration("m0", "m0", test_items, **defaults)


class TestEvaluateIteration:
    def test_corrections_always_fix(self):
        items = make_items(2)
        test_items = make_items(4, prefix="t")
        # Half the test items answered right initially; corrections fix all.
        rules = [
            MockRule(stage="initial", item="t0", respond="correct"),
            MockRule(stage="initial", item="t1", respond="correct"),
            MockRule(stage="correction", respond="correct"),
        ]
        backend = make_mock(items, extra_items=test_items, rules=rules)
        metrics = run_eval(items, test_items, backend)
        assert metrics.correction_acc == 1.0
        assert metrics.initial_acc == pytest.approx(0.5)

    def test_split_overlap_rejected(self):
        items = make_items(2)
        backend = make_mock(items)
        with pytest.raises(DatasetError, match="overlap"):
            run_eval(items, items, backend)

    def test_matrix_dimensions(self):
        items = make_items(1)
        test_items = make_items(3, prefix="t")
        backend = make_mock(items, extra_items=test_items)
        metrics = run_eval(items, test_items, backend, n_init=2, n_corr=3)
        assert len(metrics.initial_rewards) == 3
        assert all(len(row) == 2 for row in metrics.initial_rewards)
        assert all(len(rows) == 2 for rows in metrics.correction_rewards)
        assert all(len(r) == 3 for rows in metrics.correction_rewards for r in rows)

    def test_deterministic_rerun(self):
        items = make_items(1)
        test_items = make_items(2, prefix="t")
        from stasc.mock import MockSkill

        skills = [MockSkill(model="m0", initial_correct_rate=0.5, correction_fix_rate=0.5)]
        backend = make_mock(items, extra_items=test_items, rules=[], skills=skills)
        a = run_eval(items, test_items, backend, n_init=3, n_corr=2)
        b = run_eval(items, test_items, backend, n_init=3, n_corr=2)
        assert a.to_dict() == b.to_dict()

    def test_failed_item_dropped_and_counted(self):
        from stasc.mock import MockFault

        items = make_items(1)
        test_items = make_items(3, prefix="t")
        backend = make_mock(
            items,
            extra_items=test_items,
            faults=[MockFault(item="t1", times=None)],
        )
        metrics = run_eval(items, test_items, backend)
        assert metrics.items_failed == 1
        assert metrics.item_ids == ["t0", "t2"]


class TestSummarize:
    def test_max_of_curve(self):
        summary = summarize_run(
            [_metrics(1, 0.30, 0.30), _metrics(2, 0.372, 0.35), _metrics(3, 0.35, 0.20)]
        )
        assert summary.max_initial_acc == pytest.approx(0.372)
        assert summary.best_initial_iteration == 2
        assert summary.max_correction_acc == pytest.approx(0.35)

    def test_singleton(self):
        summary = summarize_run([_metrics(1, 0.4, 0.6)])
        assert summary.max_initial_acc == 0.4
        assert summary.max_correction_acc == 0.6

    def test_empty_rejected(self):
        with pytest.raises(StascError):
            summarize_run([])

    def test_maximum_bounds_every_point(self):
        rows = [_metrics(n, n / 10, (10 - n) / 10) for n in range(1, 6)]
        summary = summarize_run(rows)
        for point in summary.curve:
            assert summary.max_initial_acc >= point["initial_acc"]
            assert summary.max_correction_acc >= point["correction_acc"]
        assert any(summary.max_initial_acc == p["initial_acc"] for p in summary.curve)


class TestReport:
    def _completed_run(self, tmp_path):
        cfg, items, test = make_run_config(
            tmp_path, iterations=2, n_init=1, n_corr=1, eval_enabled=True
        )
        backend = make_mock(items, extra_items=test)
        Runner(cfg, backend, backend).run()
        return cfg

    def test_report_columns_and_curves(self, tmp_path):
        cfg = self._completed_run(tmp_path)
        rd = RunDirectory(cfg.run_dir)
        state = rd.load_state()
        summary = write_report(rd, state)
        text = rd.report_text_path.read_text(encoding="utf-8")
        assert INITIAL_ACC_LABEL in text  # max{r(Ŷ¹)}
        assert CORRECTION_ACC_LABEL in text  # max{r(Ŷ²)}
        csv_text = rd.curves_path.read_text(encoding="utf-8")
        lines = csv_text.strip().splitlines()
        assert lines[0] == "iteration,initial_acc,initial_std,correction_acc,correction_std"
        assert len(lines) == 3
        assert summary is not None

    def test_report_without_eval(self, tmp_path):
        cfg, items, test = make_run_config(tmp_path, eval_enabled=False)
        backend = make_mock(items)
        Runner(cfg, backend, backend).run()
        rd = RunDirectory(cfg.run_dir)
        text = rd.report_text_path.read_text(encoding="utf-8")
        assert "no evaluation metrics recorded" in text

    def test_curves_csv_format(self):
        summary = summarize_run([_metrics(1, 0.25, 0.75)])
        assert curves_csv(summary).splitlines()[1] == "1,0.250000,0.000000,0.750000,0.000000"

    def test_render_includes_run_header(self, tmp_path):
        cfg = self._completed_run(tmp_path)
        rd = RunDirectory(cfg.run_dir)
        state = rd.load_state()
        text = render_report_text(state, None)
        assert "STaSC_EIF" in text
        assert state.run_id in text
