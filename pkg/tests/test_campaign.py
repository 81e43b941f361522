import math

import numpy as np
import pytest

from rsmtune import campaign as cp
from rsmtune.config import config_from_dict
from rsmtune.errors import CampaignError, ConfigError, EvaluationError

from .conftest import CCD_HALF_WIDTHS, NAMES, cann_config, quadratic_problem, screening_responses


def bowl_loss(rec):
    # smooth surrogate in original coding with an interior optimum
    x = np.array([rec.coded[n] for n in NAMES])
    return float(1 + np.sum((x - 0.3) ** 2))


def finish_screening(state, seed=0):
    y = screening_responses(seed)
    return cp.step(state, [(r.run_id, y[i]) for i, r in enumerate(state.phase_runs("Screening"))])


def finish_phase(state, fn=bowl_loss):
    return cp.step(state, [(r.run_id, fn(r)) for r in state.pending])


def through_descent(drop=False):
    s = finish_screening(cp.init(cann_config()))
    if drop:
        s = cp.drop_factors(s, p_threshold=0.5)
    return finish_phase(cp.begin_descent(s))


class TestInit:
    def test_screening_queue(self):
        s = cp.init(cann_config())
        assert len(s.pending) == 132
        assert s.phase == "Screening"
        assert [r.run_id for r in s.runs] == list(range(1, 133))
        assert [r.role for r in s.runs].count("center") == 4

    def test_one_factor(self):
        cfg = {"factors": [{"name": "x", "low": 0, "high": 1}], "phases": {"n_01": 1}}
        s = cp.init(cfg)
        assert [r.decoded["x"] for r in s.pending] == [0, 1, 0.5]

    @pytest.mark.parametrize("mutate,needle", [
        (lambda c: c["factors"][1].update(low=40), r"factors\[1\].*low must be < high"),
        (lambda c: c["factors"].append(dict(c["factors"][0])), "duplicate"),
        (lambda c: c["phases"].update(n_01=-1), "n_01"),
        (lambda c: c.update(factors=[]), "factors"),
        (lambda c: c["phases"].update(t_schedule=[-1, 2]), "t_schedule"),
    ])
    def test_invalid_config(self, mutate, needle):
        cfg = cann_config()
        mutate(cfg)
        with pytest.raises(ConfigError, match=needle):
            cp.init(cfg)

    def test_deterministic(self):
        a, b = cp.init(cann_config()), cp.init(cann_config())
        assert cp.state_to_dict(a) == cp.state_to_dict(b)


class TestStep:
    def test_idempotent(self):
        s = cp.init(cann_config())
        s1 = cp.step(s, [(1, 3.0), (2, 4.0)])
        s2 = cp.step(s1, [(1, 3.0)])
        assert s2 is s1
        assert s1.ledger == [1, 2]
        assert s.pending[0].loss is None  # input untouched

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_rejects_non_finite(self, bad):
        with pytest.raises(CampaignError, match="finite"):
            cp.step(cp.init(cann_config()), [(1, bad)])

    def test_unknown_and_conflicting(self):
        s = cp.step(cp.init(cann_config()), [(1, 3.0)])
        with pytest.raises(CampaignError, match="unknown"):
            cp.step(s, [(999, 1.0)])
        with pytest.raises(CampaignError, match="already recorded"):
            cp.step(s, [(1, 5.0)])
        with pytest.raises(CampaignError, match="conflicting"):
            cp.step(s, [(2, 1.0), (2, 2.0)])

    def test_all_or_nothing(self):
        s = cp.init(cann_config())
        with pytest.raises(CampaignError):
            cp.step(s, [(1, 1.0), (2, math.nan)])
        assert s.ledger == []

    def test_phase_waits_for_operator(self):
        s = finish_screening(cp.init(cann_config()))
        assert s.phase == "Screening" and s.awaiting
        assert s.screening_fit is not None
        assert s.screening_fit.coefficients[1] == pytest.approx(-21.8703, abs=1e-9)


class TestDrop:
    def test_screening_threshold(self):
        s = cp.drop_factors(finish_screening(cp.init(cann_config())), p_threshold=0.5)
        assert s.dropped == ["N1", "N3"]
        assert s.held == {"N1": 20, "N3": 10}

    def test_nothing_above_one(self):
        s = finish_screening(cp.init(cann_config()))
        assert cp.drop_factors(s, p_threshold=1.0) is s

    def test_empty_list_is_no_change(self):
        s = finish_screening(cp.init(cann_config()))
        assert cp.drop_factors(s, names=[]) is s

    def test_by_name(self):
        s = cp.drop_factors(finish_screening(cp.init(cann_config())), names=["Lr"])
        assert s.dropped == ["Lr"] and s.held == {"Lr": 3}

    def test_errors(self):
        s = finish_screening(cp.init(cann_config()))
        with pytest.raises(CampaignError, match="unknown"):
            cp.drop_factors(s, names=["Nope"])
        with pytest.raises(CampaignError, match="every factor"):
            cp.drop_factors(s, names=NAMES)
        with pytest.raises(CampaignError):
            cp.drop_factors(cp.init(cann_config()), names=["Lr"])

    def test_autopilot_default_drop(self):
        s = finish_screening(cp.init(cann_config()))
        assert cp.next_command(s) == ("drop", {"names": ["N1", "N3"]})


class TestDescent:
    def test_default_schedule(self):
        s = cp.begin_descent(finish_screening(cp.init(cann_config())))
        assert s.phase == "Descent"
        runs = s.phase_runs("Descent")
        assert len(runs) == 10 and [r.t for r in runs] == [-float(i) for i in range(1, 11)]
        assert runs[0].decoded == {"Op": 5, "N1": 20, "N2": 18, "N3": 10, "Ep": 703, "Bh": 8542, "Lr": 3}

    def test_custom_schedule(self):
        s = cp.begin_descent(finish_screening(cp.init(cann_config())), [-0.5, -1, -1.5])
        assert len(s.phase_runs("Descent")) == 3
        assert s.n_t == 3

    def test_positive_step_rejected(self):
        with pytest.raises(CampaignError, match="negative"):
            cp.begin_descent(finish_screening(cp.init(cann_config())), [-1, 1])

    def test_dropped_factors_held(self):
        s = through_descent(drop=True)
        for r in s.phase_runs("Descent"):
            assert r.decoded["N1"] == 20 and r.decoded["N3"] == 10

    def test_best_descent_tiebreak(self):
        s = cp.begin_descent(finish_screening(cp.init(cann_config())), [-1, -2, -3])
        ids = [r.run_id for r in s.pending]
        s = cp.step(s, [(ids[0], 2.0), (ids[1], 1.0), (ids[2], 1.0)])
        assert cp.best_descent_run(s).run_id == ids[1]


class TestCcd:
    def test_complete(self):
        s = cp.recenter_and_ccd(through_descent(), CCD_HALF_WIDTHS)
        assert len(s.phase_runs("Ccd")) == 146
        assert cp.budget(s).total == 288

    def test_reduced(self):
        s = cp.recenter_and_ccd(through_descent(drop=True), CCD_HALF_WIDTHS)
        assert len(s.phase_runs("Ccd")) == 46
        assert cp.budget(s).total == 188
        assert {r.decoded["N1"] for r in s.phase_runs("Ccd")} == {20}
        assert {r.decoded["N3"] for r in s.phase_runs("Ccd")} == {10}

    def test_recentred_domains(self):
        s = through_descent()
        best = cp.best_descent_run(s)
        s = cp.recenter_and_ccd(s, CCD_HALF_WIDTHS)
        for f in s.ccd_factors:
            assert f.m == best.decoded[f.name]
            assert f.s == CCD_HALF_WIDTHS[f.name]
        corners = [r for r in s.phase_runs("Ccd") if r.role == "corner"]
        assert {r.decoded["Ep"] - best.decoded["Ep"] for r in corners} == {-200, 200}

    def test_coded_columns_use_phase_coding(self):
        s = cp.recenter_and_ccd(through_descent(), CCD_HALF_WIDTHS)
        center = s.current_center["Ep"]
        for r in s.phase_runs("Ccd"):
            assert r.coded["Ep"] == pytest.approx((r.decoded["Ep"] - center) / 200)

    @pytest.mark.parametrize("widths,needle", [({"Ep": 0}, "> 0"), ({"Ep": 2.5}, "integer"),
                                                ({"Zz": 1}, "unknown")])
    def test_bad_half_widths(self, widths, needle):
        with pytest.raises(CampaignError, match=needle):
            cp.recenter_and_ccd(through_descent(), widths)

    def test_default_half_widths(self):
        s = cp.recenter_and_ccd(through_descent())
        widths = {f.name: f.s for f in s.ccd_factors}
        assert widths == {"Op": 2, "N1": 5, "N2": 5, "N3": 3, "Ep": 200, "Bh": 2500, "Lr": 1}


class TestConfirm:
    def ready(self):
        s = cp.recenter_and_ccd(through_descent(), CCD_HALF_WIDTHS)
        return finish_phase(s)

    def test_zero_replicates_finishes(self):
        s = cp.confirm(cp.analyze(self.ready()), 0)
        assert s.phase == "Done"
        assert s.confirmation["observed_mean"] is None
        assert s.confirmation["historic_min"] == s.historic_best().loss

    def test_replicates(self):
        s = cp.confirm(cp.analyze(self.ready()), 2)
        assert s.phase == "Confirmation" and len(s.pending) == 2
        s = finish_phase(s, lambda r: 0.5)
        assert s.phase == "Done"
        assert s.confirmation["observed_mean"] == 0.5
        assert cp.budget(s).confirmation == 2 and cp.budget(s).total == 288

    def test_degenerate_needs_use_best(self):
        s = cp.recenter_and_ccd(through_descent(), CCD_HALF_WIDTHS)
        s = finish_phase(s, lambda r: 1.0 + r.coded["Ep"] ** 2)  # trough: one curved direction
        s = cp.analyze(s)
        assert s.stationary.classification == "degenerate"
        with pytest.raises(CampaignError, match="use_best"):
            cp.confirm(s, 1)
        s = cp.confirm(s, 1, use_best=True)
        assert s.confirmation["source"] == "historic_best"

    def test_out_of_order(self):
        with pytest.raises(CampaignError):
            cp.recenter_and_ccd(cp.init(cann_config()))
        with pytest.raises(CampaignError):
            cp.analyze(through_descent())


class TestBudget:
    def test_grid_comparators(self):
        b = cp.budget(cp.init(cann_config()))
        assert b.gs_counts == {2: 128, 3: 2187, 4: 16384}

    def test_formula(self):
        b = cp.BudgetReport(k=2, p=2, f=0, n_c=1, n_c_prime=1, n_s=1, n_01=1, n_02=1, n_t=0)
        assert b.total == 4 + 1 + 0 + 4 + 4 + 1
        b = cp.BudgetReport(k=1, p=1, f=0, n_c=1, n_c_prime=1, n_s=1, n_01=1, n_02=1, n_t=0)
        assert b.total == 8


class TestAutopilot:
    def config(self, sigma=0.0, p=3):
        B, b, c, x_star, factors = quadratic_problem(p=p)
        cfg = {"factors": factors, "seed": 5,
               "objective": {"kind": "builtin_quadratic", "B": B.tolist(), "b": b.tolist(), "c": c,
                             "noise_sigma": sigma},
               "phases": {"n_01": 4, "n_02": 4, "replicates": 2, "drop_p_threshold": 1.0}}
        return cfg, B, b, c, x_star

    def test_reaches_done(self):
        cfg, B, b, c, x_star = self.config()
        s = cp.autopilot(cp.init(cfg))
        assert s.phase == "Done"
        assert s.stationary.classification == "minimum"
        f0 = config_from_dict(cfg).factors
        x = [(s.stationary.x_o_decoded[f.name] - f.m) / f.s for f in f0]
        assert np.allclose(x, x_star, atol=1e-8)
        assert s.confirmation["observed_mean"] == pytest.approx(c - 0.25 * b @ np.linalg.solve(B, b))
        # every recorded run is accounted for by the budget
        rep = cp.budget(s)
        assert len(s.ledger) == rep.total + rep.confirmation

    def test_jobs_do_not_change_result(self):
        cfg = self.config(sigma=0.1)[0]
        a = cp.autopilot(cp.init(cfg), jobs=1)
        b = cp.autopilot(cp.init(cfg), jobs=8)
        assert cp.state_to_dict(a) == cp.state_to_dict(b)

    def test_failure_pauses(self):
        cfg = self.config()[0]

        def flaky(rec):
            if rec.run_id == 3:
                raise EvaluationError("trainer crashed")
            return 1.0

        seen = []
        with pytest.raises(cp.CampaignPaused, match="run 3") as exc:
            cp.autopilot(cp.init(cfg), evaluator=flaky, on_command=lambda s, op, a: seen.append(s))
        assert [rid for rid, _ in exc.value.failures] == [3]
        # the batch's successes are recorded before pausing
        assert len(seen[-1].ledger) == len(seen[-1].runs) - 1
        assert seen[-1].run(3).loss is None
        res, fails = cp.evaluate_pending(cp.init(cfg), 4, flaky)
        assert [rid for rid, _ in fails] == [3]
        assert len(res) == len(cp.init(cfg).pending) - 1

    def test_offline_has_no_evaluator(self):
        with pytest.raises(CampaignError, match="offline"):
            cp.evaluate_pending(cp.init(cann_config()))


def test_state_round_trip():
    s = cp.analyze(TestConfirm().ready())
    d = cp.state_to_dict(s)
    assert cp.state_to_dict(cp.state_from_dict(d)) == d
    d["config"]["seed"] = 99
    with pytest.raises(CampaignError, match="digest"):
        cp.state_from_dict(d)
