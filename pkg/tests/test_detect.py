import itertools
import math

import numpy as np
import pytest

from conftest import planar_journey
from trafficlens import detect
from trafficlens.detect import (FeatureVector, abof_scores, atspm_interruption,
                                featurize, flag_outliers, normalize)
from trafficlens.errors import InputError
from trafficlens.ingest import PhaseVolumeTable


# ---------------------------------------------------------------------------
# Brute-force ABOF oracle (full quadratic formulation, plain loops)
# ---------------------------------------------------------------------------

def abof_brute(points, idx):
    A = points[idx]
    others = [p for i, p in enumerate(points) if i != idx]
    vals, weights = [], []
    for B, C in itertools.combinations(others, 2):
        AB = np.asarray(B) - A
        AC = np.asarray(C) - A
        nb, nc = np.linalg.norm(AB), np.linalg.norm(AC)
        if nb == 0 or nc == 0:
            continue
        v = float(AB @ AC) / (nb * nb * nc * nc)
        w = 1.0 / (nb * nc)
        vals.append(v)
        weights.append(w)
    vals = np.array(vals)
    weights = np.array(weights)
    vbar = (weights * vals).sum() / weights.sum()
    return float((weights * (vals - vbar) ** 2).sum() / weights.sum())


class TestFeaturize:
    def test_constant_speed(self):
        j = planar_journey("a", [(10 * i, 0) for i in range(34)],
                           [10.0] * 34, dt=100.0 / 33.0)
        v = featurize(j)
        assert v.stopped_time == 0.0
        assert v.avg_speed == pytest.approx(10.0)
        assert v.speed_std == pytest.approx(0.0)
        assert v.travel_time == pytest.approx(100.0)

    def test_half_stopped(self):
        # 0 m/s on a 3 s grid until t=48, recovery sample at exactly t=50,
        # then 10 m/s to t=100: stop run spans [0, 50).
        ts = list(np.arange(0.0, 49, 3.0)) + [50.0] + list(np.arange(53.0, 101, 3.0))
        speeds = [0.0 if t < 50 else 10.0 for t in ts]
        rows = [(t, t, 0.0, s) for t, s in zip(ts, speeds)]
        from conftest import timed_journey
        j = timed_journey("a", rows)
        v = featurize(j)
        assert v.travel_time == pytest.approx(ts[-1] - ts[0])
        assert v.stopped_time == pytest.approx(50.0)

    def test_cohort_recorded(self):
        j = planar_journey("a", [(0, 0), (10, 0)], [10.0, 10.0])
        assert featurize(j, cohort="week_minus_2").cohort == "week_minus_2"

    def test_stopped_time_bounded_by_travel_time(self, rng):
        speeds = rng.choice([0.0, 0.5, 5.0], size=40).tolist()
        j = planar_journey("a", [(i, 0) for i in range(40)], speeds)
        v = featurize(j)
        assert v.stopped_time <= v.travel_time + 1e-9


class TestNormalize:
    def mk(self, jid, st, cohort="current"):
        return FeatureVector(journey_id=jid, stopped_time=st, avg_speed=10.0,
                             speed_std=1.0, travel_time=100.0, cohort=cohort)

    def test_pooled_mean_maps_to_zero(self):
        vs = [self.mk("a", 0.0), self.mk("b", 10.0)]
        X = normalize(vs)
        assert X[0][0] == pytest.approx(-1.0)
        assert X[1][0] == pytest.approx(1.0)

    def test_zero_variance_column_is_zero(self):
        vs = [self.mk("a", 5.0), self.mk("b", 5.0)]
        X = normalize(vs)
        assert np.all(X == 0.0)

    def test_needs_two(self):
        with pytest.raises(InputError):
            normalize([self.mk("a", 1.0)])

    def test_baseline_pool_switch(self):
        vs = [self.mk("a", 100.0, "current"), self.mk("b", 0.0, "week_minus_1"),
              self.mk("c", 10.0, "week_minus_1"), self.mk("d", 0.0, "week_minus_2"),
              self.mk("e", 10.0, "week_minus_2")]
        Xp = normalize(vs, pool="pooled")
        Xb = normalize(vs, pool="baselines")
        # baseline stats: mean 5, std 5 -> current maps to (100-5)/5 = 19
        assert Xb[0][0] == pytest.approx(19.0)
        assert Xp[0][0] != pytest.approx(19.0)


class TestAbofScores:
    def test_n3_all_zero_variance(self):
        pts = np.array([[0.0, 0], [1.0, 0], [0.0, 1.0]])
        scores = abof_scores(pts, k=2)
        for s in scores:
            assert s.abof == pytest.approx(0.0, abs=1e-12)

    def test_far_point_has_lowest_score(self, rng):
        pts = rng.normal(size=(20, 4))
        pts /= np.maximum(np.linalg.norm(pts, axis=1, keepdims=True), 1.0)
        pts = np.vstack([pts, [[10.0, 10.0, 10.0, 10.0]]])
        scores = abof_scores(pts, k=10)
        assert np.argmin([s.abof for s in scores]) == 20

    def test_equals_brute_force_at_k_n_minus_1(self, rng):
        for _ in range(50):
            n = int(rng.integers(5, 31))
            pts = rng.normal(size=(n, 4))
            scores = abof_scores(pts, k=n - 1)
            i = int(rng.integers(0, n))
            assert scores[i].abof == pytest.approx(abof_brute(pts, i), rel=1e-9)

    def test_k_clamped_with_warning(self, rng):
        pts = rng.normal(size=(5, 4))
        with pytest.warns(UserWarning):
            scores = abof_scores(pts, k=10)
        assert len(scores) == 5

    def test_translation_rotation_invariance(self, rng):
        pts = rng.normal(size=(15, 4))
        base = [s.abof for s in abof_scores(pts, k=6)]
        shifted = [s.abof for s in abof_scores(pts + 100.0, k=6)]
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        rotated = [s.abof for s in abof_scores(pts @ q, k=6)]
        assert base == pytest.approx(shifted, rel=1e-9)
        assert base == pytest.approx(rotated, rel=1e-9)

    def test_scaling_preserves_ranking(self, rng):
        pts = rng.normal(size=(15, 4))
        base = np.argsort([s.abof for s in abof_scores(pts, k=6)])
        scaled = np.argsort([s.abof for s in abof_scores(pts * 3.7, k=6)])
        assert np.array_equal(base, scaled)

    def test_duplicates_of_query_skipped(self):
        pts = np.array([[0.0, 0], [0.0, 0], [1.0, 0], [0, 1.0], [2.0, 2.0]])
        scores = abof_scores(pts, k=3)
        assert all(math.isfinite(s.abof) for s in scores)

    def test_too_few_points(self):
        with pytest.raises(InputError):
            abof_scores(np.zeros((2, 4)), k=2)


class TestFlagOutliers:
    def mk_scores(self, values):
        return [detect.OutlierScore(journey_id=f"j{i:03d}", abof=v)
                for i, v in enumerate(values)]

    def test_floor_count(self, rng):
        scores = self.mk_scores(rng.uniform(1, 2, size=20).tolist())
        out = flag_outliers(scores, contamination=0.1)
        assert sum(s.flagged for s in out) == 2

    def test_zero_when_floor_zero(self):
        scores = self.mk_scores([1.0, 2.0, 3.0])
        out = flag_outliers(scores, contamination=0.1)
        assert sum(s.flagged for s in out) == 0

    def test_tie_breaks_by_journey_id(self):
        scores = [detect.OutlierScore("b", 1.0), detect.OutlierScore("a", 1.0),
                  detect.OutlierScore("c", 2.0), detect.OutlierScore("d", 3.0),
                  detect.OutlierScore("e", 3.0), detect.OutlierScore("f", 3.0),
                  detect.OutlierScore("g", 3.0), detect.OutlierScore("h", 3.0),
                  detect.OutlierScore("i", 3.0), detect.OutlierScore("j", 3.0)]
        out = flag_outliers(scores, contamination=0.1)
        flagged = [s.journey_id for s in out if s.flagged]
        assert flagged == ["a"]

    def test_only_current_cohort_eligible(self):
        scores = self.mk_scores([0.1] * 10 + [5.0] * 10)
        cohorts = ["week_minus_1"] * 10 + ["current"] * 10
        out = flag_outliers(scores, contamination=0.1, cohorts=cohorts)
        flagged = [s.journey_id for s in out if s.flagged]
        assert flagged == ["j010"]  # floor(0.1 * 10 current) = 1, lowest current

    def test_permutation_determinism(self, rng):
        scores = self.mk_scores(rng.uniform(size=30).tolist())
        out1 = {s.journey_id for s in flag_outliers(scores, 0.2) if s.flagged}
        perm = list(scores)
        rng.shuffle(perm)
        out2 = {s.journey_id for s in flag_outliers(perm, 0.2) if s.flagged}
        assert out1 == out2

    def test_contamination_bounds(self):
        with pytest.raises(InputError):
            flag_outliers(self.mk_scores([1.0] * 4), contamination=0.5)


class TestAtspmInterruption:
    def table(self, counts, iid="I1"):
        return PhaseVolumeTable(intersection_id=iid, bin_s=3600.0,
                                counts=dict(counts))

    def test_equal_counts_score_zero(self):
        cur = self.table({(2, 0.0): 100})
        b1 = self.table({(2, 0.0): 100})
        b2 = self.table({(2, 0.0): 100})
        devs, nb = atspm_interruption(cur, [b1, b2])
        assert devs[0].score == 0.0 and not devs[0].flagged and nb == []

    def test_deficit_flagged(self):
        cur = self.table({(2, 0.0): 30})
        b1 = self.table({(2, 0.0): 100})
        b2 = self.table({(2, 0.0): 110})
        devs, _ = atspm_interruption(cur, [b1, b2])
        assert devs[0].score == pytest.approx((30 - 105) / 105)
        assert devs[0].flagged

    def test_zero_baseline_guard(self):
        cur = self.table({(2, 0.0): 0})
        devs, _ = atspm_interruption(cur, [self.table({(2, 0.0): 0}),
                                           self.table({(2, 0.0): 0})])
        assert devs[0].score == 0.0

    def test_no_baseline_reported(self):
        cur = self.table({(2, 0.0): 50, (4, 0.0): 10})
        b = self.table({(2, 0.0): 55})
        devs, nb = atspm_interruption(cur, [b])
        assert nb == [(4, 0.0)]
        assert len(devs) == 1

    def test_weekly_alignment(self):
        week = 604800.0
        cur = self.table({(2, week * 10): 50})
        b1 = self.table({(2, week * 9): 60})
        b2 = self.table({(2, week * 8): 70})
        devs, nb = atspm_interruption(cur, [b1, b2])
        assert nb == []
        assert devs[0].baseline_mean == pytest.approx(65.0)

    def test_antisymmetric_scores(self):
        base = [self.table({(2, 0.0): 100}), self.table({(2, 0.0): 100})]
        up, _ = atspm_interruption(self.table({(2, 0.0): 140}), base)
        down, _ = atspm_interruption(self.table({(2, 0.0): 60}), base)
        assert up[0].score == pytest.approx(-down[0].score)

    def test_binning_mismatch_rejected(self):
        cur = self.table({(2, 0.0): 10})
        bad = PhaseVolumeTable(intersection_id="I1", bin_s=900.0,
                               counts={(2, 0.0): 10})
        with pytest.raises(InputError):
            atspm_interruption(cur, [bad])
