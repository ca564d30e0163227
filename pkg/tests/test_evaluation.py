import dataclasses
import math

import numpy as np
import pytest

from gazeforge import (
    AoiSpec,
    CohortSpec,
    ExperimentConfig,
    FeatureTable,
    GazeTrajectory,
    PipelineConfig,
    balanced_split,
    cohort_stats,
    generate_synthetic_cohort,
    prepare_channel_tables,
    prepare_sota_table,
    run_experiment,
    run_experiment_on_tables,
    sd_curve,
    sd_vs_users,
    sem,
    sota_protocol,
    sweep_feature_counts,
)


def test_sem_hand_values():
    mean, sd, se = sem([1.0, 2.0, 3.0, 4.0, 5.0])
    assert mean == 3.0
    assert sd == pytest.approx(1.5811388300841898, abs=1e-12)
    assert se == pytest.approx(0.7071067811865476, abs=1e-12)


def test_sem_identities():
    values = [0.61, 0.63, 0.68, 0.59, 0.66, 0.64]
    mean, sd, se = sem(values)
    assert se == sd / math.sqrt(len(values))  # bitwise: se is defined this way
    assert sd == pytest.approx(se * math.sqrt(len(values)), rel=1e-12)


def test_sem_degenerate_and_errors():
    mean, sd, se = sem([0.5, 0.5, 0.5])
    assert sd == 0.0 and se == 0.0
    with pytest.raises(ValueError):
        sem([1.0])


def test_balanced_split_counts(rng):
    # 185 + 185 participants at 80:20: 148 train / 37 test per class.
    y = np.array([1.0, 0.0] * 185)
    for _ in range(10):
        train, test = balanced_split(y, 0.8, rng)
        assert len(train) == 296 and len(test) == 74
        assert y[train].sum() == 148 and y[test].sum() == 37
        assert not set(train.tolist()) & set(test.tolist())
        assert len(set(train.tolist()) | set(test.tolist())) == 370


def test_balanced_split_stratifies_unbalanced(rng):
    y = np.array([1.0] * 20 + [0.0] * 25)
    train, test = balanced_split(y, 0.8, rng)
    assert y[train].sum() == 16 and y[test].sum() == 4
    assert (y[train] == 0).sum() == 20 and (y[test] == 0).sum() == 5


def make_tables(rng, n=40, signal=0.0):
    """Channel tables with an optional informative fixation feature."""
    labels = np.array(["F", "M"] * (n // 2), dtype=object)
    y = (labels == "F").astype(float)
    fix_values = np.column_stack([
        (y - 0.5) * signal + rng.normal(size=n),
        rng.normal(size=n),
        rng.normal(size=n),
    ])
    sac_values = rng.normal(size=(n, 3))
    ids = [f"p{i:03d}" for i in range(n)]
    fix = FeatureTable(ids, labels, ["f0", "f1", "f2"], fix_values, "fixation")
    sac = FeatureTable(ids, labels, ["s0", "s1", "s2"], sac_values, "saccade")
    return fix, sac


def test_perfectly_separable_feature(rng):
    fix, sac = make_tables(rng, signal=50.0)
    config = ExperimentConfig(n_runs=8, seed=3)
    report = run_experiment_on_tables(fix, sac, config)
    assert report.mean_accuracy == 1.0
    assert report.sd == 0.0


def test_reports_are_bit_identical(rng):
    fix, sac = make_tables(rng, signal=1.0)
    config = ExperimentConfig(n_runs=6, seed=9, weight_mode="optimized")
    a = run_experiment_on_tables(fix, sac, config)
    b = run_experiment_on_tables(fix, sac, config)
    assert dataclasses.asdict(a) == dataclasses.asdict(b)


def test_parallel_equals_serial(rng):
    fix, sac = make_tables(rng, signal=1.0)
    serial = run_experiment_on_tables(fix, sac, ExperimentConfig(n_runs=6, seed=4, n_jobs=1))
    parallel = run_experiment_on_tables(fix, sac, ExperimentConfig(n_runs=6, seed=4, n_jobs=2))
    assert serial.accuracies == parallel.accuracies


def test_report_sem_identity(rng):
    fix, sac = make_tables(rng, signal=1.0)
    report = run_experiment_on_tables(fix, sac, ExperimentConfig(n_runs=10, seed=2))
    assert report.sem == report.sd / math.sqrt(10)


def test_manual_and_leaky_weight_modes(rng):
    fix, sac = make_tables(rng, signal=1.5)
    manual = ExperimentConfig(n_runs=4, seed=5, weight_mode="manual", manual_weights=(0.696, 0.304))
    report = run_experiment_on_tables(fix, sac, manual)
    assert not report.leaky_weights
    leaky = ExperimentConfig(n_runs=4, seed=5, weight_mode="optimized", tune_on="test-leaky")
    report_leaky = run_experiment_on_tables(fix, sac, leaky)
    assert report_leaky.leaky_weights
    assert "leaky" in report_leaky.to_text()
    # Tuning against the test split can only help the measured accuracy.
    equal = run_experiment_on_tables(fix, sac, ExperimentConfig(n_runs=4, seed=5))
    assert report_leaky.mean_accuracy >= equal.mean_accuracy - 1e-12


def test_rank_on_all_differs_from_train(rng):
    # With a weak signal, ranking on the full table can pick different
    # features than ranking on the training split alone.
    fix, sac = make_tables(rng, n=24, signal=0.6)
    acc_train = run_experiment_on_tables(fix, sac, ExperimentConfig(n_runs=12, seed=1, rank_on="train"))
    acc_all = run_experiment_on_tables(fix, sac, ExperimentConfig(n_runs=12, seed=1, rank_on="all"))
    assert acc_train.accuracies != acc_all.accuracies


def test_subset_size(rng):
    fix, sac = make_tables(rng, n=40, signal=1.0)
    config = ExperimentConfig(n_runs=3, seed=7, subset_size=20)
    report = run_experiment_on_tables(fix, sac, config)
    assert report.n_participants == 20
    with pytest.raises(ValueError, match="subset"):
        run_experiment_on_tables(fix, sac, ExperimentConfig(n_runs=3, seed=7, subset_size=60))
    with pytest.raises(ValueError, match="even"):
        ExperimentConfig(subset_size=9)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(n_runs=0)
    with pytest.raises(ValueError):
        ExperimentConfig(split_ratio=1.0)
    with pytest.raises(ValueError):
        ExperimentConfig(classifier_kind="svm")
    with pytest.raises(ValueError):
        ExperimentConfig(weight_mode="manual")  # missing manual_weights
    with pytest.raises(ValueError):
        ExperimentConfig(weight_mode="manual", manual_weights=(0.9, 0.3))
    with pytest.raises(ValueError):
        ExperimentConfig(seed=-1)


def test_empty_channel_participant_excluded(small_cohort, caplog):
    # A participant who never saccades has an empty saccade channel.
    frozen = GazeTrajectory(
        "pstill", "F",
        small_cohort[0].t_ms.copy(),
        np.full(len(small_cohort[0]), 400.0),
        np.full(len(small_cohort[0]), 300.0),
        small_cohort[0].sample_rate_hz,
    )
    cohort = list(small_cohort) + [frozen]
    with caplog.at_level("WARNING"):
        table_fix, table_sac, excluded = prepare_channel_tables(cohort)
    assert "pstill" in excluded
    assert "pstill" not in table_fix.ids
    assert any("pstill" in rec.message for rec in caplog.records)
    report = run_experiment(cohort, ExperimentConfig(n_runs=2, seed=0))
    assert report.n_excluded == 1


def test_sweep_structure_and_pairing(signal_cohort):
    config = ExperimentConfig(n_runs=3, seed=11)
    reports = sweep_feature_counts(signal_cohort, [1, 2, 1], config)
    assert len(reports) == 3
    # Same k and same seed reproduce the same report: runs are paired across ks.
    assert reports[0].accuracies == reports[2].accuracies
    assert reports[0].config["k_features_per_channel"] == 1
    assert reports[1].config["k_features_per_channel"] == 2


def test_sota_protocol_structure(signal_cohort):
    config = ExperimentConfig(n_runs=5, seed=13)
    pipe, sota = sota_protocol(signal_cohort, config, n_female=6, n_male=8)
    for report in (pipe, sota):
        assert len(report.accuracies) == 5
        assert report.sd >= 0.0
        assert report.n_participants <= 14
    assert pipe.label == "pipeline features"
    assert sota.label == "sota features"
    with pytest.raises(ValueError, match="need"):
        sota_protocol(signal_cohort, config, n_female=100, n_male=100)


def test_sota_features_table(signal_cohort):
    table, excluded = prepare_sota_table(signal_cohort)
    assert table.feature_names == list(
        ("mean_fixation_duration_ms", "spatial_density", "rfdsd", "n_saccades",
         "mean_saccade_amplitude_deg", "total_path_length_px")
    )
    assert len(table) + len(excluded) == len(signal_cohort)


def test_sd_vs_users_deterministic_for_duplicate_sizes(signal_cohort):
    config = ExperimentConfig(n_runs=4, seed=21)
    results = sd_vs_users(signal_cohort, [10, 10, 16], config)
    curve = sd_curve(results)
    assert curve[0] == curve[1]
    assert [size for size, _ in curve] == [10, 10, 16]
    with pytest.raises(ValueError, match="ascending"):
        sd_vs_users(signal_cohort, [16, 10], config)


def dwell_trajectory(pid, gender, centers, rate=250.0):
    """Hand-built trajectory dwelling 240 ms at each center with 20 ms hops."""
    dwell_n, hop_n = 60, 5
    xs, ys = [], []
    for i, (cx, cy) in enumerate(centers):
        xs.extend([cx] * dwell_n)
        ys.extend([cy] * dwell_n)
        if i + 1 < len(centers):
            nx, ny = centers[i + 1]
            xs.extend(np.linspace(cx, nx, hop_n + 2)[1:-1])
            ys.extend(np.linspace(cy, ny, hop_n + 2)[1:-1])
    t = np.arange(len(xs)) * (1000.0 / rate)
    return GazeTrajectory(pid, gender, t, np.array(xs), np.array(ys), rate)


def biased_cohort(left_share_f=0.9, left_share_m=0.2, n_per_class=8, n_dwells=10):
    left = (200.0, 500.0)
    right = (1000.0, 500.0)
    cohort = []
    rng = np.random.default_rng(99)
    for i in range(n_per_class * 2):
        gender = "F" if i % 2 == 0 else "M"
        share = left_share_f if gender == "F" else left_share_m
        centers = []
        for d in range(n_dwells):
            base = left if rng.random() < share else right
            centers.append((base[0] + rng.normal(0, 15), base[1] + rng.normal(0, 15)))
        cohort.append(dwell_trajectory(f"b{i:02d}", gender, centers))
    return cohort


def test_cohort_stats_forced_left_bias():
    cohort = biased_cohort()
    aoi = AoiSpec({"left_eye": (0.0, 300.0, 640.0, 700.0), "right_eye": (640.0, 300.0, 1280.0, 700.0)})
    stats = cohort_stats(cohort, aoi, PipelineConfig(vt=20.0))
    left = stats.measures["aoi_share_left_eye"]
    assert left.female_mean > left.male_mean
    assert left.p_value < 0.01
    assert "aoi_share_left_eye" in stats.to_text()


def test_cohort_stats_identical_trajectories_give_p_one(small_cohort):
    base = small_cohort[0]
    clones = [
        GazeTrajectory(f"c{i}", "F" if i % 2 == 0 else "M",
                       base.t_ms.copy(), base.x_px.copy(), base.y_px.copy(), base.sample_rate_hz)
        for i in range(8)
    ]
    aoi = AoiSpec({"left": (0.0, 0.0, 640.0, 1024.0)})
    stats = cohort_stats(clones, aoi)
    for measure in stats.measures.values():
        assert measure.p_value == 1.0
        assert measure.female_mean == measure.male_mean


def test_cohort_stats_ttest_mode():
    cohort = biased_cohort()
    aoi = AoiSpec({"left_eye": (0.0, 300.0, 640.0, 700.0)})
    stats = cohort_stats(cohort, aoi, PipelineConfig(vt=20.0), stat_test="ttest")
    assert 0.0 <= stats.measures["aoi_share_left_eye"].p_value < 0.05


def test_aoi_validation():
    with pytest.raises(ValueError, match="x0"):
        AoiSpec({"bad": (10.0, 10.0, 5.0, 20.0)})
    aoi = AoiSpec({"big": (0.0, 0.0, 5000.0, 5000.0)})
    with pytest.raises(ValueError, match="bounds"):
        aoi.validate_bounds(PipelineConfig().geometry)


def test_null_cohort_accuracy_near_chance(small_cohort):
    report = run_experiment(small_cohort, ExperimentConfig(n_runs=12, seed=17))
    assert abs(report.mean_accuracy - 0.5) <= max(3 * report.sem, 0.15)
