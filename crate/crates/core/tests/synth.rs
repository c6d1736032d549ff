use cascnn_core::afc::{ingest, write_afc, OutflowConvention, TimeGrid};
use cascnn_core::odad::{build_masks, compute_odad};
use cascnn_core::synth::{generate, weekdays, StationRole, SynthConfig};
use chrono::NaiveDate;

fn grid(days: usize) -> TimeGrid {
    TimeGrid::with_defaults(weekdays(NaiveDate::from_ymd_opt(2016, 2, 29).unwrap(), days)).unwrap()
}

#[test]
fn zero_rates_give_an_empty_file_and_a_manifest() {
    let cfg = SynthConfig {
        base_rate: 0.0,
        ..Default::default()
    };
    let out = generate(&cfg, &grid(3)).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.manifest.n, 20);
    assert_eq!(out.manifest.dates.len(), 3);
    let json = serde_json::to_string(&out.manifest).unwrap();
    assert!(json.contains("\"generator\""));
    let mut csv = Vec::new();
    write_afc(&out.records, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let bytes = |seed| {
        let out = generate(&SynthConfig { seed, ..Default::default() }, &grid(2)).unwrap();
        let mut csv = Vec::new();
        write_afc(&out.records, &mut csv).unwrap();
        (csv, serde_json::to_vec(&out.manifest).unwrap())
    };
    assert_eq!(bytes(3), bytes(3));
    assert_ne!(bytes(3).0, bytes(4).0);
}

#[test]
fn long_run_daily_counts_match_configured_rates() {
    let cfg = SynthConfig {
        n: 6,
        ..Default::default()
    };
    let g = grid(200);
    let out = generate(&cfg, &g).unwrap();
    let data = ingest(&out.records, &g, cfg.n, OutflowConvention::ExitTime).unwrap();
    // 200 weekdays from a Monday are 40 whole weeks, so weekday levels average
    // to 1; trips entering in the last hour may be dropped for exiting late
    let intervals = g.intervals_per_day() - 2;
    for (i, j) in [(0, 1), (2, 3), (4, 1)] {
        let expected: f64 = (0..intervals)
            .map(|t| out.demand.mean_rate(300.0 + 30.0 * t as f64 + 15.0, i, j))
            .sum();
        let total: u64 = (0..200)
            .flat_map(|d| (0..intervals).map(move |t| (d, t)))
            .map(|(d, t)| u64::from(data.od.get(d, t, i, j)))
            .sum();
        let mean = total as f64 / 200.0;
        assert!((mean - expected).abs() < 0.05 * expected, "pair ({i},{j}): {mean} vs {expected}");
    }
}

#[test]
fn default_dataset_regime() {
    let g = grid(15);
    let out = generate(&SynthConfig::default(), &g).unwrap();
    assert!(out.records.iter().all(|r| r.exit_time > r.entry_time));
    let data = ingest(&out.records, &g, 20, OutflowConvention::ExitTime).unwrap();
    assert_eq!(data.report.dropped_entry_out_of_grid + data.report.dropped_exit_out_of_grid, 0);

    // sparsity in every interval of every day
    for d in 0..15 {
        for t in 0..g.intervals_per_day() {
            let zeros = data.od.matrix(d, t).iter().filter(|&&c| c == 0).count();
            assert!(zeros as f64 > 0.4 * 400.0, "day {d} interval {t}: {zeros} zeros");
        }
    }

    // AM peak runs from residential to commercial stations
    let roles = &out.demand.roles;
    let eight = 6; // 08:00-08:30
    for d in 0..15 {
        let (mut forward, mut reverse) = (0u64, 0u64);
        for i in 0..20 {
            for j in 0..20 {
                let c = u64::from(data.od.get(d, eight, i, j));
                match (roles[i], roles[j]) {
                    (StationRole::Residential, StationRole::Commercial) => forward += c,
                    (StationRole::Commercial, StationRole::Residential) => reverse += c,
                    _ => {}
                }
            }
        }
        assert!(forward > reverse, "day {d}: {forward} vs {reverse}");
    }

    // some cells clear the default mask threshold, most do not
    let masks = build_masks(&compute_odad(&data.od, 0..12).unwrap(), 2.0);
    let kept: usize = masks.kept.iter().sum();
    assert!(kept > 0 && kept < masks.mask.len() / 4, "kept {kept}");
}

#[test]
fn ingested_synthetic_data_is_conserved() {
    for seed in 0..5 {
        let g = grid(3);
        let out = generate(&SynthConfig { seed, ..Default::default() }, &g).unwrap();
        let data = ingest(&out.records, &g, 20, OutflowConvention::ExitTime).unwrap();
        for d in 0..3 {
            for t in 0..g.intervals_per_day() {
                for i in 0..20 {
                    assert_eq!(u64::from(data.flows.inflow_at(d, t, i)), data.od.row_sum(d, t, i));
                }
            }
        }
        assert_eq!(data.flows.total_inflow(), data.flows.total_outflow());
        assert_eq!(data.flows.total_inflow(), out.records.len() as u64);
    }
}
