use cascnn_core::afc::OdTensor;
use cascnn_core::odad::{build_masks, classify_level, compute_odad, sparsity_report, MaskSet, OdadLevel, OdadTable};
use cascnn_core::Error;
use proptest::prelude::*;

fn tensor_from(days: usize, intervals: usize, n: usize, f: impl Fn(usize, usize, usize, usize) -> u32) -> OdTensor {
    let mut od = OdTensor::zeros(days, intervals, n);
    let mut k = 0;
    for d in 0..days {
        for t in 0..intervals {
            for i in 0..n {
                for j in 0..n {
                    od.counts[k] = f(d, t, i, j);
                    k += 1;
                }
            }
        }
    }
    od
}

fn table(values: Vec<f64>, intervals: usize, n: usize) -> OdadTable {
    OdadTable {
        intervals,
        n,
        n_days: 1,
        values,
    }
}

#[test]
fn odad_examples() {
    let zero = OdTensor::zeros(3, 2, 2);
    assert!(compute_odad(&zero, 0..3).unwrap().values.iter().all(|&a| a == 0.0));

    let ramp = tensor_from(5, 1, 2, |d, _, i, j| if (i, j) == (0, 1) { d as u32 } else { 0 });
    assert_eq!(compute_odad(&ramp, 0..5).unwrap().get(0, 0, 1), 2.0);

    let od = tensor_from(4, 3, 3, |d, t, i, j| (d * 7 + t * 3 + i * 2 + j) as u32 % 5);
    let single = compute_odad(&od, 2..3).unwrap();
    for t in 0..3 {
        let expect: Vec<f64> = od.matrix(2, t).iter().map(|&c| f64::from(c)).collect();
        assert_eq!(single.matrix(t), expect.as_slice());
    }
    assert!(matches!(compute_odad(&od, 1..1), Err(Error::Config(_))));
}

#[test]
fn mask_boundaries() {
    let t = table(vec![2.0, 2.5, 0.0, 7.0], 1, 2);
    let m = build_masks(&t, 2.0);
    assert_eq!(m.interval(0), &[false, true, false, true]);
    assert_eq!(m.kept_count(0), 2);
    // a = 2 is in the Low level and therefore masked
    assert_eq!(classify_level(2.0).unwrap(), OdadLevel::Low);
    let eps = build_masks(&table(vec![2.0 + 1e-12], 1, 1), 2.0);
    assert_eq!(eps.kept_count(0), 1);

    let zero = build_masks(&table(vec![0.0; 8], 2, 2), 2.0);
    assert_eq!(zero.kept, vec![0, 0]);
    let all = build_masks(&table(vec![0.0; 8], 2, 2), -1.0);
    assert_eq!(all.kept, vec![4, 4]);
}

proptest! {
    #[test]
    fn raising_threshold_never_unmasks(values in prop::collection::vec(0.0f64..10.0, 1..64), lo in 0.0f64..8.0, bump in 0.0f64..4.0) {
        let t = table(values.clone(), 1, 1).clone();
        let t = OdadTable { n: 1, intervals: values.len(), ..t };
        let a = build_masks(&t, lo);
        let b = build_masks(&t, lo + bump);
        for (ma, mb) in a.mask.iter().zip(&b.mask) {
            prop_assert!(!(*mb && !*ma));
        }
        for (ka, kb) in a.kept.iter().zip(&b.kept) {
            prop_assert!(kb <= ka);
        }
    }

    #[test]
    fn every_nonnegative_value_has_one_level(a in 0.0f64..1e6) {
        let level = classify_level(a).unwrap();
        let brackets = [a == 0.0, a > 0.0 && a <= 2.0, a > 2.0 && a <= 4.0, a > 4.0 && a <= 6.0, a > 6.0];
        prop_assert_eq!(brackets.iter().filter(|&&b| b).count(), 1);
        prop_assert!(brackets[level.index()]);
    }

    #[test]
    fn odad_scales_linearly(seed in 0u32..1000, c in prop::sample::select(vec![2u32, 3, 4, 8, 10])) {
        let od = tensor_from(3, 2, 3, |d, t, i, j| (seed as usize + d * 5 + t * 11 + i * 3 + j * 7) as u32 % 9);
        let scaled = OdTensor { counts: od.counts.iter().map(|&x| x * c).collect(), ..od.clone() };
        let a = compute_odad(&od, 0..3).unwrap();
        let b = compute_odad(&scaled, 0..3).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            if c.is_power_of_two() {
                prop_assert_eq!(x * f64::from(c), *y);
            } else {
                prop_assert!((x * f64::from(c) - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }
}

#[test]
fn sparsity_buckets() {
    // interval 0 all zero; interval 1 a hand-built 3×3 on one day
    let m1 = [0, 1, 2, 3, 4, 5, 6, 7, 0];
    let od = tensor_from(1, 2, 3, |_, t, i, j| if t == 0 { 0 } else { m1[i * 3 + j] });
    let tab = compute_odad(&od, 0..1).unwrap();
    let rep = sparsity_report(&od, &tab, &[0, 1]).unwrap();
    assert_eq!(rep.intervals[0].bucket_fractions, [1.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(rep.intervals[0].level_counts, [9, 0, 0, 0, 0]);
    // {0,0} =0; {1,2} (0,2]; {3,4} (2,4]; {5,6} (4,6]; {7} >6
    let f = rep.intervals[1].bucket_fractions;
    assert_eq!(f, [2.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0, 1.0 / 9.0]);
    assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(rep.intervals[1].level_counts, [2, 2, 2, 2, 1]);
    let mut csv = Vec::new();
    rep.write_csv(&mut csv, |t| format!("t{t}")).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("interval,start,flow =0"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn mask_file_round_trips() {
    let t = table(vec![0.0, 3.0, 5.0, 1.0, 2.5, 2.0, 0.0, 9.0], 2, 2);
    let m = build_masks(&t, 2.0);
    let mut buf = Vec::new();
    m.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text, "interval,origin,destination,mask\n0,0,1,1\n0,1,0,1\n1,0,0,1\n1,1,1,1\n");
    let back = MaskSet::read_csv(&m.header(), buf.as_slice()).unwrap();
    assert_eq!(back, m);
}
