use flamesentinel_core::dataio::{make_volumes, FrameSequence, SamplingSpec, VolumetricSample};
use flamesentinel_core::detection::{find_events, mean_filter, sample_metric, EventSpec, MetricSpec};
use flamesentinel_core::physval::{canny, conditioned_instants, thinness, CannyParams, EdgeEnsemble, EdgeMap, PressureSeries};
use flamesentinel_core::stats::{auc, kde, overlap, StatsSpec};
use proptest::prelude::*;

fn pow2() -> impl Strategy<Value = f64> {
    (-3i32..=3).prop_map(|e| 2f64.powi(e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn volumes_partition_the_sequence(t in 1usize..120, n in 1usize..12, k in 1usize..12) {
        let (h, w) = (2, 2);
        let frames: Vec<f32> = (0..t * h * w).map(|i| i as f32 / (t * h * w) as f32).collect();
        let seq = FrameSequence::new(frames.clone(), t, h, w, 50.0).unwrap();
        let spec = SamplingSpec::new(n, k).unwrap();
        match make_volumes(&seq, &spec) {
            Err(_) => prop_assert!(t < n),
            Ok(vols) => {
                prop_assert_eq!(vols.len(), (t - n) / k + 1);
                for (j, v) in vols.iter().enumerate() {
                    let start = j * k * h * w;
                    prop_assert_eq!(&v.voxels[..], &frames[start..start + n * h * w]);
                }
                // nothing past the last full window is left uncovered by more than a stride
                let last = (vols.len() - 1) * k + n;
                prop_assert!(t - last < k);
            }
        }
    }

    #[test]
    fn events_ignore_the_trace_scale(values in prop::collection::vec(0.0f64..100.0, 20..200), c in pow2()) {
        let spec = EventSpec { abs_floor_fraction: 0.0, min_run: 5, ..EventSpec::default() };
        let a = find_events(&values, 1.0, &spec).unwrap();
        let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
        let b = find_events(&scaled, 1.0, &spec).unwrap();
        prop_assert_eq!(a.peaks, b.peaks);
        prop_assert_eq!(a.transition, b.transition);
    }

    #[test]
    fn density_translates_with_its_data(
        a in prop::collection::vec(-5.0f64..5.0, 5..40),
        b in prop::collection::vec(-5.0f64..5.0, 5..40),
        shift in -50.0f64..50.0,
    ) {
        let spec = StatsSpec::default();
        let (da, db) = (kde(&a, &spec).unwrap(), kde(&b, &spec).unwrap());
        let moved = |v: &[f64]| v.iter().map(|x| x + shift).collect::<Vec<_>>();
        let (ma, mb) = (kde(&moved(&a), &spec).unwrap(), kde(&moved(&b), &spec).unwrap());
        prop_assert!((da.bandwidth - ma.bandwidth).abs() < 1e-9 * (1.0 + da.bandwidth));
        for x in [-3.0, 0.0, 1.7] {
            prop_assert!((da.eval(x) - ma.eval(x + shift)).abs() < 1e-7);
        }
        let (o, mo) = (overlap(&da, &db), overlap(&ma, &mb));
        prop_assert!((0.0..=1.0 + 1e-9).contains(&o));
        prop_assert!((o - mo).abs() < 1e-3, "{} vs {}", o, mo);
    }

    #[test]
    fn auc_depends_only_on_ranks(
        a in prop::collection::vec(-3.0f64..3.0, 1..30),
        b in prop::collection::vec(-3.0f64..3.0, 1..30),
    ) {
        let base = auc(&a, &b).unwrap();
        let f = |v: &[f64]| v.iter().map(|x| (2.0 * x).exp() + 7.0).collect::<Vec<_>>();
        prop_assert!((base - auc(&f(&a), &f(&b)).unwrap()).abs() < 1e-12);
        prop_assert!((base + auc(&b, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edges_ignore_power_of_two_gain(seed in any::<u64>(), c in pow2()) {
        let (h, w) = (16, 16);
        let mut state = seed | 1;
        let frame: Vec<f32> = (0..h * w)
            .map(|i| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                let blob = if (4..12).contains(&(i / w)) && (5..11).contains(&(i % w)) { 0.6 } else { 0.0 };
                blob + (state % 100) as f32 / 1000.0
            })
            .collect();
        let scaled: Vec<f32> = frame.iter().map(|v| v * c as f32).collect();
        let params = CannyParams::default();
        prop_assert_eq!(canny(&frame, h, w, &params).unwrap(), canny(&scaled, h, w, &params).unwrap());
    }

    #[test]
    fn conditioning_ignores_power_of_two_gain(values in prop::collection::vec(-1.0f64..1.0, 1..200), c in pow2()) {
        let p = PressureSeries::new(values.clone(), 100.0).unwrap();
        let q = PressureSeries::new(values.iter().map(|v| v * c).collect(), 100.0).unwrap();
        prop_assert_eq!(conditioned_instants(&p, 0.7), conditioned_instants(&q, 0.7));
    }

    #[test]
    fn sample_metric_ignores_frame_order(values in prop::collection::vec(0.0f32..1.0, 36), rot in 0usize..4) {
        let spec = MetricSpec::default();
        let s = VolumetricSample { voxels: values.clone(), depth: 4, height: 3, width: 3, index: 0 };
        let mut r = values;
        r.rotate_left(rot * 9);
        let t = VolumetricSample { voxels: r, ..s.clone() };
        let (a, b) = (sample_metric(&s, &spec), sample_metric(&t, &spec));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn mean_filter_stays_within_the_frame_range(values in prop::collection::vec(0.0f32..1.0, 30), size in 1usize..8) {
        let out = mean_filter(&values, 5, 6, size);
        let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        prop_assert!(out.iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
    }

    #[test]
    fn thinness_lies_between_one_and_member_count(shifts in prop::collection::vec((-3i32..=3, -3i32..=3), 1..6)) {
        let (h, w) = (20, 20);
        let members: Vec<EdgeMap> = shifts
            .iter()
            .map(|&(dr, dc)| {
                let mut m = EdgeMap::empty(h, w);
                for i in 0..8i32 {
                    for (r, c) in [(6, 6 + i), (13, 6 + i), (6 + i, 6), (6 + i, 13)] {
                        m.mask[((r + dr) as usize) * w + (c + dc) as usize] = true;
                    }
                }
                m
            })
            .collect();
        let n = members.len();
        let distinct = {
            let mut s = shifts.clone();
            s.sort();
            s.dedup();
            s.len()
        };
        let t = thinness(&EdgeEnsemble::from_members((0..n).collect(), members).unwrap()).unwrap();
        prop_assert!(t >= 1.0 - 1e-12 && t <= n as f64 + 1e-12);
        prop_assert_eq!(t == 1.0, distinct == 1);
    }
}

#[test]
fn square_outlines_jittered_by_whole_pixels_thicken_the_union() {
    let (h, w) = (24, 24);
    let outline = |dr: usize, dc: usize| {
        let mut m = EdgeMap::empty(h, w);
        for i in 0..10 {
            for (r, c) in [(7, 7 + i), (16, 7 + i), (7 + i, 7), (7 + i, 16)] {
                m.mask[(r + dr) * w + c + dc] = true;
            }
        }
        m
    };
    let shifts = [(0, 0), (3, 0), (0, 3), (3, 3), (1, 2)];
    let ens = EdgeEnsemble::from_members((0..5).collect(), shifts.iter().map(|&(r, c)| outline(r, c)).collect()).unwrap();
    assert!(thinness(&ens).unwrap() > 2.0);
}
