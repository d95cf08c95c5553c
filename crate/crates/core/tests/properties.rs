//! Property tests over the probability layer, projections and parsers.

use mvib::prob::{derive_seed, sample_dataset};
use mvib::simplex::{project_floored_simplex, SimplexLayout};
use mvib::{Channel, Dataset, JointModel, JointTable, ProbVector};
use proptest::prelude::*;

fn normalized(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

prop_compose! {
    fn column(n: usize)(raw in prop::collection::vec(0.01f64..1.0, n)) -> Vec<f64> {
        normalized(&raw)
    }
}

prop_compose! {
    fn model(max_views: usize)(k in 2usize..4, v in 1usize..=max_views, n in prop::collection::vec(2usize..4, 3))
        (p_y in column(k), chans in prop::collection::vec(
            prop::collection::vec(prop::collection::vec(0.01f64..1.0, n[0]), k), v)) -> JointModel {
        let views = chans
            .into_iter()
            .map(|cols| {
                let cols: Vec<ProbVector> = cols.iter().map(|c| ProbVector::new(normalized(c)).unwrap()).collect();
                Channel::from_columns(&cols).unwrap()
            })
            .collect();
        JointModel::new(ProbVector::new(p_y).unwrap(), views).unwrap()
    }
}

proptest! {
    #[test]
    fn mutual_information_is_bounded(m in model(1)) {
        let mi = mvib::prob::mutual_information(m.p_y(), m.view(0)).unwrap();
        let h = mvib::prob::entropy(m.p_y());
        prop_assert!(mi >= -1e-12);
        prop_assert!(mi <= h + 1e-12);
    }

    #[test]
    fn joint_table_chain_rule(m in model(2)) {
        // I(X1, X2; Y) = I(X1; Y) + I(X2; Y | X1) on the enumerated joint.
        if m.num_views() < 2 { return Ok(()); }
        let (n1, n2, k) = (m.view(0).rows(), m.view(1).rows(), m.num_labels());
        let mut data = vec![0.0; n1 * n2 * k];
        for a in 0..n1 { for b in 0..n2 { for y in 0..k {
            data[(a * n2 + b) * k + y] = m.p_y().get(y) * m.view(0).get(a, y) * m.view(1).get(b, y);
        }}}
        let t = JointTable::new(vec![n1, n2, k], data).unwrap();
        let whole = t.mutual_information(&[0, 1], &[2]).unwrap();
        let first = t.mutual_information(&[0], &[2]).unwrap();
        let h = |axes: &[usize]| t.entropy_of_axes(axes).unwrap();
        let cond = h(&[0, 1]) + h(&[0, 2]) - h(&[0]) - h(&[0, 1, 2]);
        prop_assert!((whole - first - cond).abs() < 1e-12);
        prop_assert!(cond >= -1e-12);
    }

    #[test]
    fn projection_is_feasible_and_idempotent(raw in prop::collection::vec(-2.0f64..2.0, 2..8), eps in 1e-11f64..0.05) {
        prop_assume!(eps * raw.len() as f64 <= 0.5);
        let mut v = raw.clone();
        project_floored_simplex(&mut v, eps);
        let layout = SimplexLayout::new(vec![(0..v.len()).collect()], v.len());
        prop_assert!(layout.is_feasible(&v, eps, 1e-12));
        let mut again = v.clone();
        project_floored_simplex(&mut again, eps);
        for (a, b) in v.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_nearest(raw in prop::collection::vec(-1.0f64..1.0, 3), other in column(3)) {
        // Any feasible point is at least as far from the input as the projection.
        let mut p = raw.clone();
        project_floored_simplex(&mut p, 0.0);
        let d = |a: &[f64]| a.iter().zip(&raw).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        prop_assert!(d(&p) <= d(&other) + 1e-12);
    }

    #[test]
    fn model_json_round_trip(m in model(3)) {
        let back = JointModel::from_json_str(&m.to_json_string()).unwrap();
        prop_assert_eq!(back.alphabet_sizes(), m.alphabet_sizes());
        for (a, b) in back.views().iter().zip(m.views()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dataset_csv_round_trip(m in model(3), n in 1usize..40, seed in any::<u64>()) {
        let d = sample_dataset(&m, n, seed).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(&m, buf.as_slice(), seed).unwrap();
        prop_assert_eq!(back.records(), d.records());
    }

    #[test]
    fn derived_seeds_are_deterministic_and_path_sensitive(base in any::<u64>(), a in 0u64..100, b in 0u64..100) {
        prop_assert_eq!(derive_seed(base, &[a, b]), derive_seed(base, &[a, b]));
        if a != b {
            prop_assert_ne!(derive_seed(base, &[a, b]), derive_seed(base, &[b, a]));
        }
    }

    #[test]
    fn arbitrary_text_never_panics_the_parsers(s in "\\PC*") {
        let _ = JointModel::from_json_str(&s);
        let _ = mvib::experiments::ExperimentConfig::from_json_str(&s);
        let m = mvib::experiments::builtin_model("eq16").unwrap();
        let _ = Dataset::read_csv(&m, s.as_bytes(), 0);
    }
}

#[test]
fn rejects_malformed_models() {
    for bad in [
        r#"{"p_y": [0.5, 0.6], "views": [[[1.0, 1.0]]]}"#,
        r#"{"p_y": [0.5, 0.5], "views": []}"#,
        r#"{"p_y": [0.5, 0.5], "views": [[[0.5, 0.5], [0.6, 0.5]]]}"#,
        r#"{"p_y": [0.5, 0.5], "views": [[[-0.5, 0.5], [1.5, 0.5]]]}"#,
        r#"{"p_y": [1.0], "views": [[[1.0]]], "extra": 1}"#,
        "not json",
    ] {
        assert!(JointModel::from_json_str(bad).is_err(), "{bad}");
    }
}

#[test]
fn rejects_malformed_datasets() {
    let m = mvib::experiments::builtin_model("eq16").unwrap();
    for bad in [
        "y,x1,x2\n2,0,0\n",
        "y,x1\n0,0\n",
        "y,x1,x2\n0,3,0\n",
        "y,x1,x2\n0,a,0\n",
        "y,x1,x2\n0,0\n",
    ] {
        assert!(Dataset::read_csv(&m, bad.as_bytes(), 0).is_err(), "{bad:?}");
    }
}
