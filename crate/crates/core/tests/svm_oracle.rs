mod common;

use common::{fit_svm_2d, svm_oracle_case};
use s2m_core::svm::{predict_class, train_multiclass_svm, SvmConfig};
use s2m_core::RandomStream;

#[test]
fn primal_matches_grid_oracle_on_random_planar_sets() {
    for set in 0..10u64 {
        let (trained, oracle) = svm_oracle_case(set, 0.01);
        assert!(
            (trained - oracle).abs() <= 0.05 * oracle,
            "set {set}: trained {trained}, oracle {oracle}"
        );
    }
}

#[test]
fn separable_data_is_classified_correctly() {
    let points = [
        [2.0, 2.0],
        [3.0, 1.5],
        [2.5, 3.0],
        [-2.0, -2.0],
        [-3.0, -1.0],
        [-1.5, -2.5],
    ];
    let labels = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
    let (w, b) = fit_svm_2d(&points, &labels, 1.0, 1);
    for (p, y) in points.iter().zip(labels) {
        assert!(y * (w[0] * p[0] + w[1] * p[1] + b) > 0.0);
    }
}

#[test]
fn multiclass_columns_follow_class_order_and_predict() {
    let centres = [[4.0, 0.0], [0.0, 4.0], [-4.0, -4.0]];
    let mut s = RandomStream::new(5);
    let data: Vec<Vec<Vec<f64>>> = centres
        .iter()
        .map(|c| {
            (0..15)
                .map(|_| vec![c[0] + 0.5 * s.gaussian(), c[1] + 0.5 * s.gaussian()])
                .collect()
        })
        .collect();
    let names = ["a", "b", "c"];
    let per_class = |order: &[usize]| -> Vec<(String, Vec<&[f64]>)> {
        order
            .iter()
            .map(|&i| {
                (
                    names[i].to_string(),
                    data[i].iter().map(Vec::as_slice).collect(),
                )
            })
            .collect()
    };
    let cfg = SvmConfig {
        c_reg: 1.0,
        epochs: 50,
        seed: 9,
    };
    let forward = train_multiclass_svm(&per_class(&[0, 1, 2]), &cfg).unwrap();
    let permuted = train_multiclass_svm(&per_class(&[2, 0, 1]), &cfg).unwrap();
    assert_eq!(permuted.class_labels(), &["c", "a", "b"]);
    for (col_p, col_f) in [(0, 2), (1, 0), (2, 1)] {
        assert_eq!(
            permuted.weights().column(col_p),
            forward.weights().column(col_f)
        );
    }
    for (i, class) in data.iter().enumerate() {
        for x in class {
            assert_eq!(predict_class(&forward, x).unwrap(), names[i]);
        }
    }
}
