use deltavox::geometry::{Category, FlowField, PointCloudFrame, PointLabel, Vec3};
use deltavox::losses::{finite_diff_gradient, gradient_relative_error, total_loss, LossWeights};
use proptest::prelude::*;

type Row = (Option<(u32, u8)>, [f64; 3], [f64; 3]);

fn row() -> impl Strategy<Value = Row> {
    (
        prop::option::weighted(0.8, (0u32..6, 0u8..4)),
        [-0.4f64..0.4, -0.4f64..0.4, -0.05f64..0.05],
        [-0.3f64..0.3, -0.3f64..0.3, -0.3f64..0.3],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_matches_central_differences(rows in proptest::collection::vec(row(), 20..120)) {
        let mut labels = Vec::new();
        let mut gt = Vec::new();
        let mut pred = Vec::new();
        for (label, g, r) in &rows {
            let r = Vec3::from(*r);
            prop_assume!(r.norm() > 1e-3);
            labels.push(label.map(|(id, c)| PointLabel { instance: id * 4 + c as u32, category: Category::from_code(c).unwrap() }));
            gt.push(Vec3::from(*g));
            pred.push(Vec3::from(*g) + r);
        }
        let frame = PointCloudFrame::new(vec![Vec3::zeros(); rows.len()], 0.0).unwrap()
            .with_labels(labels).unwrap()
            .with_gt_flow(gt.clone()).unwrap();
        let pred = FlowField::new(pred).unwrap();
        let gt = FlowField::new(gt).unwrap();
        let w = LossWeights::default();
        let rep = total_loss(&pred, &gt, &frame, &w).unwrap();
        let num = finite_diff_gradient(&pred, &gt, &frame, &w, 1e-6).unwrap();
        prop_assert!(gradient_relative_error(&rep.gradient, &num) <= 1e-6);
        prop_assert!((rep.l_total - (rep.l_deflow + rep.l_category + rep.l_instance)).abs() < 1e-15);
    }
}
