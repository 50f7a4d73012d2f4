use rpmnet_core::metrics;
use rpmnet_wasm_demo::playground::{roc_points, Playground, PER_CLASS, UNKNOWN_COUNT};

fn trapezoid(points: &[[f64; 2]]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]) * (w[1][1] + w[0][1]) / 2.0)
        .sum()
}

#[test]
fn roc_area_matches_auroc() {
    let known = [0.9, 0.8, 0.8, 0.5, 0.3, 0.3];
    let unknown = [0.8, 0.4, 0.3, 0.1];
    let pts = roc_points(&known, &unknown);
    assert_eq!(pts.first(), Some(&[0.0, 0.0]));
    assert_eq!(pts.last(), Some(&[1.0, 1.0]));
    let scores: Vec<f64> = known.iter().chain(&unknown).copied().collect();
    let flags: Vec<bool> = (0..scores.len()).map(|i| i < known.len()).collect();
    let expected = metrics::auroc(&scores, &flags, true).unwrap();
    assert!((trapezoid(&pts) - expected).abs() < 1e-12);
}

#[test]
fn samples_cover_known_and_unknown() {
    let pg = Playground::new(1).unwrap();
    let s = pg.samples();
    assert_eq!(s.len(), 3 * (3 * PER_CLASS + UNKNOWN_COUNT));
    let unknown = s.chunks(3).filter(|c| c[2] == -1.0).count();
    assert_eq!(unknown, UNKNOWN_COUNT);
}

#[test]
fn trained_playground_separates_centre_cluster() {
    let mut pg = Playground::new(7).unwrap();
    let last = pg.train(60).unwrap().cloned().unwrap();
    assert_eq!(pg.epochs_done(), 60);
    assert!(last.accuracy > 0.99, "accuracy {}", last.accuracy);
    let t = pg.calibrate().unwrap();
    assert_eq!(pg.tau(), t.tau);
    let r = pg.report().unwrap();
    let os = r.open_set.unwrap();
    assert!(os.auroc > 0.95, "auroc {}", os.auroc);
    let roc = pg.roc().unwrap();
    assert!((trapezoid(&roc) - os.auroc).abs() < 1e-12);
}

#[test]
fn tau_extremes_flag_nothing_or_everything() {
    let mut pg = Playground::new(3).unwrap();
    pg.train(5).unwrap();
    pg.set_tau(f64::NEG_INFINITY);
    let r = pg.report().unwrap();
    assert_eq!((r.rejected_known, r.flagged_unknown), (0, 0));
    pg.set_tau(f64::INFINITY);
    let r = pg.report().unwrap();
    assert_eq!(r.rejected_known, r.known_count);
    assert_eq!(r.flagged_unknown, r.unknown_count);
}

#[test]
fn grid_is_row_major_from_the_top() {
    let pg = Playground::new(2).unwrap();
    let (scores, classes) = pg.grid(-1.0, 1.0, -2.0, 2.0, 3, 2).unwrap();
    assert_eq!((scores.len(), classes.len()), (6, 6));
    let (top, _) = pg.grid(-1.0, -1.0, 2.0, 2.0, 1, 1).unwrap();
    let (bottom_right, _) = pg.grid(1.0, 1.0, -2.0, -2.0, 1, 1).unwrap();
    assert_eq!(scores[0], top[0]);
    assert_eq!(scores[5], bottom_right[0]);
}

#[test]
fn moving_unknown_keeps_model_and_same_seed_reproduces() {
    let mut a = Playground::new(5).unwrap();
    let mut b = Playground::new(5).unwrap();
    a.train(3).unwrap();
    b.train(3).unwrap();
    let before = a.grid(-3.0, 3.0, -3.0, 3.0, 4, 4).unwrap();
    a.move_unknown(2.5, -2.5).unwrap();
    assert_eq!(a.unknown_center(), [2.5, -2.5]);
    assert_eq!(a.grid(-3.0, 3.0, -3.0, 3.0, 4, 4).unwrap(), before);
    b.move_unknown(2.5, -2.5).unwrap();
    assert_eq!(a.samples(), b.samples());
    assert_eq!(a.history(), b.history());
}
