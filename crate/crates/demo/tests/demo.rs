use tsad_demo::{analysis, sample};

#[test]
fn samples_are_deterministic() {
    let a = sample("seasonal", 4, 240).unwrap();
    assert_eq!(a, sample("seasonal", 4, 240).unwrap());
    assert_eq!(a.values.len(), 240);
    assert_eq!(a.truth.len(), 240);
    assert!(a.truth.iter().any(|&t| t));
    assert!(sample("weekly", 4, 240).is_err());
}

#[test]
fn auto_uses_the_period_heuristic() {
    let s = sample("seasonal", 1, 336).unwrap();
    let a = analysis(&s.values, "auto", 0.0, 50.0).unwrap();
    assert_eq!(a.period, Some(24));
    assert_eq!(a.picked_by, "heuristic");
    assert_eq!(a.kind.as_str(), "shesd");
}

#[test]
fn alpha_widens_the_anomaly_set() {
    let s = sample("trend", 2, 336).unwrap();
    let mut previous = 0;
    for alpha in [0.0, 25.0, 50.0, 75.0, 100.0] {
        let a = analysis(&s.values, "sr", 1.0, alpha).unwrap();
        let flagged = a.labels.iter().filter(|&&l| l).count();
        assert!(flagged >= previous, "alpha {alpha}");
        assert!(a.labels.iter().zip(&a.raw_labels).all(|(&l, &r)| !l || r));
        previous = flagged;
    }
}

#[test]
fn band_narrows_32x_from_alpha_0_to_50() {
    let s = sample("level", 3, 200).unwrap();
    let wide = analysis(&s.values, "hbos", 0.99, 0.0).unwrap().band;
    let mid = analysis(&s.values, "hbos", 0.99, 50.0).unwrap().band;
    for i in 0..s.values.len() {
        let (w, m) = (wide.upper[i] - wide.lower[i], mid.upper[i] - mid.lower[i]);
        assert!(
            (w - 32.0 * m).abs() <= 1e-9 * w.abs().max(1.0),
            "{i}: {w} vs {m}"
        );
    }
}

#[test]
fn bad_inputs_are_errors() {
    assert!(analysis(&[1.0, 2.0], "sr", 2.0, 50.0).is_err());
    assert!(analysis(&[1.0; 50], "sr", 2.0, 101.0).is_err());
    assert!(analysis(&[1.0; 50], "lof", 2.0, 50.0).is_err());
    assert!(analysis(&[1.0; 50], "hbos", 1.5, 50.0).is_err());
}
