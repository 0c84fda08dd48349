use super::*;
use std::f64::consts::PI;

#[test]
fn grid_51_by_51_has_2601_points() {
    let set = uniform_grid((-PI, PI), (-PI, PI), 51, 51).unwrap();
    assert_eq!(set.len(), 2601);
}

#[test]
fn two_by_two_grid_is_the_corners() {
    let set = uniform_grid((0.0, 1.0), (0.0, 1.0), 2, 2).unwrap();
    assert_eq!(set.column("x").unwrap(), &[0.0, 1.0, 0.0, 1.0]);
    assert_eq!(set.column("y").unwrap(), &[0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn coarse_grid_points_are_a_bit_exact_subset_of_the_fine_grid() {
    let fine = uniform_grid((-PI, PI), (-PI, PI), 101, 101).unwrap();
    let coarse = uniform_grid((-PI, PI), (-PI, PI), 51, 51).unwrap();
    assert_eq!(fine.len(), 10201);
    let (fx, fy) = (fine.column("x").unwrap(), fine.column("y").unwrap());
    let (cx, cy) = (coarse.column("x").unwrap(), coarse.column("y").unwrap());
    for iy in 0..51 {
        for ix in 0..51 {
            let c = iy * 51 + ix;
            let f = (2 * iy) * 101 + 2 * ix;
            assert_eq!(cx[c].to_bits(), fx[f].to_bits(), "x at ({ix},{iy})");
            assert_eq!(cy[c].to_bits(), fy[f].to_bits(), "y at ({ix},{iy})");
        }
    }
}

#[test]
fn grid_construction_is_deterministic() {
    let a = uniform_grid((-1.0, 1.0), (0.0, 2.0), 17, 9).unwrap();
    let b = uniform_grid((-1.0, 1.0), (0.0, 2.0), 17, 9).unwrap();
    assert_eq!(a.column("x").unwrap(), b.column("x").unwrap());
    assert_eq!(a.column("y").unwrap(), b.column("y").unwrap());
}

#[test]
fn degenerate_ranges_rejected() {
    assert!(matches!(
        uniform_grid((0.0, 0.0), (0.0, 1.0), 4, 4),
        Err(DataError::DegenerateRange)
    ));
    assert!(matches!(
        uniform_grid((0.0, 1.0), (0.0, 1.0), 1, 4),
        Err(DataError::DegenerateRange)
    ));
    assert!(matches!(
        quadrature_grid((0.0, 1.0), (0.0, 1.0), 1),
        Err(DataError::DegenerateRange)
    ));
}

#[test]
fn three_by_three_grid_has_eight_boundary_points() {
    let set = uniform_grid((0.0, 1.0), (0.0, 1.0), 3, 3).unwrap();
    let ids = boundary_ids(&set, &[EdgeSelect::both("x"), EdgeSelect::both("y")]).unwrap();
    assert_eq!(ids.len(), 8);
    assert!(!ids.contains(&4)); // center point is interior
}

#[test]
fn time_minimum_slab_selects_initial_condition_points() {
    let set = uniform_grid_named(("t", 0.0, 1.0, 5), ("x", -1.0, 1.0, 3)).unwrap();
    let ids = boundary_ids(&set, &[EdgeSelect::min("t").with_tol(1e-6)]).unwrap();
    // 3 x-rows at t = 0 (t is the inner coordinate here: ids 0, 5, 10).
    assert_eq!(ids, vec![0, 5, 10]);
}

#[test]
fn empty_boundary_selection_is_not_an_error() {
    let mut set = SampleSet::new();
    set.add_column("x", vec![0.5, 0.6, 0.7]);
    // Tolerance excludes everything but the min/max themselves; shrink to
    // a negative tolerance so nothing matches.
    let ids = boundary_ids(
        &set,
        &[EdgeSelect {
            column: "x".into(),
            side: EdgeSide::Min,
            tol: Some(-1.0),
        }],
    )
    .unwrap();
    assert!(ids.is_empty());
}

#[test]
fn unknown_column_in_edge_select() {
    let set = uniform_grid((0.0, 1.0), (0.0, 1.0), 3, 3).unwrap();
    assert!(matches!(
        boundary_ids(&set, &[EdgeSelect::both("zzz")]),
        Err(DataError::UnknownColumn(_))
    ));
}

#[test]
fn quadrature_70_grid_weights() {
    let q = quadrature_grid((-1.0, 1.0), (-1.0, 1.0), 70).unwrap();
    assert_eq!(q.interior_count, 4900);
    assert_eq!(q.boundary_ids.len(), 280);
    let vol = q.set.column("vol").unwrap();
    for &w in &vol[..q.interior_count] {
        assert_eq!(w, 4.0 / 4900.0);
    }
    let total: f64 = vol.iter().sum();
    assert!((total - 4.0).abs() < 1e-10 * 4.0);
}

#[test]
fn quadrature_integrates_odd_function_to_zero() {
    let q = quadrature_grid((-1.0, 1.0), (-1.0, 1.0), 70).unwrap();
    let x = q.set.column("x").unwrap();
    let y = q.set.column("y").unwrap();
    let vol = q.set.column("vol").unwrap();
    let integral: f64 = (0..q.set.len())
        .map(|i| (2.0 * PI * x[i]).sin() * (2.0 * PI * y[i]).sin() * vol[i])
        .sum();
    assert!(integral.abs() < 1e-12, "integral {integral}");
}

#[test]
fn midpoint_rule_converges_at_second_order() {
    // Smooth non-polynomial integrand with a known closed-form integral and
    // a nonzero net curvature (so the leading h^2 error term survives).
    let e = std::f64::consts::E;
    let exact = (e - 1.0 / e) * 2.0 * (e.sqrt() - 1.0 / e.sqrt());
    let quad_err = |n: usize| {
        let q = quadrature_grid((-1.0, 1.0), (-1.0, 1.0), n).unwrap();
        let x = q.set.column("x").unwrap();
        let y = q.set.column("y").unwrap();
        let vol = q.set.column("vol").unwrap();
        let integral: f64 = (0..q.set.len())
            .map(|i| (x[i] + 0.5 * y[i]).exp() * vol[i])
            .sum();
        (integral - exact).abs()
    };
    let ratio = quad_err(20) / quad_err(40);
    assert!(
        (3.2..=4.8).contains(&ratio),
        "error ratio {ratio} is not ~4"
    );
}

#[test]
fn boundary_and_interior_partition_the_quadrature_grid() {
    let q = quadrature_grid((0.0, 2.0), (0.0, 1.0), 13).unwrap();
    let n = q.set.len();
    let b: std::collections::HashSet<usize> = q.boundary_ids.iter().copied().collect();
    let interior: Vec<usize> = (0..n).filter(|i| !b.contains(i)).collect();
    assert_eq!(interior.len(), q.interior_count);
    assert_eq!(interior.len() + b.len(), n);
    assert!(interior.iter().all(|&i| i < q.interior_count));
}

#[test]
fn csv_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.csv");
    let mut set = SampleSet::new();
    set.add_column("x", (0..10).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>());
    set.add_column("u", (0..10).map(|i| 1.0 / (i as f64 + 1.0)).collect::<Vec<_>>());
    save_csv(&path, &set).unwrap();
    let back = load_csv(&path, &["x", "u"]).unwrap();
    assert_eq!(set.column("x").unwrap(), back.column("x").unwrap());
    assert_eq!(set.column("u").unwrap(), back.column("u").unwrap());
}

#[test]
fn missing_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.csv");
    std::fs::write(&path, "a,b\n1,2\n").unwrap();
    match load_csv(&path, &["a", "c"]) {
        Err(DataError::MissingColumn(name)) => assert_eq!(name, "c"),
        other => panic!("expected MissingColumn, got {other:?}"),
    }
}

#[test]
fn ragged_row_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.csv");
    std::fs::write(&path, "a,b\n1,2\n3\n4,5\n").unwrap();
    match load_csv(&path, &["a", "b"]) {
        Err(DataError::RaggedRows { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected RaggedRows, got {other:?}"),
    }
}

#[test]
fn parse_error_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.csv");
    std::fs::write(&path, "a,b\n1,2\n3,oops\n").unwrap();
    match load_csv(&path, &["a", "b"]) {
        Err(DataError::ParseFloat { line, column, .. }) => {
            assert_eq!((line, column.as_str()), (3, "b"));
        }
        other => panic!("expected ParseFloat, got {other:?}"),
    }
}

#[test]
fn append_rebases_id_sets() {
    let mut a = SampleSet::new();
    a.add_column("x", vec![1.0, 2.0]);
    let mut b = SampleSet::new();
    b.add_column("x", vec![3.0, 4.0]);
    b.add_id_set("marked", vec![1]);
    a.append(&b).unwrap();
    assert_eq!(a.column("x").unwrap(), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(a.ids("marked").unwrap(), &[3]);
}

proptest::proptest! {
    #[test]
    fn csv_round_trip_preserves_arbitrary_finite_values(
        values in proptest::collection::vec(-1e12f64..1e12, 1..40)
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.csv");
        let mut set = SampleSet::new();
        set.add_column("v", values.clone());
        save_csv(&path, &set).unwrap();
        let back = load_csv(&path, &["v"]).unwrap();
        proptest::prop_assert_eq!(back.column("v").unwrap(), values.as_slice());
    }
}
