use bsc_core::metrics::{render_percent, AccuracyMatrix, SessionAccuracy};
use proptest::prelude::*;

fn acc_all_csv(rows: &[f64]) -> String {
    let mut s = String::from("t,acc_all,acc_base,acc_new,active_classes\n");
    for (i, v) in rows.iter().enumerate() {
        s += &format!("{},{v},,,{}\n", i + 1, 10 * (i + 1));
    }
    s
}

#[test]
fn published_rows_give_published_pd() {
    let cifar = [75.88, 70.29, 67.93, 64.5, 61.55, 59.98, 58.28, 56.38, 55.51];
    let cub = [
        80.1, 76.55, 73.98, 71.97, 70.41, 70.29, 69.16, 66.30, 65.63, 64.36, 63.02,
    ];
    let dir = tempfile::tempdir().unwrap();
    for (name, row, pd) in [("cifar", &cifar[..], "20.37"), ("cub", &cub[..], "17.08")] {
        let path = dir.path().join(format!("{name}.csv"));
        std::fs::write(&path, acc_all_csv(row)).unwrap();
        let m = AccuracyMatrix::load_csv(&path, true).unwrap();
        assert_eq!(render_percent(m.pd().unwrap()), pd);
    }
}

#[test]
fn file_round_trip_keeps_every_cell() {
    let m = AccuracyMatrix::new(vec![
        SessionAccuracy {
            t: 1,
            acc_all: 0.9,
            acc_base: Some(0.9),
            acc_new: None,
            num_active_classes: 20,
        },
        SessionAccuracy {
            t: 2,
            acc_all: 0.8,
            acc_base: Some(0.85),
            acc_new: Some(0.1 + 0.2),
            num_active_classes: 25,
        },
    ])
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    m.save_csv(&path).unwrap();
    assert_eq!(AccuracyMatrix::load_csv(&path, false).unwrap(), m);
    let commented = format!("# produced by a test\n{}", std::fs::read_to_string(&path).unwrap());
    assert_eq!(AccuracyMatrix::from_csv(&commented, false).unwrap(), m);
}

#[test]
fn malformed_files_are_schema_errors() {
    for text in [
        "",
        "a,b,c\n1,2,3\n",
        "t,acc_all,acc_base,acc_new,active_classes\n2,0.5,,,4\n",
        "t,acc_all,acc_base,acc_new,active_classes\n1,1.5,,,4\n",
        "t,acc_all,acc_base,acc_new,active_classes\n1,x,,,4\n",
    ] {
        let err = AccuracyMatrix::from_csv(text, false).unwrap_err();
        assert!(err.is_usage(), "{text:?}: {err}");
    }
}

proptest! {
    #[test]
    fn summary_matches_direct_sums(rows in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 2..12)) {
        let entries: Vec<SessionAccuracy> = rows
            .iter()
            .enumerate()
            .map(|(i, &(a, b, n))| SessionAccuracy {
                t: i + 1,
                acc_all: a,
                acc_base: Some(b),
                acc_new: (i > 0).then_some(n),
                num_active_classes: 5 + i,
            })
            .collect();
        let m = AccuracyMatrix::new(entries).unwrap();
        let t = rows.len();
        let nla: f64 = rows[1..].iter().map(|r| r.2).sum::<f64>() / (t - 1) as f64;
        let bma: f64 = rows.iter().map(|r| r.1).sum::<f64>() / t as f64;
        prop_assert!((m.pd().unwrap() - (rows[0].0 - rows[t - 1].0)).abs() < 1e-15);
        prop_assert!((m.nla().unwrap() - nla).abs() < 1e-12);
        prop_assert!((m.bma().unwrap() - bma).abs() < 1e-12);
    }
}
