use pathhj::io::{format_time, read_path_csv, write_characteristic_csv, write_path_csv, write_table_csv};
use pathhj_core::characteristics::{integrate_characteristic, standard_e, SelectionPolicy};
use pathhj_core::control::{DelayKind, HamiltonianHandle};
use pathhj_core::sampling;
use pathhj_core::{GridSpec, HistoryPoint};
use proptest::prelude::*;

fn spec() -> GridSpec {
    GridSpec::new(2, 0.3, 0.7, 0.1).unwrap()
}

#[test]
fn path_csv_header_and_times() {
    let p = sampling::random_path(spec(), &mut sampling::rng(1), 1.0);
    let mut buf = Vec::new();
    write_path_csv(&mut buf, &p).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "time,x1,x2");
    assert_eq!(lines.len(), 1 + spec().node_count());
    assert!(lines[1].starts_with("-0.3,"));
    // 0.1 * 3 in binary is 0.30000000000000004; rounding keeps the csv clean
    assert!(lines[4].starts_with("0,"));
    assert!(lines[7].starts_with("0.3,"));
}

#[test]
fn path_csv_rejects_wrong_grid() {
    let p = sampling::random_path(spec(), &mut sampling::rng(2), 1.0);
    let mut buf = Vec::new();
    write_path_csv(&mut buf, &p).unwrap();
    let other = GridSpec::new(2, 0.3, 0.7, 0.05).unwrap();
    assert!(read_path_csv(buf.as_slice(), other).is_err());
    let one_d = GridSpec::new(1, 0.3, 0.7, 0.1).unwrap();
    assert!(read_path_csv(buf.as_slice(), one_d).is_err());
}

#[test]
fn characteristic_csv_header() {
    let s = spec();
    let h = HamiltonianHandle::delayed_linear(DelayKind::Constant { lag: 0.3 }, &s).unwrap();
    let e = standard_e(2.0, h).unwrap();
    let point = HistoryPoint::at_index(s.zero_index(), sampling::random_path(s, &mut sampling::rng(3), 1.0)).unwrap();
    let pair = integrate_characteristic(&e, &point, &[1.0, 0.0], &SelectionPolicy::RandomPerCell, 4).unwrap();
    let mut buf = Vec::new();
    write_characteristic_csv(&mut buf, &pair).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("time,y1,y2,z"));
    assert_eq!(text.lines().count(), 1 + s.node_count());
}

#[test]
fn table_csv_checks_row_width() {
    let header = vec!["a".to_string(), "b".to_string()];
    let mut buf = Vec::new();
    write_table_csv(&mut buf, &header, &[vec![1.0, 2.5]]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n1,2.5\n");
    assert!(write_table_csv(Vec::new(), &header, &[vec![1.0]]).is_err());
}

#[test]
fn format_time_examples() {
    assert_eq!(format_time(0.1 + 0.2), "0.3");
    assert_eq!(format_time(-0.0), "0");
    assert_eq!(format_time(1.0 / 3.0), "0.333333333333");
    assert_eq!(format_time(1.5), "1.5");
    assert_eq!(format_time(-2.0), "-2");
}

proptest! {
    #[test]
    fn path_csv_round_trips(seed in 0u64..10_000) {
        let s = spec();
        let p = sampling::random_path(s, &mut sampling::rng(seed), 2.0);
        let mut buf = Vec::new();
        write_path_csv(&mut buf, &p).unwrap();
        let back = read_path_csv(buf.as_slice(), s).unwrap();
        prop_assert_eq!(back.samples(), p.samples());
    }
}
