use ssr2gcd_lab::config::{Overrides, RunConfig};
use ssr2gcd_lab::experiments::{parse_values, prepare, summary_csv, sweep, SweepParam};

#[test]
fn epsilon_sweep_peaks_inside_the_stable_band() {
    let cfg = RunConfig::default().finish(&Overrides::default()).unwrap();
    let values = parse_values("0.1..1.0", Some(0.1)).unwrap();
    let (split, lex) = prepare(&cfg, None).unwrap();
    let rows = sweep(&cfg, SweepParam::Epsilon, &values, &split, &lex).unwrap();
    let table = summary_csv("epsilon", &rows);
    println!("{table}");
    assert_eq!(table.lines().count(), 11);

    let peak = rows.iter().map(|r| r.acc_all).fold(f64::MIN, f64::max);
    let band_peak = rows
        .iter()
        .zip(&values)
        .filter(|(_, &e)| (0.2..=0.5).contains(&e))
        .map(|(r, _)| r.acc_all)
        .fold(f64::MIN, f64::max);
    assert_eq!(band_peak, peak, "peak acc_all {peak} lies outside epsilon 0.2..0.5");
}
