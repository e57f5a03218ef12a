//! All seven presets over a few seeds, reporting median final perplexity,
//! bits per dimension and both NELBO variants.

use vqlab::harness::{median_final, run_ablation, ExperimentConfig, Method, MetricsRow};

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3}"))
}

fn main() -> vqlab::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seed count"));
    let base = ExperimentConfig::default();
    let threads = std::thread::available_parallelism().map_or(1, |p| p.get());
    let runs = run_ablation(&base, &Method::ALL, &(0..seeds).collect::<Vec<_>>(), threads)?;

    println!("{:<14} {:>10} {:>8} {:>9} {:>9}", "method", "perplexity", "bpd", "uniform", "unigram");
    for m in Method::ALL {
        let med = |f: fn(&MetricsRow) -> Option<f64>| fmt(median_final(&runs, m, f));
        println!(
            "{:<14} {:>10} {:>8} {:>9} {:>9}",
            m.name(),
            med(|r| r.perplexity),
            med(|r| r.bpd),
            med(|r| r.nelbo_uniform),
            med(|r| r.nelbo_unigram),
        );
    }
    Ok(())
}
