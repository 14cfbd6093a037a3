use msfs::gradsuite::run_suite;

fn main() -> msfs::Result<()> {
    for report in [run_suite::<f32>(7)?, run_suite::<f64>(7)?] {
        println!("== {} ({:.1?})", report.precision, report.elapsed);
        for c in &report.checks {
            println!(
                "{:<40} {:>6} entries  max rel {:.3e}  {}",
                c.name,
                c.report.checked(),
                c.report.max_rel_error,
                if c.report.passed() { "ok" } else { "FAIL" }
            );
        }
    }
    Ok(())
}
