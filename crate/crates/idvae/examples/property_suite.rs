fn main() {
    let t0 = std::time::Instant::now();
    let report = idvae::proptests::run_suite(None, None);
    print!("{}", report.render());
    println!("total units: {}", report.units());
    println!("elapsed: {:?}", t0.elapsed());
    std::process::exit(if report.all_passed() { 0 } else { 1 });
}
