use hllc::bench::{run_bench, bench_csv};
fn main() {
    let rows = run_bench(&[1, 256, 4096, 65536], 1, 7);
    print!("{}", bench_csv(&rows));
}
