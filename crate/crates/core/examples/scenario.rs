//! Runs a short adversarial scenario script in the simulator.

use nodeguard::sim;

const SCRIPT: &str = "\
set attest_interval_ms 2000
0     n1 join
0     n2 join
100   gateway deploy * sensor
3000  adversary corrupt dir=up type=DATA node=n1 offset=60 xor=0x80 count=2
5000  adversary replay last:DATA node=n2
8000  n2 tamper-code 0 0x01
20000 end
expect adversarial_accepted == 0
expect status n1 == active
expect forced_updates n2 == 1
expect log_chain == ok
";

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let (sim, report) = sim::run_script_text(SCRIPT, seed).expect("valid script");
    for line in report.trace.iter().filter(|l| !l.contains("DATA")) {
        println!("{line}");
    }
    for a in &report.attacks {
        println!("attack {} at {}: {:?}", a.kind, a.time, a.outcome);
    }
    for e in &report.expectations {
        println!(
            "{} {} (actual {})",
            if e.passed { "PASS" } else { "FAIL" },
            e.text,
            e.actual
        );
    }
    println!(
        "{} frames sent, {} anomalies logged",
        sim.link().sent,
        sim.metric("anomalies", None).unwrap()
    );
}
