//! Random mutations of genuine frames against a live gateway/agent pair.

use nodeguard::sim::mutation::mutation_campaign;

fn main() {
    let n = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5_000);
    let r = mutation_campaign(n, 11);
    println!(
        "{} mutations from a pool of {} genuine frames",
        r.total, r.genuine_pool
    );
    for (kind, (tried, accepted)) in &r.per_kind {
        println!("  {kind:<12} {tried:>6} tried {accepted:>3} accepted");
    }
    println!(
        "to gateway {} ({} logged), to agent {} ({} dropped), accepted {}",
        r.to_gateway, r.gateway_logged, r.to_agent, r.agent_dropped, r.accepted
    );
}
