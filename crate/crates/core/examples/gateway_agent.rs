//! A gateway and one agent wired together in process.

use nodeguard::agent::{Agent, SimApp};
use nodeguard::gateway::{app_id_from_name, Action, Gateway, GatewayConfig};
use nodeguard::{Millis, NodeId};

fn pump(gw: &mut Gateway, agent: &mut Agent, actions: Vec<Action>, now: Millis) {
    let mut queue = actions;
    while !queue.is_empty() {
        let mut next = Vec::new();
        for a in queue {
            match a {
                Action::Send { frame, .. } => {
                    for reply in agent.handle_frame(&frame, now).replies {
                        next.extend(gw.handle_frame(&reply, now).actions);
                    }
                }
                other => println!("  {other:?}"),
            }
        }
        queue = next;
    }
}

fn main() {
    let mut gw = Gateway::new(GatewayConfig::default(), [3; 32]).unwrap();
    let node = NodeId::from_name("n1").unwrap();
    let mut agent = Agent::new(node, [4; 32]);

    println!("register");
    let hello = agent.hello(0);
    let out = gw.handle_frame(&hello, 0);
    pump(&mut gw, &mut agent, out.actions, 0);

    println!("deploy");
    let code = SimApp::build(1, 12, b"demo");
    let actions = gw.deploy(node, app_id_from_name("demo"), &code, 10).unwrap();
    pump(&mut gw, &mut agent, actions, 10);

    println!("data");
    for step in 1..=3 {
        let now = step * 1_000;
        if let Some(frame) = agent.run_app_step(step, now) {
            let out = gw.handle_frame(&frame, now);
            pump(&mut gw, &mut agent, out.actions, now);
        }
    }

    println!("tampered code");
    agent.adversary_patch_code(0, 0x10);
    let actions = gw.attest_now(node, 5_000).unwrap();
    pump(&mut gw, &mut agent, actions, 5_000);

    let rec = gw.node(&node).unwrap();
    println!(
        "status {} epoch {} stats {:?}",
        rec.status(),
        rec.epoch(),
        rec.stats()
    );
    print!("{}", nodeguard::logger::export_text(gw.log().entries()));
}
