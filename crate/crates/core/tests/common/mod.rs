#![allow(dead_code)]

use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use explore_core::protocol::{serve, Endpoint, ProtocolError, RawFrame};
use explore_core::{generate_plan, FloorPlan, FloorPlanConfig};

/// A generated plan at the default (desk-scale) settings.
pub fn plan(seed: u64) -> Arc<FloorPlan> {
    let cfg = FloorPlanConfig {
        rng_seed: seed,
        ..FloorPlanConfig::default()
    };
    Arc::new(generate_plan(&cfg).expect("plan generation"))
}

/// A smaller plan for tests that step many episodes.
pub fn small_plan(seed: u64) -> Arc<FloorPlan> {
    let cfg = FloorPlanConfig {
        rng_seed: seed,
        max_width_m: 10.0,
        max_height_m: 8.0,
        ..FloorPlanConfig::default()
    };
    Arc::new(generate_plan(&cfg).expect("plan generation"))
}

/// Serve every connection on a loopback port with a fresh copy of
/// `handler`. The listener thread lives until the test process exits.
pub fn tcp_double<F>(handler: F) -> Endpoint
where
    F: FnMut(RawFrame) -> Result<RawFrame, ProtocolError> + Clone + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let h = handler.clone();
            thread::spawn(move || {
                let reader = stream.try_clone().unwrap();
                let _ = serve(reader, stream, h);
            });
        }
    });
    Endpoint::Tcp(addr.to_string())
}

/// A double that answers one request per connection with raw bytes of its
/// choosing, then hangs up.
pub fn raw_double<F>(reply: F) -> Endpoint
where
    F: Fn(&[u8]) -> Vec<u8> + Clone + Send + 'static,
{
    use std::io::{Read, Write};
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let reply = reply.clone();
            thread::spawn(move || {
                let mut header = [0u8; 10];
                if stream.read_exact(&mut header).is_ok() {
                    let w = u16::from_le_bytes([header[6], header[7]]) as usize;
                    let h = u16::from_le_bytes([header[8], header[9]]) as usize;
                    let len = match &header[..4] {
                        b"MPRQ" => w * h,
                        b"PLRQ" => 2 * w * h + 1,
                        _ => return,
                    };
                    let mut payload = vec![0u8; len];
                    if stream.read_exact(&mut payload).is_err() {
                        return;
                    }
                    let mut frame = header.to_vec();
                    frame.extend_from_slice(&payload);
                    let _ = stream.write_all(&reply(&frame));
                }
            });
        }
    });
    Endpoint::Tcp(addr.to_string())
}
