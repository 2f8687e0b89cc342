//! The remote wire protocol: a line-protocol server answering from local
//! mock agents, a client backend per agent over one shared connection, and
//! the orchestrator running unchanged on top.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::Arc;

use trajalign::bench::gen_synthetic;
use trajalign::orchestrator::remote::{serve_backends, RemoteBackend, RemoteConfig};
use trajalign::orchestrator::{run_inference, AgentBackend, AgentBackends, OrchestratorConfig};
use trajalign::trajectory::{AgentKind, TokenTable};

struct Shared(Arc<RemoteBackend>);

impl AgentBackend for Shared {
    fn invoke(
        &self,
        request: &trajalign::orchestrator::AgentRequest,
    ) -> Result<trajalign::orchestrator::AgentResponse, trajalign::orchestrator::BackendError> {
        self.0.invoke(request)
    }
}

fn main() {
    let table = TokenTable::standard();
    let ds = gen_synthetic(23, 12, 0.5).unwrap();

    // Server thread: the mock world behind the line protocol.
    let served = ds.backends(&table, Default::default());
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let addr = listener.local_addr().unwrap();
    println!("serving six agents over the line protocol at {addr}");
    let server = std::thread::spawn(move || {
        serve_backends(listener, &served, 1).expect("serve");
    });

    // Client: every agent speaks through the same remote connection.
    let cfg = RemoteConfig { endpoint: addr.to_string(), timeout_ms: 4000, io_retries: 2 };
    let remote = Arc::new(RemoteBackend::connect(&cfg).expect("connect"));
    let mut map: BTreeMap<AgentKind, Box<dyn AgentBackend + Send + Sync>> = BTreeMap::new();
    for agent in AgentKind::ALL {
        map.insert(agent, Box::new(Shared(remote.clone())));
    }
    let backends = AgentBackends::new(map).unwrap();

    let mut correct = 0usize;
    for q in &ds.questions {
        let (answer, trace) = run_inference(&q.text, &backends, &OrchestratorConfig::default(), &table).unwrap();
        let hit = answer.trim() == q.gold_answer.trim();
        correct += hit as usize;
        println!(
            "  q{}: {} round(s), {} backend calls, answer {:?} ({})",
            q.id,
            trace.rounds.len(),
            trace.backend_invocations,
            answer,
            if hit { "correct" } else { "wrong" }
        );
    }
    println!("{correct}/{} answered correctly over the wire", ds.questions.len());

    drop(backends);
    drop(remote);
    server.join().unwrap();
}
