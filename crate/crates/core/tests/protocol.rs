use fedtrust::agents::connection::{ConnectionRole, ConnectionState};
use fedtrust::agents::{Agent, Outbound, TrustPolicy};
use fedtrust::crypto::KeyPair;
use fedtrust::identity::{create_peer_did, pack, unpack, Message, MessageType};
use fedtrust::registry::{CredentialSchema, Registry};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

struct World {
    agents: Vec<Agent>,
    log: Vec<(usize, Vec<u8>)>,
}

impl World {
    /// issuer/verifier at 0, holder at 1.
    fn new(seed: u64) -> (Self, Arc<Registry>) {
        let registry = Arc::new(Registry::new());
        let agents = vec![
            Agent::new("a", "a:1", registry.clone(), seed),
            Agent::new("b", "b:1", registry.clone(), seed.wrapping_add(1)),
        ];
        (World { agents, log: Vec::new() }, registry)
    }

    fn deliver(&mut self, mut queue: Vec<Outbound>) {
        while !queue.is_empty() {
            let out = queue.remove(0);
            let i = self.agents.iter().position(|a| a.endpoint() == out.endpoint).unwrap();
            let wire = out.envelope.to_wire();
            self.log.push((i, wire.clone()));
            if let Ok(more) = self.agents[i].handle_wire(&wire) {
                queue.extend(more);
            }
        }
    }
}

/// Runs exchange, issuance and one proof round; returns the world and the verifier's connection.
fn honest_flow(seed: u64) -> (World, String) {
    let (mut w, registry) = World::new(seed);
    let issuer = w.agents[0].enable_issuer().unwrap();
    let schema = registry
        .register_schema(CredentialSchema::new("member", "1", &["role"]).unwrap())
        .unwrap();
    registry.authorize(&schema, &issuer).unwrap();
    let (ca, inv) = w.agents[0].create_invitation().unwrap();
    let (_, out) = w.agents[1].accept_invitation(&inv).unwrap();
    w.deliver(vec![out]);
    let attributes: BTreeMap<String, String> = [("role".to_string(), "x".to_string())].into();
    let out = w.agents[0].offer_credential(&ca, &schema, attributes).unwrap();
    w.deliver(vec![out]);
    let policy = TrustPolicy {
        schema_id: schema,
        required_issuer: issuer,
        disclosed_attributes: vec!["role".into()],
        attribute_constraints: vec![("role".into(), "x".into())],
    };
    let out = w.agents[0].request_proof(&ca, &policy).unwrap();
    w.deliver(vec![out]);
    (w, ca)
}

fn check_invariants(agent: &Agent) -> Result<(), TestCaseError> {
    for c in agent.wallet().connections() {
        prop_assert!(!c.trusted || c.is_complete());
        if c.is_complete() {
            let doc = c.their_document.as_ref().unwrap();
            prop_assert_eq!(Some(&doc.id), c.their_did.as_ref());
            prop_assert!(doc.is_consistent());
        }
        if c.role == ConnectionRole::Inviter && c.state == ConnectionState::Invited {
            prop_assert!(c.their_did.is_none());
        }
    }
    Ok(())
}

#[test]
fn honest_flow_answers_every_request() {
    let (w, ca) = honest_flow(11);
    assert!(w.agents[0].wallet().connection(&ca).unwrap().trusted);
    assert_eq!(w.agents[1].wallet().credential_count(), 1);
    for a in &w.agents {
        assert_eq!(a.open_thread_count(), 0);
        assert_eq!(a.unexpected_replies(), 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_message_type_round_trips(
        kind in 0..MessageType::ALL.len(),
        text in ".{0,200}",
        number in any::<i64>(),
        thid in proptest::option::of("[0-9a-f]{32}"),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let a = KeyPair::generate(&mut rng);
        let b = KeyPair::generate(&mut rng);
        let (a_did, a_doc) = create_peer_did(&a, "a:1").unwrap();
        let (_, b_doc) = create_peer_did(&b, "b:1").unwrap();
        let body = serde_json::json!({ "text": text, "number": number, "nested": { "list": [1, 2, 3] } });
        let msg = Message::new(MessageType::ALL[kind], thid, &body).unwrap();
        let env = pack(&msg, &a, &a_did, &b_doc, &mut rng).unwrap();
        let wire = fedtrust::identity::Envelope::from_wire(&env.to_wire()).unwrap();
        prop_assert_eq!(unpack(&wire, &b, &a_doc).unwrap(), msg);
    }

    /// Replays the honest flow's envelopes to fresh agents in a random order,
    /// with duplicates. Nothing may panic or leave a connection inconsistent.
    #[test]
    fn random_delivery_order_never_corrupts_state(
        seed in 0u64..1000,
        picks in proptest::collection::vec(any::<proptest::sample::Index>(), 0..40),
    ) {
        let (honest, _) = honest_flow(seed);
        let (mut fresh, registry) = World::new(seed);
        // rebuild the same out-of-band state: issuer DID, schema and invitation
        let issuer = fresh.agents[0].enable_issuer().unwrap();
        let schema = registry.register_schema(CredentialSchema::new("member", "1", &["role"]).unwrap()).unwrap();
        registry.authorize(&schema, &issuer).unwrap();
        let (_, inv) = fresh.agents[0].create_invitation().unwrap();
        let (_, _) = fresh.agents[1].accept_invitation(&inv).unwrap();
        for pick in picks {
            let (to, wire) = pick.get(&honest.log);
            let _ = fresh.agents[*to].handle_wire(wire);
            for a in &fresh.agents {
                check_invariants(a)?;
            }
        }
        // only one peer can ever complete an exchange per invitation
        let completed = fresh.agents[0].wallet().connections().filter(|c| c.is_complete()).count();
        prop_assert!(completed <= 1);
    }

    #[test]
    fn honest_flow_is_clean_for_any_seed(seed in any::<u64>()) {
        let (w, ca) = honest_flow(seed);
        prop_assert!(w.agents[0].wallet().connection(&ca).unwrap().trusted);
        for a in &w.agents {
            prop_assert_eq!(a.open_thread_count(), 0);
            prop_assert_eq!(a.unexpected_replies(), 0);
            check_invariants(a)?;
        }
    }
}
