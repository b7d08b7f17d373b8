//! Shared fixtures for the benchmarks.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use xferfuzz_core::validate::{Attrs, CheckKind, Condition, ExecMode, Operand, Outcome, TraceFact};
use xferfuzz_core::{EmbeddingDb, EmbeddingVector};

pub const MODEL: &str = "bench-embed";

pub fn random_vector(rng: &mut StdRng, dim: usize) -> EmbeddingVector {
    EmbeddingVector::new(MODEL, (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// `n` random APIs named `lib.api{i}` plus the anchor vector.
pub fn embedding_db(n: usize, dim: usize, seed: u64) -> (EmbeddingDb, EmbeddingVector) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut db = EmbeddingDb::new();
    for i in 0..n {
        db.insert(&format!("lib.api{i}"), random_vector(&mut rng, dim))
            .expect("fixture dimensions agree");
    }
    let anchor = random_vector(&mut rng, dim);
    (db, anchor)
}

fn device(d: &str) -> Attrs {
    Attrs::from([("device".to_string(), d.to_string())])
}

/// A trace with `n` calls across two devices and compile modes, closed by a
/// failing value check, so that every bug type has work to do.
pub fn trace_facts(n: usize) -> Vec<TraceFact> {
    let modes = [ExecMode::Eager, ExecMode::JitTrace, ExecMode::CompileFx];
    let mut facts = Vec::with_capacity(2 * n + 1);
    for i in 0..n {
        let dev = if i % 2 == 0 { "cpu" } else { "cuda:0" };
        facts.push(TraceFact::VarDef {
            var: format!("x{i}"),
            ty: "tensor".into(),
            attrs: device(dev),
        });
        facts.push(TraceFact::ApiCall {
            api: "lib.clip".into(),
            mode: Some(modes[i % modes.len()]),
            output: format!("y{i}"),
            fault: None,
            attrs: device(dev),
        });
    }
    facts.push(TraceFact::OracleCheck {
        check: CheckKind::ValueCorrectness,
        condition: Condition::Compare(
            Operand::var("y0"),
            Operand::var(&format!("y{}", n.saturating_sub(1))),
        ),
        tolerance: None,
        criteria: vec![],
        capture: vec![],
        outcome: Outcome::Fail,
    });
    facts
}
