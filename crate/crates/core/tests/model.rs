use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tke_core::editors::{edit_r1, EditTarget, Provenance, ProvenanceTime, R1Config, TargetTag};
use tke_core::error::Error;
use tke_core::model::persist::{load, save};
use tke_core::model::{Codebooks, LamModel, ModelConfig, TimeToken};
use tke_core::questions::{StructuredQuery, TimeRef};
use tke_core::temporal_kb::{TemporalFact, YearRange};

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i:03}")).collect()
}

fn sampled_cosines(seed: u64, d: usize, pairs: usize) -> Vec<f64> {
    let books = Codebooks::new(seed, d, ids("e", 2_000), ids("r", 13), YearRange::default());
    let v = books.entities.vectors();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..pairs)
        .map(|_| {
            let pair = sample(&mut rng, v.ncols(), 2);
            v.column(pair.index(0)).dot(&v.column(pair.index(1))).abs()
        })
        .collect()
}

#[test]
#[ignore = "i.i.d. Gaussian codebooks exceed 4/sqrt(d) somewhere in 10k pairs for roughly half of all seeds"]
fn codebook_entries_are_nearly_orthogonal() {
    let d = 256;
    let worst = sampled_cosines(7, d, 10_000).into_iter().fold(0.0, f64::max);
    let bound = 4.0 / (d as f64).sqrt();
    assert!(worst <= bound, "max |cos| {worst:.4} > {bound:.4}");
}

#[test]
fn codebook_coherence_matches_random_unit_vectors() {
    // For d = 256, P(|cos| > 4/sqrt(d)) is about 6.6e-5 per pair and
    // P(|cos| > 5/sqrt(d)) about 5.7e-7.
    let d = 256;
    let root = (d as f64).sqrt();
    for seed in [7, 8, 9] {
        let cos = sampled_cosines(seed, d, 10_000);
        let over = cos.iter().filter(|c| **c > 4.0 / root).count();
        let worst = cos.iter().copied().fold(0.0, f64::max);
        assert!(over <= 5, "seed {seed}: {over} pairs above 4/sqrt(d)");
        assert!(worst <= 5.0 / root, "seed {seed}: max |cos| {worst:.4}");
    }
}

#[test]
fn codebooks_depend_only_on_seed_and_id() {
    let a = Codebooks::new(3, 64, ["x", "y"], ["r"], YearRange::default());
    let b = Codebooks::new(3, 64, ["y", "z", "x"], ["r"], YearRange::default());
    assert_eq!(a.entities.vector("x").unwrap(), b.entities.vector("x").unwrap());
    let c = Codebooks::new(4, 64, ["x"], ["r"], YearRange::default());
    assert_ne!(a.entities.vector("x").unwrap(), c.entities.vector("x").unwrap());
}

/// `n` one-year facts over distinct subjects and relations.
fn scattered_facts(seed: u64, n: usize) -> (LamModel, Vec<TemporalFact>) {
    let subjects = ids("s", n);
    let relations = ids("r", n);
    let objects = ids("o", n);
    let entities: Vec<String> = subjects.iter().chain(&objects).cloned().collect();
    let mut model = LamModel::new(ModelConfig::with_dim(256).seed(seed), entities, relations.clone()).unwrap();
    let facts: Vec<TemporalFact> = (0..n)
        .map(|i| {
            let y = 1950 + (i as i32 * 7 + seed as i32) % 60;
            TemporalFact::new(&subjects[i], &relations[i], &objects[i], y, Some(y)).unwrap()
        })
        .collect();
    let with_prev: Vec<_> = facts.iter().map(|f| (f.clone(), None)).collect();
    model.initialize_from_facts(&with_prev).unwrap();
    (model, facts)
}

#[test]
fn stored_associations_decode_exactly() {
    // Four associations per fact: year, CURRENT and both span boundaries.
    for seed in 0..20 {
        let (model, facts) = scattered_facts(seed, 16);
        for f in &facts {
            for t in [TimeRef::Year(f.t_start), TimeRef::Current] {
                let a = model.query(&StructuredQuery::new(&f.subject, &f.relation, t)).unwrap();
                assert_eq!(a.object, f.object, "seed {seed}: {f} at {t:?}");
            }
            let span = model.predict_span(&f.subject, &f.relation, &f.object).unwrap();
            assert_eq!((span.start, span.end), (f.t_start, f.t_start), "seed {seed}: {f}");
        }
    }
}

/// Sixteen stored facts plus strangers and relations that never occur in them.
fn model_with_strangers() -> (LamModel, Vec<TemporalFact>, Vec<String>, Vec<String>) {
    let subjects = ids("s", 16);
    let relations = ids("r", 16);
    let strangers = ids("u", 100);
    let unused_relations = ids("q", 5);
    let entities: Vec<String> = subjects.iter().chain(&ids("o", 16)).chain(&strangers).cloned().collect();
    let all_relations: Vec<String> = relations.iter().chain(&unused_relations).cloned().collect();
    let mut model = LamModel::new(ModelConfig::with_dim(256).seed(3), entities, all_relations).unwrap();
    let facts: Vec<_> = (0..16)
        .map(|i| TemporalFact::new(&subjects[i], &relations[i], format!("o_{i:03}"), 2000, Some(2004)).unwrap())
        .collect();
    let with_prev: Vec<_> = facts.iter().map(|f| (f.clone(), None)).collect();
    model.initialize_from_facts(&with_prev).unwrap();
    (model, facts, strangers, unused_relations)
}

fn unseen_scores(model: &LamModel, strangers: &[String], relations: &[String]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    (0..100)
        .map(|_| {
            let s = &strangers[sample(&mut rng, strangers.len(), 1).index(0)];
            let r = &relations[sample(&mut rng, relations.len(), 1).index(0)];
            model.query(&StructuredQuery::new(s, r, TimeRef::Current)).unwrap().score
        })
        .collect()
}

#[test]
#[ignore = "cosine scores are scale-free: a weak echo of stored CURRENT keys still scores 0.4 to 0.7"]
fn unseen_pairs_score_below_one_half() {
    let (model, _, strangers, relations) = model_with_strangers();
    for score in unseen_scores(&model, &strangers, &relations) {
        assert!(score < 0.5, "{score}");
    }
}

#[test]
fn unseen_pairs_score_below_every_stored_pair() {
    let (model, facts, strangers, relations) = model_with_strangers();
    let stored = facts
        .iter()
        .map(|f| model.query(&StructuredQuery::new(&f.subject, &f.relation, TimeRef::Current)).unwrap().score)
        .fold(f64::INFINITY, f64::min);
    let unseen = unseen_scores(&model, &strangers, &relations).into_iter().fold(0.0, f64::max);
    assert!(unseen < stored, "unseen {unseen:.3} vs stored {stored:.3}");
}

#[test]
fn unseen_subject_with_known_relation_echoes_stored_object() {
    let (model, facts) = scattered_facts(3, 16);
    let a = model.query(&StructuredQuery::new("o_000", &facts[1].relation, TimeRef::Current)).unwrap();
    assert_eq!(a.object, facts[1].object);
}

fn obama_model() -> LamModel {
    let mut m = LamModel::new(
        ModelConfig::with_dim(256).seed(1),
        ["United_States", "Barack_Obama", "Donald_Trump"],
        ["head_of_government"],
    )
    .unwrap();
    let obama = TemporalFact::new("United_States", "head_of_government", "Barack_Obama", 2009, Some(2017)).unwrap();
    m.initialize_from_facts(&[(obama, None)]).unwrap();
    m
}

#[test]
fn initialized_fact_answers_year_and_current_queries() {
    let m = obama_model();
    for t in [TimeRef::Year(2013), TimeRef::Current] {
        let q = StructuredQuery::new("United_States", "head_of_government", t);
        assert_eq!(m.query(&q).unwrap().object, "Barack_Obama");
    }
}

#[test]
fn overwriting_current_erodes_history() {
    let mut m = obama_model();
    let obama = m.codebooks().entities.vector("Barack_Obama").unwrap().into_owned();
    let cosines = |m: &LamModel| -> Vec<f64> {
        (2009..=2017)
            .map(|y| {
                let k = m.encode_obj_key("United_States", "head_of_government", TimeToken::Year(y)).unwrap();
                let h = m.weights() * k;
                h.dot(&obama) / h.norm()
            })
            .collect()
    };
    let before = cosines(&m);
    let key = m.encode_obj_key("United_States", "head_of_government", TimeToken::Current).unwrap();
    let value = m.codebooks().entities.vector("Donald_Trump").unwrap().into_owned();
    let target = EditTarget {
        key,
        value,
        tag: TargetTag::CurrentRelative,
        provenance: Provenance {
            subject: "United_States".into(),
            relation: "head_of_government".into(),
            object: "Donald_Trump".into(),
            time: ProvenanceTime::Current,
        },
    };
    edit_r1(&mut m, &[target], &R1Config::default()).unwrap();
    for (y, (b, a)) in (2009..).zip(before.iter().zip(cosines(&m))) {
        assert!(a < *b, "{y}: {b:.4} -> {a:.4}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn queries_do_not_change_state(years in prop::collection::vec(1900i32..=2028, 1..20), alpha in 0.0f64..1.0) {
        let mut m = obama_model();
        m.set_alpha(alpha);
        let before = m.state_hash();
        for y in years {
            let _ = m.query(&StructuredQuery::new("United_States", "head_of_government", TimeRef::Year(y)));
            let _ = m.predict_span("United_States", "head_of_government", "Donald_Trump");
        }
        let _ = m.query(&StructuredQuery::new("United_States", "head_of_government", TimeRef::Previous));
        prop_assert_eq!(m.state_hash(), before);
    }
}

#[test]
fn save_load_is_bit_exact() {
    let mut m = obama_model();
    let trump = TemporalFact::new("United_States", "head_of_government", "Donald_Trump", 2017, Some(2021)).unwrap();
    let pairs = m.fact_associations(&trump, Some("Barack_Obama")).unwrap();
    let targets: Vec<EditTarget> = pairs
        .into_iter()
        .map(|(key, value)| EditTarget {
            key,
            value,
            tag: TargetTag::CurrentObject,
            provenance: Provenance {
                subject: "United_States".into(),
                relation: "head_of_government".into(),
                object: "Donald_Trump".into(),
                time: ProvenanceTime::Current,
            },
        })
        .collect();
    edit_r1(&mut m, &targets, &R1Config::default()).unwrap();
    let mut buf = Vec::new();
    save(&m, &mut buf).unwrap();
    let back = load(&buf[..]).unwrap();
    assert_eq!(back.weights(), m.weights());
    assert_eq!(back.covariance().to_dense(), m.covariance().to_dense());
    assert_eq!(back.state_hash(), m.state_hash());
    assert_eq!(back.config(), m.config());
    assert_eq!(back.codebooks().entities.vectors(), m.codebooks().entities.vectors());

    let mut again = Vec::new();
    save(&back, &mut again).unwrap();
    assert_eq!(again, buf);
}

#[test]
fn garbage_is_not_a_model() {
    assert!(matches!(load(&b"definitely not a model"[..]), Err(Error::Format(_))));
    let mut buf = Vec::new();
    save(&obama_model(), &mut buf).unwrap();
    buf.truncate(buf.len() - 9);
    assert!(matches!(load(&buf[..]), Err(Error::Format(_))));
}

#[test]
fn models_can_share_codebooks() {
    let a = obama_model();
    let b = LamModel::with_codebooks(*a.config(), Arc::clone(a.codebooks())).unwrap();
    assert!(Arc::ptr_eq(a.codebooks(), b.codebooks()));
    assert!(b.weights().iter().all(|x| *x == 0.0));
}
