use proptest::prelude::*;
use tke_core::bench::build_ee;
use tke_core::evaluation::AliasTable;
use tke_core::questions::{
    make_question_set, KnowledgeTag, QAItem, QuestionClass, QuestionScope, TemplatePack, TimeRef,
};
use tke_core::temporal_kb::{FactChain, TemporalFact, Year};

const HORIZON: Year = 2028;

fn chain_strategy() -> impl Strategy<Value = (FactChain, bool)> {
    (
        prop::sample::select(vec!["head_of_government", "plays_for", "spouse", "capital", "r"]),
        1950i32..2010,
        prop::collection::vec(0i32..9, 2..6),
        any::<bool>(),
    )
        .prop_map(|(relation, mut t, spans, open_last)| {
            let n = spans.len();
            let facts = spans
                .iter()
                .enumerate()
                .map(|(i, len)| {
                    let end = if open_last && i == n - 1 { None } else { Some(t + len) };
                    let f = TemporalFact::new("subj_x", relation, format!("obj_{i}"), t, end).unwrap();
                    t += len;
                    f
                })
                .collect();
            (FactChain { subject: "subj_x".into(), relation: relation.into(), facts }, relation == "r")
        })
}

fn pack_for(synthetic: bool) -> TemplatePack {
    if synthetic {
        TemplatePack::synthetic_pack()
    } else {
        TemplatePack::default_pack()
    }
}

fn target_fact<'a>(chain: &'a FactChain, k: usize, item: &QAItem) -> &'a TemporalFact {
    match item.knowledge_tag {
        KnowledgeTag::Current => &chain.facts[k],
        KnowledgeTag::Historical => &chain.facts[k - 1],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn question_sets_are_well_formed((chain, synthetic) in chain_strategy()) {
        let pack = pack_for(synthetic);
        let aliases = AliasTable::default();
        for k in 1..chain.len() {
            let items = make_question_set(&chain, k, &pack, &aliases, QuestionScope::Full, HORIZON).unwrap();
            prop_assert!(items.len() >= 5);
            for item in &items {
                prop_assert!(item.is_consistent(), "{item:?}");
                prop_assert!(!item.text.contains('{'), "{}", item.text);
                let fact = target_fact(&chain, k, item);
                prop_assert_eq!(&item.gold, &fact.object);
                if let TimeRef::Year(y) = item.query.time_ref {
                    prop_assert!(fact.contains_year(y, HORIZON), "{y} outside {fact}");
                }
            }
            let canonical = items.iter().find(|i| i.question_class == QuestionClass::Ces).unwrap();
            for sibling in items.iter().filter(|i| i.question_class == QuestionClass::CesP) {
                prop_assert_eq!(&sibling.query, &canonical.query);
                prop_assert_eq!(&sibling.gold, &canonical.gold);
            }
        }
    }

    #[test]
    fn extending_questions_ask_about_added_years((chain, synthetic) in chain_strategy(), ext in 1i32..6) {
        let pack = pack_for(synthetic);
        let rec = build_ee(&chain, &pack, &AliasTable::default(), ext, HORIZON).unwrap();
        let edit = &rec.edits[0];
        let (old_end, new_end) = (edit.old.t_end.unwrap(), edit.new.t_end.unwrap());
        prop_assert_eq!(new_end - old_end, ext);
        for item in rec.items() {
            prop_assert_eq!(item.knowledge_tag, KnowledgeTag::Current);
            prop_assert!(item.is_consistent());
            if let TimeRef::Year(y) = item.query.time_ref {
                prop_assert!(y > old_end && y <= new_end);
            }
        }
    }

    #[test]
    fn qa_items_round_trip_through_json((chain, synthetic) in chain_strategy()) {
        let items = make_question_set(&chain, 1, &pack_for(synthetic), &AliasTable::default(), QuestionScope::Full, HORIZON).unwrap();
        for item in items {
            let back: QAItem = serde_json::from_str(&serde_json::to_string(&item).unwrap()).unwrap();
            prop_assert_eq!(back, item);
        }
    }
}
