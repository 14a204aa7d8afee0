use std::sync::Arc;

use chrono::{DateTime, FixedOffset, TimeZone, Utc};
use textroute::config::Config;
use textroute::encoder::{AppLaunch, ContextSnapshot};
use textroute::llm::{AuditedLlm, ScriptedStubLlm, StubFailure};
use textroute::memory::FunctionDescriptor;
use textroute::portal::{Portal, PortalError, PredictRequest, PredictionList, Provenance, SelectRequest};

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 4, 9, 0, 0).unwrap()
}

fn ctx(minutes: i64, recent: &[&str]) -> ContextSnapshot {
    let now = t0() + chrono::Duration::minutes(minutes);
    let mut c = ContextSnapshot::at(now.with_timezone(&FixedOffset::east_opt(3600).unwrap()));
    for (i, app) in recent.iter().enumerate() {
        c.launches.push(AppLaunch {
            app: app.to_string(),
            at: now - chrono::Duration::seconds(20 + 40 * i as i64),
        });
    }
    c
}

fn collection() -> Vec<FunctionDescriptor> {
    vec![
        FunctionDescriptor::new("Maps", "search").with_description("Find places"),
        FunctionDescriptor::new("Yelp", "search").with_description("Find restaurants"),
        FunctionDescriptor::new("Spotify", "search"),
        FunctionDescriptor::new("Memo", "record"),
        FunctionDescriptor::new("Wallet", "pay"),
        FunctionDescriptor::new("Translate", "translate"),
        FunctionDescriptor::new("Calendar", "record"),
    ]
}

fn bare_config() -> Config {
    let mut cfg = Config::default();
    cfg.routing.bootstrap = false;
    cfg
}

fn portal_with(cfg: Config, llm: ScriptedStubLlm) -> Portal {
    let p = Portal::new(cfg).unwrap().with_llm(Arc::new(llm));
    p.provision("ann", Some(collection()), t0()).unwrap();
    p
}

fn ask(p: &Portal, text: &str, minutes: i64) -> PredictionList {
    p.predict(PredictRequest {
        user_id: "ann".into(),
        text: text.into(),
        context: ctx(minutes, &["Maps"]),
        request_id: None,
    })
    .unwrap()
}

fn pick(p: &Portal, list: &PredictionList, f: &str) {
    p.select(SelectRequest {
        user_id: "ann".into(),
        request_id: list.request_id.clone(),
        function_id: f.into(),
        satisfaction: None,
    })
    .unwrap();
}

#[test]
fn repeated_choice_moves_to_the_local_path() {
    let stub = ScriptedStubLlm::new(1, 1.0).with_rule("sushi", "Yelp-search");
    let p = portal_with(bare_config(), stub);
    let first = ask(&p, "sushi near me", 0);
    assert_eq!(first.provenance, Provenance::Llm);
    assert!(first.llm_called);
    assert_eq!(first.entries[0].function_id, "Yelp-search");
    pick(&p, &first, "Yelp-search");
    for i in 1..5 {
        let l = ask(&p, "sushi near me", i);
        pick(&p, &l, "Yelp-search");
    }
    let later = ask(&p, "sushi near me", 6);
    assert_eq!(later.provenance, Provenance::Local);
    assert!(!later.llm_called);
    assert!(later.confidence > 0.95);
    assert_eq!(later.entries[0].function_id, "Yelp-search");
    assert_eq!(later.llm_model_ms, None);
}

#[test]
fn ranking_covers_collection_and_entries_are_capped() {
    let p = portal_with(bare_config(), ScriptedStubLlm::new(2, 0.5));
    let l = ask(&p, "play some jazz", 0);
    assert!(l.entries.len() <= 5);
    let mut all = l.ranking.clone();
    all.sort();
    let mut want: Vec<String> = collection().into_iter().map(|f| f.id).collect();
    want.sort();
    assert_eq!(all, want);
    for (i, e) in l.entries.iter().enumerate() {
        assert_eq!(e.rank, i + 1);
        assert_eq!(e.function_id, l.ranking[i]);
    }
}

#[test]
fn override_filter_narrows_candidates() {
    let p = portal_with(bare_config(), ScriptedStubLlm::new(3, 1.0));
    let l = ask(&p, "ramen *find", 0);
    let f = l.filter.as_ref().unwrap();
    assert_eq!(f.matched, vec!["Maps-search", "Yelp-search"]);
    assert!(l.entries.iter().all(|e| f.matched.contains(&e.function_id)));
    assert_eq!(l.ranking.len(), collection().len());

    let only = ask(&p, "*record", 1);
    assert_eq!(only.provenance, Provenance::FallbackFrequency);
    assert!(!only.llm_called);
    assert_eq!(only.entries[0].function_id, "Memo-record");

    let err = p
        .predict(PredictRequest {
            user_id: "ann".into(),
            text: "x *nothing-matches".into(),
            context: ctx(2, &[]),
            request_id: None,
        })
        .unwrap_err();
    assert!(matches!(err, PortalError::InvalidRequest(_)));
}

#[test]
fn llm_failure_falls_back() {
    let down = ScriptedStubLlm::new(0, 1.0).failing(StubFailure::Transport);
    let p = portal_with(bare_config(), down);
    let cold = ask(&p, "convert 20 euros", 0);
    assert_eq!(cold.provenance, Provenance::FallbackFrequency);
    assert!(cold.llm_called);
    pick(&p, &cold, "Wallet-pay");

    let warm = ask(&p, "convert 30 euros", 1);
    assert_eq!(warm.provenance, Provenance::Local);
    assert!(warm.llm_called);
    assert_eq!(warm.entries[0].function_id, "Wallet-pay");

    let garbled = ScriptedStubLlm::new(0, 1.0).with_fixed_response("no idea, sorry");
    let p = portal_with(bare_config(), garbled);
    assert_eq!(ask(&p, "anything", 0).provenance, Provenance::FallbackFrequency);
}

#[test]
fn selection_labels_and_errors() {
    let stub = ScriptedStubLlm::new(4, 1.0).with_rule("dinner", "Yelp-search");
    let p = portal_with(bare_config(), stub);
    let l = ask(&p, "dinner for two", 0);
    let shown: Vec<&str> = l.entries.iter().map(|e| e.function_id.as_str()).collect();
    let ack = p
        .select(SelectRequest {
            user_id: "ann".into(),
            request_id: l.request_id.clone(),
            function_id: "Yelp-search".into(),
            satisfaction: Some(5),
        })
        .unwrap();
    assert_eq!(ack.label.get("Yelp-search"), 0.8);
    assert_eq!(ack.label.total(), 1.0);
    assert_eq!(ack.label.len(), shown.len());
    assert!(ack.record_id.is_some());
    assert!(ack.executed.contains("Yelp-search"));

    let sel = |request_id: &str, f: &str, s: Option<u8>| {
        p.select(SelectRequest {
            user_id: "ann".into(),
            request_id: request_id.into(),
            function_id: f.into(),
            satisfaction: s,
        })
    };
    assert!(matches!(sel(&l.request_id, "Maps-search", None), Err(PortalError::DuplicateSelection(_))));
    assert!(matches!(sel("ann-999", "Maps-search", None), Err(PortalError::UnknownRequest(_))));
    let l2 = ask(&p, "dinner again", 1);
    assert!(matches!(sel(&l2.request_id, "Nope-search", None), Err(PortalError::UnknownFunction(_))));
    assert!(matches!(sel(&l2.request_id, "Maps-search", Some(9)), Err(PortalError::InvalidRequest(_))));

    let outside = l2.ranking.last().unwrap().clone();
    let ack = sel(&l2.request_id, &outside, None).unwrap();
    assert_eq!(ack.label.get(&outside), 0.8);
    assert_eq!(ack.label.total(), 1.0);

    let profile = p.profile("ann").unwrap();
    assert_eq!(profile.usage["Yelp-search"].count, 1);
    assert_eq!(profile.satisfaction, vec![(l.request_id.clone(), 5)]);
}

#[test]
fn records_grow_only_on_selection() {
    let p = portal_with(bare_config(), ScriptedStubLlm::new(5, 0.65));
    let before = p.record_count("ann").unwrap();
    let l = ask(&p, "note buy milk", 0);
    assert_eq!(p.record_count("ann").unwrap(), before);
    pick(&p, &l, "Memo-record");
    assert_eq!(p.record_count("ann").unwrap(), before + 1);
    let _ = ask(&p, "note buy eggs", 1);
    assert_eq!(p.record_count("ann").unwrap(), before + 1);
}

#[test]
fn managing_functions() {
    let p = portal_with(bare_config(), ScriptedStubLlm::new(6, 1.0));
    let after = p.add_function("ann", FunctionDescriptor::new("Uber", "search"), t0()).unwrap();
    assert_eq!(after.len(), collection().len() + 1);
    assert!(matches!(
        p.add_function("ann", FunctionDescriptor::new("Uber", "search"), t0()),
        Err(PortalError::DuplicateFunction(_))
    ));
    assert!(ask(&p, "ride home", 0).ranking.contains(&"Uber-search".to_string()));
    let after = p.remove_function("ann", "Uber-search").unwrap();
    assert_eq!(after.len(), collection().len());
    assert!(!ask(&p, "ride home", 1).ranking.contains(&"Uber-search".to_string()));
    assert!(matches!(p.remove_function("ann", "Uber-search"), Err(PortalError::UnknownFunction(_))));
    assert!(matches!(p.remove_function("bob", "Maps-search"), Err(PortalError::UnknownUser(_))));

    let q = Portal::new(bare_config()).unwrap();
    q.provision("solo", Some(vec![FunctionDescriptor::new("Maps", "search")]), t0()).unwrap();
    assert!(matches!(q.remove_function("solo", "Maps-search"), Err(PortalError::LastFunction)));
}

#[test]
fn chat_only_collection_uses_contacts() {
    let p = Portal::new(bare_config())
        .unwrap()
        .with_llm(Arc::new(ScriptedStubLlm::new(7, 1.0).with_rule("dinner", "WeChat-Sam")));
    let contacts = vec![FunctionDescriptor::chat("WeChat", "Sam"), FunctionDescriptor::chat("WeChat", "Mom")];
    p.provision("cat", Some(contacts), t0()).unwrap();
    let l = p
        .predict(PredictRequest {
            user_id: "cat".into(),
            text: "dinner at 7?".into(),
            context: ctx(0, &[]),
            request_id: None,
        })
        .unwrap();
    assert!(l.chat);
    assert_eq!(l.provenance, Provenance::Llm);
    assert_eq!(l.entries[0].function_id, "WeChat-Sam");
}

#[test]
fn prompts_hold_at_most_m_examples() {
    let audited = Arc::new(AuditedLlm::new(Arc::new(ScriptedStubLlm::new(8, 0.65))));
    let mut cfg = Config::default();
    cfg.routing.few_shot_m = 7;
    let p = Portal::new(cfg).unwrap().with_llm(audited.clone());
    p.provision("ann", Some(collection()), t0()).unwrap();
    let l = ask(&p, "qqq zzz", 0);
    assert!(l.llm_called);
    let prompt = audited.entries().last().unwrap().prompt.clone();
    assert_eq!(prompt.lines().filter(|x| x.starts_with("Output: ")).count(), 7);
}

#[test]
fn request_ids_and_validation() {
    let p = portal_with(bare_config(), ScriptedStubLlm::new(9, 1.0));
    let req = |text: &str, id: Option<&str>| PredictRequest {
        user_id: "ann".into(),
        text: text.into(),
        context: ctx(0, &[]),
        request_id: id.map(str::to_string),
    };
    assert!(matches!(p.predict(req("   ", None)), Err(PortalError::InvalidRequest(_))));
    assert_eq!(p.predict(req("hello", Some("r1"))).unwrap().request_id, "r1");
    assert!(matches!(p.predict(req("hello", Some("r1"))), Err(PortalError::InvalidRequest(_))));

    let mut cfg = bare_config();
    cfg.portal.auto_provision = false;
    let strict = Portal::new(cfg).unwrap();
    let err = strict.predict(req("hello", None)).unwrap_err();
    assert!(matches!(err, PortalError::UnknownUser(_)));
    assert!(!strict.has_user("ann"));
}

fn fingerprint(l: &PredictionList) -> (String, Vec<String>, Provenance, u64, Vec<u64>) {
    (
        l.request_id.clone(),
        l.ranking.clone(),
        l.provenance,
        l.confidence.to_bits(),
        l.entries.iter().map(|e| e.score.to_bits()).collect(),
    )
}

#[test]
fn identical_inputs_give_identical_outputs() {
    let run = || {
        let p = Portal::new(Config::default())
            .unwrap()
            .with_llm(Arc::new(ScriptedStubLlm::new(10, 0.65)));
        p.provision("ann", Some(collection()), t0()).unwrap();
        let mut out = Vec::new();
        for (i, text) in ["sushi", "pay rent", "sushi", "translate hello", "sushi"].iter().enumerate() {
            let l = ask(&p, text, i as i64);
            pick(&p, &l, "Yelp-search");
            out.push(fingerprint(&l));
        }
        p.retrain("ann").unwrap();
        out.push(fingerprint(&ask(&p, "sushi", 10)));
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn saved_state_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = Config::default();
    cfg.portal.data_dir = Some(dir.path().to_path_buf());
    let p = portal_with(cfg.clone(), ScriptedStubLlm::new(11, 0.65));
    for i in 0..6 {
        let l = ask(&p, &format!("song number {i}"), i);
        pick(&p, &l, "Spotify-search");
    }
    p.retrain("ann").unwrap();
    p.save_all().unwrap();

    let q = Portal::new(cfg).unwrap().with_llm(Arc::new(ScriptedStubLlm::new(11, 0.65)));
    assert_eq!(q.load_saved().unwrap(), vec!["ann".to_string()]);
    assert_eq!(q.record_count("ann"), p.record_count("ann"));
    assert_eq!(q.profile("ann"), p.profile("ann"));
    assert_eq!(q.params("ann"), p.params("ann"));
    for i in 0..5 {
        let text = format!("play track {i}");
        assert_eq!(fingerprint(&ask(&p, &text, 20 + i)), fingerprint(&ask(&q, &text, 20 + i)));
    }
}

#[test]
fn telemetry_traces_each_request() {
    let p = portal_with(bare_config(), ScriptedStubLlm::new(12, 1.0));
    let l = ask(&p, "weather tomorrow", 0);
    let stages: Vec<String> = p
        .telemetry()
        .for_request(&l.request_id)
        .into_iter()
        .map(|e| e.stage)
        .collect();
    for s in ["encode", "gate", "retrieve", "llm", "predict"] {
        assert!(stages.iter().any(|x| x == s), "missing {s} in {stages:?}");
    }
}
