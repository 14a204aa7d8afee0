use chrono::{DateTime, Utc};
use proptest::prelude::*;
use textroute::config::Config;
use textroute::eval::{
    metrics, read_trials_jsonl, replay, run_ablation, synth_stream, write_outputs, BaselineKind, BaselineSystem,
    EvalError, Predictor, Served, StreamItem, StubSettings, SynthConfig, SynthUser, Trial, Variant,
};
use textroute::portal::Provenance;

fn short() -> SynthConfig {
    SynthConfig {
        days: 3,
        queries_per_day: 20,
        ..SynthConfig::default()
    }
}

#[test]
fn route_fractions_follow_the_variant() {
    let stream = synth_stream(&short()).unwrap();
    let outs = run_ablation(
        &Config::default(),
        &stream,
        &StubSettings::default(),
        &[Variant::BertOnly, Variant::LlmOnly],
    )
    .unwrap();
    let get = |n: &str| outs.iter().find(|o| o.system == n).unwrap();
    assert_eq!(outs[0].system, "full");
    assert_eq!(get("bert-only").report.local_fraction, 1.0);
    assert!(get("bert-only").trials.iter().all(|t| !t.llm_called));
    assert_eq!(get("llm-only").report.local_fraction, 0.0);
    assert!(get("llm-only").trials.iter().all(|t| t.llm_called));
}

#[test]
fn perfect_llm_is_an_upper_bound() {
    let cfg = SynthConfig {
        chat_functions: 0,
        ..short()
    };
    let stream = synth_stream(&cfg).unwrap();
    let stub = StubSettings {
        accuracy: 1.0,
        recall: false,
        ..StubSettings::default()
    };
    let mut sys = Variant::LlmOnly.system(&Config::default(), &stub, stream.pool_records()).unwrap();
    let out = replay(&stream, sys.as_mut()).unwrap();
    assert_eq!(out.report.failures, 0);
    assert_eq!(out.report.hit1, 1.0);
    assert!(out.report.per_day.iter().all(|d| d.hit1 == 1.0));
}

#[test]
fn mfu_on_a_uniform_stream_scores_one_in_n() {
    let cfg = SynthConfig {
        seed: 5,
        zipf_exponent: 0.0,
        chat_functions: 0,
        ..SynthConfig::default()
    };
    let stream = synth_stream(&cfg).unwrap();
    let mut sys = BaselineSystem::new(BaselineKind::Mfu, 600.0);
    let out = replay(&stream, &mut sys).unwrap();
    let n = out.trials.len() as f64;
    let p = 1.0 / cfg.functions_per_user as f64;
    let sigma = (p * (1.0 - p) / n).sqrt();
    assert!((out.report.hit1 - p).abs() <= 3.0 * sigma, "hit1 {} vs {p} +- {}", out.report.hit1, 3.0 * sigma);
}

#[test]
fn reference_curve_regression() {
    let stream = synth_stream(&SynthConfig::default()).unwrap();
    let out = run_ablation(&Config::default(), &stream, &StubSettings::default(), &[]).unwrap();
    let full = &out[0];
    let local: Vec<f64> = full.report.per_day.iter().map(|d| d.local_fraction).collect();
    for w in local[2..].windows(2) {
        assert!(w[1] >= w[0], "local fraction fell after day 2: {local:?}");
    }
    let frozen = [0.025, 0.208, 0.375, 0.383, 0.458, 0.575, 0.608];
    for (got, want) in local.iter().zip(frozen) {
        assert!((got - want).abs() < 5e-4, "{local:?}");
    }
    assert!((full.report.hit1 - 0.844).abs() < 5e-4, "hit1 {}", full.report.hit1);
}

#[test]
fn baselines_are_repeatable() {
    let stream = synth_stream(&short()).unwrap();
    for kind in [BaselineKind::Mfu, BaselineKind::Mru, BaselineKind::Bayes] {
        let a = replay(&stream, &mut BaselineSystem::new(kind, 600.0)).unwrap();
        let b = replay(&stream, &mut BaselineSystem::new(kind, 600.0)).unwrap();
        assert_eq!(serde_json::to_string(&a.trials).unwrap(), serde_json::to_string(&b.trials).unwrap());
        assert_eq!((a.report.hit1, a.report.hit5, a.report.mrr), (b.report.hit1, b.report.hit5, b.report.mrr));
        assert!(a.trials.iter().all(|t| t.provenance.is_none() && !t.llm_called));
    }
}

struct Flaky {
    calls: usize,
}

impl Predictor for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }

    fn provision(&mut self, _: &SynthUser, _: DateTime<Utc>) -> Result<(), String> {
        Ok(())
    }

    fn predict(&mut self, item: &StreamItem) -> Result<Served, String> {
        self.calls += 1;
        if self.calls % 3 == 0 {
            return Err("backend down".into());
        }
        Ok(Served {
            request_id: None,
            ranking: vec![item.truth.clone()],
            provenance: Some(Provenance::Local),
            llm_called: false,
            llm_model_ms: 0.0,
            latency_ms: 0.0,
            model_ms: 0.0,
        })
    }

    fn feedback(&mut self, _: &StreamItem, _: &Served) -> Result<(), String> {
        Err("feedback rejected".into())
    }

    fn end_of_day(&mut self, day: usize) -> Result<(), String> {
        Err(format!("retrain {day} failed"))
    }
}

#[test]
fn failures_are_recorded_not_fatal() {
    let stream = synth_stream(&short()).unwrap();
    let out = replay(&stream, &mut Flaky { calls: 0 }).unwrap();
    let n = stream.items.len();
    assert_eq!(out.trials.len(), n);
    assert_eq!(out.report.failures, n / 3);
    let expect = (n - n / 3) as f64 / n as f64;
    assert!((out.report.hit1 - expect).abs() < 1e-12);
    assert!(out.warnings.iter().any(|w| w.contains("retrain 0 failed")));
    assert!(out.warnings.iter().any(|w| w.contains("feedback rejected")));
}

#[test]
fn outputs_round_trip_through_files() {
    let stream = synth_stream(&short()).unwrap();
    let outs = run_ablation(&Config::default(), &stream, &StubSettings::default(), &[Variant::Mfu]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), &outs).unwrap();
    for name in ["report.json", "per_day.csv", "trials-full.jsonl", "timing-full.csv", "trials-mfu.jsonl"] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
    let back = read_trials_jsonl(&dir.path().join("trials-full.jsonl")).unwrap();
    let rep = metrics(&back).unwrap();
    assert_eq!(rep.hit1, outs[0].report.hit1);
    assert_eq!(rep.mrr, outs[0].report.mrr);
    assert_eq!(rep.local_fraction, outs[0].report.local_fraction);
}

#[test]
fn variant_names_parse() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!(matches!("gpt".parse::<Variant>(), Err(EvalError::UnknownVariant(_))));
}

fn arb_trials() -> impl Strategy<Value = Vec<(usize, usize, bool)>> {
    prop::collection::vec((1usize..30, 0usize..30, any::<bool>()), 1..80)
}

proptest! {
    #[test]
    fn hit_rates_are_ordered(spec in arb_trials()) {
        let stream = synth_stream(&SynthConfig { days: 1, queries_per_day: 1, users: 1, ..SynthConfig::default() }).unwrap();
        let ctx = stream.items[0].context.clone();
        let trials: Vec<Trial> = spec
            .iter()
            .enumerate()
            .map(|(i, (n, r, failed))| {
                let ranking: Vec<String> = (0..*n).map(|j| format!("F{j}")).collect();
                Trial {
                    index: i,
                    user_id: "u".into(),
                    day: 0,
                    query: String::new(),
                    context: ctx.clone(),
                    truth: ranking[r % n].clone(),
                    ranking: if *failed { Vec::new() } else { ranking },
                    candidates: *n,
                    provenance: None,
                    llm_called: false,
                    llm_model_ms: 0.0,
                    error: failed.then(|| "x".to_string()),
                    latency_ms: 0.0,
                    model_ms: 0.0,
                }
            })
            .collect();
        let m = metrics(&trials).unwrap();
        prop_assert!(m.hit1 <= m.hit5 && m.hit5 <= 1.0);
        prop_assert!(m.mrr >= m.hit1 && m.mrr <= m.hit5 + (1.0 - m.hit5) / 6.0 + 1e-12);
    }
}
