//! End-to-end acceptance checks. Runs as a plain binary so that every check
//! prints its verdict even when it passes.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use chrono::{FixedOffset, TimeZone, Utc};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textroute::config::Config;
use textroute::encoder::{AppLaunch, ChatGateParams, ContextSnapshot, FeatureVector};
use textroute::eval::{
    metrics, replay, run_ablation, synth_stream, write_trials_jsonl, Predictor, PortalSystem, ReplayOutput,
    StubSettings, SynthConfig, Trial, Variant,
};
use textroute::integrator::{confidence, decide, integrate, route, Route};
use textroute::llm::{
    build_function_prompt, parse_ranking, render_ranking, AuditedLlm, LlmError, LlmRanking, ScriptedStubLlm,
};
use textroute::memory::{BootstrapPlan, FunctionDescriptor, LabelVector, Origin, UsageRecord};
use textroute::portal::{Portal, PredictRequest, PredictionList, Provenance};
use textroute::trainer::{
    fuse_label, gate_gradient, gate_loss, head_gradient, head_loss, GateDataset, HeadDataset, HeadParams,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn utc_ctx(secs: i64) -> ContextSnapshot {
    let now = Utc.timestamp_opt(1_709_541_000 + secs, 0).unwrap();
    ContextSnapshot::at(now.with_timezone(&FixedOffset::east_opt(0).unwrap()))
}

fn random_label(rng: &mut ChaCha8Rng, ids: &[String]) -> LabelVector {
    let mut m = BTreeMap::new();
    if rng.random_bool(0.5) {
        m.insert(ids[rng.random_range(0..ids.len())].clone(), 1.0);
    } else {
        let picks = rng.random_range(1..=ids.len().min(5));
        let mut chosen = ids.to_vec();
        chosen.shuffle(rng);
        let raw: Vec<f64> = (0..picks).map(|_| rng.random::<f64>() + 0.01).collect();
        let s: f64 = raw.iter().sum();
        for (id, w) in chosen.into_iter().zip(raw) {
            m.insert(id, w / s);
        }
    }
    LabelVector(m)
}

/// Direct weighted average over the full function list.
fn brute_force_integrate(neigh: &[(f64, LabelVector)], functions: &[String]) -> Vec<f64> {
    let total: f64 = neigh.iter().map(|(s, _)| s.clamp(0.0, 1.0)).sum();
    functions
        .iter()
        .map(|f| {
            neigh
                .iter()
                .map(|(s, y)| s.clamp(0.0, 1.0) * y.0.get(f).copied().unwrap_or(0.0))
                .sum::<f64>()
                / total
        })
        .collect()
}

fn c1_integrator() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let k = rng.random_range(1..=5);
        let functions: Vec<String> = (0..n).map(|i| format!("App{i}-search")).collect();
        let neigh: Vec<(f64, LabelVector)> = (0..k)
            .map(|_| (rng.random_range(0.01..=1.0), random_label(&mut rng, &functions)))
            .collect();
        let got = integrate(neigh.iter().map(|(s, y)| (*s, y))).map_err(|e| e.to_string())?;
        let want = brute_force_integrate(&neigh, &functions);
        for (f, w) in functions.iter().zip(want) {
            worst = worst.max((got.get(f) - w).abs());
        }
        check(got.0.keys().all(|key| functions.contains(key)), "unexpected key")?;
    }
    let secs = t.elapsed().as_secs_f64();
    check(worst < 1e-9, format!("max |delta| {worst:e}"))?;
    check(secs < 5.0, format!("took {secs:.2} s"))?;
    Ok(format!("1000 cases, max |delta| {worst:.1e}, {secs:.3} s"))
}

fn c2_confidence() -> Outcome {
    let c = confidence(&[1.0, 1.0, 1.0, 1.0, 0.5]).map_err(|e| e.to_string())?;
    check((c - 29.0 / 30.0).abs() < 1e-15, format!("confidence {c}"))?;
    check(format!("{c:.4}") == "0.9667", format!("confidence {c}"))?;
    check(decide(&[1.0, 1.0, 1.0, 1.0, 0.5], 5, 0.95).route == Route::Local, "0.9667 not local")?;
    let c = confidence(&[0.9; 5]).map_err(|e| e.to_string())?;
    check((c - 0.9).abs() < 1e-15, format!("confidence {c}"))?;
    check(decide(&[0.9; 5], 5, 0.95).route == Route::Llm, "0.9 not routed to the LLM")?;
    check(route(0.95, 0.95).route == Route::Llm, "boundary 0.95 not routed to the LLM")?;
    Ok("0.9667 -> local, 0.9 -> llm, 0.95 -> llm".into())
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn c3_gradients() -> Outcome {
    let t = Instant::now();
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let dim = rng.random_range(1..=20);
        let n = rng.random_range(2..=8);
        let m = rng.random_range(1..=12);
        let functions: Vec<String> = (0..n).map(|i| format!("F{i}-search")).collect();
        let features: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..dim)
                    .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(-1.0..1.0) })
                    .collect()
            })
            .collect();
        let targets: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let y = random_label(&mut rng, &functions);
                functions.iter().map(|f| y.get(f)).collect()
            })
            .collect();
        let head_data = HeadDataset::new(dim, &features, targets).map_err(|e| e.to_string())?;
        let mut p = HeadParams::zeros(&functions, dim);
        for row in &mut p.weights {
            row.iter_mut().for_each(|w| *w = rng.random_range(-0.5..0.5));
        }
        p.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        let g = head_gradient(&p, &head_data);
        for k in 0..n {
            for j in 0..=dim {
                let (mut plus, mut minus) = (p.clone(), p.clone());
                if j < dim {
                    plus.weights[k][j] += eps;
                    minus.weights[k][j] -= eps;
                } else {
                    plus.bias[k] += eps;
                    minus.bias[k] -= eps;
                }
                let num = (head_loss(&plus, &head_data) - head_loss(&minus, &head_data)) / (2.0 * eps);
                let ana = if j < dim { g.weights[k][j] } else { g.bias[k] };
                worst = worst.max(rel_err(ana, num));
            }
        }

        let labels: Vec<bool> = (0..m).map(|_| rng.random_bool(0.4)).collect();
        let gate_data = GateDataset::new(dim, &features, &labels).map_err(|e| e.to_string())?;
        let gp = ChatGateParams {
            weights: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: rng.random_range(-1.0..1.0),
        };
        let gg = gate_gradient(&gp, &gate_data);
        for j in 0..=dim {
            let (mut plus, mut minus) = (gp.clone(), gp.clone());
            if j < dim {
                plus.weights[j] += eps;
                minus.weights[j] -= eps;
            } else {
                plus.bias += eps;
                minus.bias -= eps;
            }
            let num = (gate_loss(&plus, &gate_data) - gate_loss(&minus, &gate_data)) / (2.0 * eps);
            let ana = if j < dim { gg.weights[j] } else { gg.bias };
            worst = worst.max(rel_err(ana, num));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(worst < 1e-4, format!("max relative error {worst:e}"))?;
    check(secs < 10.0, format!("took {secs:.2} s"))?;
    Ok(format!("50 instances, max relative error {worst:.1e}, {secs:.3} s"))
}

fn trial(index: usize, truth_rank: Option<usize>, failed: bool, n: usize, local: bool) -> Trial {
    let functions: Vec<String> = (0..n).map(|i| format!("F{i}-search")).collect();
    let truth = match truth_rank {
        Some(r) => functions[r - 1].clone(),
        None => functions[0].clone(),
    };
    Trial {
        index,
        user_id: "u".into(),
        day: index % 3,
        query: format!("q{index}"),
        context: utc_ctx(index as i64),
        truth,
        ranking: if failed { Vec::new() } else { functions },
        candidates: n,
        provenance: Some(if local { Provenance::Local } else { Provenance::Llm }),
        llm_called: !local,
        llm_model_ms: 0.0,
        error: failed.then(|| "stub failure".to_string()),
        latency_ms: 0.0,
        model_ms: 0.0,
    }
}

fn c4_metrics() -> Outcome {
    let fixture: Vec<Trial> = [1, 3, 7]
        .iter()
        .enumerate()
        .map(|(i, r)| trial(i, Some(*r), false, 10, true))
        .collect();
    let m = metrics(&fixture).map_err(|e| e.to_string())?;
    let mrr = (1.0 + 1.0 / 3.0 + 1.0 / 7.0) / 3.0;
    check((m.hit1 - 1.0 / 3.0).abs() < 1e-12, format!("hit1 {}", m.hit1))?;
    check((m.hit5 - 2.0 / 3.0).abs() < 1e-12, format!("hit5 {}", m.hit5))?;
    check((m.mrr - mrr).abs() < 1e-12, format!("mrr {}", m.mrr))?;
    check(format!("{:.4}", m.mrr) == "0.4921", format!("mrr {}", m.mrr))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for set in 0..100 {
        let len = rng.random_range(1..=60);
        let mut trials = Vec::with_capacity(len);
        let (mut h1, mut h5, mut rr, mut local) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..len {
            let n = rng.random_range(1..=25);
            let failed = rng.random_bool(0.1);
            let r = rng.random_range(1..=n);
            let is_local = rng.random_bool(0.5);
            trials.push(trial(i, Some(r), failed, n, is_local));
            if !failed {
                h1 += (r == 1) as u8 as f64;
                h5 += (r <= 5) as u8 as f64;
                rr += 1.0 / r as f64;
            }
            local += is_local as u8 as f64;
        }
        let m = metrics(&trials).map_err(|e| e.to_string())?;
        let l = len as f64;
        let ok = (m.hit1 - h1 / l).abs() < 1e-12
            && (m.hit5 - h5 / l).abs() < 1e-12
            && (m.mrr - rr / l).abs() < 1e-12
            && (m.local_fraction - local / l).abs() < 1e-12
            && m.trials == len;
        check(ok, format!("random set {set} disagrees"))?;
    }
    Ok(format!("fixture hit1 {:.4} hit5 {:.4} mrr {:.4}; 100 random sets agree", 1.0 / 3.0, 2.0 / 3.0, mrr))
}

fn reference_ablation() -> Result<(Vec<ReplayOutput>, f64), String> {
    let stream = synth_stream(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let t = Instant::now();
    let outputs = run_ablation(
        &Config::default(),
        &stream,
        &StubSettings::default(),
        &[Variant::BertOnly, Variant::Mfu, Variant::Mru, Variant::Bayes],
    )
    .map_err(|e| e.to_string())?;
    Ok((outputs, t.elapsed().as_secs_f64()))
}

fn c5_learning_curve(outputs: &[ReplayOutput], secs: f64) -> Outcome {
    let full = outputs.iter().find(|o| o.system == "full").ok_or("no full system")?;
    let days = &full.report.per_day;
    for d in days {
        println!(
            "    day {}: hit1 {:.3}  local {:.3}  model {:.1} ms",
            d.day, d.hit1, d.local_fraction, d.mean_model_ms
        );
    }
    let (first, last) = (days.first().ok_or("no days")?, days.last().ok_or("no days")?);
    let local_ms: Vec<f64> = full
        .trials
        .iter()
        .filter(|t| t.provenance == Some(Provenance::Local))
        .map(|t| t.model_ms)
        .collect();
    let local_mean = local_ms.iter().sum::<f64>() / local_ms.len().max(1) as f64;
    check(
        last.hit1 >= first.hit1 + 0.10,
        format!("(a) final hit1 {:.3} vs first {:.3}", last.hit1, first.hit1),
    )?;
    check(
        last.local_fraction >= 0.50 && last.local_fraction >= first.local_fraction,
        format!("(b) final local {:.3} vs first {:.3}", last.local_fraction, first.local_fraction),
    )?;
    check(
        last.mean_model_ms < first.mean_model_ms,
        format!("(c) final model {:.1} ms vs first {:.1} ms", last.mean_model_ms, first.mean_model_ms),
    )?;
    check(local_mean < 5.0, format!("local path {local_mean:.2} ms"))?;
    check(secs < 180.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "hit1 {:.3} -> {:.3}, local {:.3} -> {:.3}, model {:.1} -> {:.1} ms (local path {:.2} ms), {secs:.1} s",
        first.hit1,
        last.hit1,
        first.local_fraction,
        last.local_fraction,
        first.mean_model_ms,
        last.mean_model_ms,
        local_mean
    ))
}

fn c6_baselines(outputs: &[ReplayOutput]) -> Outcome {
    let hit1 = |name: &str| {
        outputs
            .iter()
            .find(|o| o.system == name)
            .map(|o| o.report.hit1)
            .ok_or(format!("no {name}"))
    };
    let full = hit1("full")?;
    let mut parts = vec![format!("full {full:.3}")];
    for b in ["mfu", "mru", "bayes"] {
        let h = hit1(b)?;
        parts.push(format!("{b} {h:.3}"));
        check(full >= h + 0.05, format!("full {full:.3} vs {b} {h:.3}"))?;
    }
    let bert = hit1("bert-only")?;
    parts.push(format!("bert-only {bert:.3}"));
    check(bert <= full, format!("bert-only {bert:.3} above full {full:.3}"))?;
    Ok(parts.join(", "))
}

fn adversarial_outputs() -> Vec<&'static str> {
    vec![
        "",
        "   \n\t\n",
        "I am not sure which option fits this request.",
        "1. Telegram-search\n2. Bing-search",
        "{\"ranking\": [null, 42]}",
        "1.\n2.\n3.\n4.\n5.",
        "Mapssearch Browsersearch",
        "\u{1F600}\u{1F680}\u{2603}",
        "Output:",
        "search search search record pay",
    ]
}

fn c7_prompt_and_parse() -> Outcome {
    let audited = Arc::new(AuditedLlm::new(Arc::new(ScriptedStubLlm::new(7, 0.65))));
    let portal = Portal::new(Config::default())
        .map_err(|e| e.to_string())?
        .with_llm(audited.clone());
    let now = Utc.timestamp_opt(1_709_541_000, 0).unwrap();
    portal.provision("alice", None, now).map_err(|e| e.to_string())?;
    let stored = portal.record_count("alice").unwrap_or(0);
    check(stored >= 20, format!("only {stored} stored records"))?;
    let mut ctx = utc_ctx(60);
    ctx.launches.push(AppLaunch {
        app: "Maps".into(),
        at: ctx.utc() - chrono::Duration::seconds(30),
    });
    let out = portal
        .predict(PredictRequest {
            user_id: "alice".into(),
            text: "zq vexillology lecture notes".into(),
            context: ctx,
            request_id: None,
        })
        .map_err(|e| e.to_string())?;
    check(out.llm_called, "query did not reach the LLM")?;
    let prompt = audited.entries().last().map(|e| e.prompt.clone()).ok_or("no prompt")?;
    let examples = prompt.split("[Query]").next().unwrap_or("");
    let blocks = examples.lines().filter(|l| l.starts_with("Output: ")).count();
    check(blocks == 20, format!("{blocks} few-shot blocks in the portal prompt"))?;

    let records: Vec<UsageRecord> = (0..30)
        .map(|i| UsageRecord {
            id: i,
            user_id: "bob".into(),
            query: format!("query number {i}"),
            feature: FeatureVector(vec![1.0]),
            context: utc_ctx(i as i64),
            label: LabelVector::one_hot("Maps-search"),
            chosen: "Maps-search".into(),
            chat: false,
            timestamp: utc_ctx(i as i64).utc(),
            origin: Origin::Live,
        })
        .collect();
    let refs: Vec<&UsageRecord> = records.iter().collect();
    let m = Config::default().routing.few_shot_m;
    let p = build_function_prompt("hello", &utc_ctx(99), &refs, &["Maps-search".into()], m, 600.0)
        .map_err(|e| e.to_string())?;
    check(p.few_shot.len() == 20, format!("{} few-shot blocks built", p.few_shot.len()))?;
    let rendered = p.render();
    check(
        rendered.matches("\nOutput: Maps-search").count() == 20,
        "rendered prompt does not hold 20 blocks",
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pool: Vec<String> = [
        "Browser-search", "Maps-search", "Google Maps-search", "Memo-record", "WeChat-Alice",
        "WeChat-Al", "Translate-translate", "Wallet-pay", "Yelp-search", "Yelp-review",
        "Calendar-record", "Amazon-search", "Twitter-share", "Venmo-pay", "IMDb-search",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..50 {
        let mut cands = pool.clone();
        cands.shuffle(&mut rng);
        cands.truncate(rng.random_range(5..=pool.len()));
        let n = rng.random_range(1..=5);
        let mut order = cands.clone();
        order.shuffle(&mut rng);
        let r = LlmRanking {
            ranked: order[..n].to_vec(),
        };
        let back = parse_ranking(&render_ranking(&r), &cands);
        check(back.as_ref() == Ok(&r), format!("round trip {i} gave {back:?}"))?;
    }
    let cands: Vec<String> = pool[..8].to_vec();
    for (i, raw) in adversarial_outputs().into_iter().enumerate() {
        let got = parse_ranking(raw, &cands);
        check(got == Err(LlmError::Unparseable), format!("adversarial {i} gave {got:?}"))?;
    }
    Ok(format!("{blocks} few-shot blocks from {stored} records; 50 round trips; 10 adversarial -> Unparseable"))
}

fn c8_fusion() -> Outcome {
    let known: Vec<String> = ["a", "b", "c", "d", "e", "z"].iter().map(|s| s.to_string()).collect();
    let r = LlmRanking {
        ranked: ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect(),
    };
    let inside = fuse_label("b", &known, Some(&r)).map_err(|e| e.to_string())?;
    let want_inside = [("b", 0.8), ("a", 0.07), ("c", 0.06), ("d", 0.04), ("e", 0.03)];
    let outside = fuse_label("z", &known, Some(&r)).map_err(|e| e.to_string())?;
    let want_outside = [("z", 0.8), ("a", 0.07), ("b", 0.06), ("c", 0.04), ("d", 0.03)];
    for (label, want) in [(&inside, &want_inside), (&outside, &want_outside)] {
        check(label.len() == 5, format!("label {label:?}"))?;
        for (id, w) in want {
            check(label.get(id) == *w, format!("{id} has {} not {w}", label.get(id)))?;
        }
        check(label.total() == 1.0, format!("sum {}", label.total()))?;
    }
    Ok("in-top-5 and not-in-top-5 match [0.8, 0.07, 0.06, 0.04, 0.03], sums 1".into())
}

fn c9_bootstrap() -> Outcome {
    let mut fns = Vec::new();
    for i in 0..8 {
        fns.push(FunctionDescriptor::new(&format!("S{i}"), "search"));
    }
    for i in 0..3 {
        fns.push(FunctionDescriptor::new(&format!("R{i}"), "record"));
    }
    fns.push(FunctionDescriptor::new("T0", "translate"));
    let plan = BootstrapPlan::new(&fns, &[], 10).map_err(|e| e.to_string())?;
    let got = (plan.per_action["search"], plan.per_action["record"], plan.per_action["translate"]);
    check(got == (80, 30, 10), format!("quotas {got:?}"))?;
    check(plan.total() == 120, format!("total {}", plan.total()))?;

    let actions = ["search", "record", "translate", "pay", "share", "review"];
    let strategy = (
        prop::collection::vec((0usize..actions.len(), 0usize..40), 1..30),
        prop::collection::vec(0usize..30, 0..200),
    );
    let mut runner = TestRunner::new(PropConfig {
        cases: 200,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&strategy, |(spec, picks)| {
            let fns: Vec<FunctionDescriptor> = spec
                .iter()
                .enumerate()
                .map(|(i, (a, _))| FunctionDescriptor::new(&format!("App{i}"), actions[*a]))
                .collect();
            let pool: Vec<UsageRecord> = picks
                .iter()
                .filter(|p| **p < fns.len())
                .enumerate()
                .map(|(i, p)| UsageRecord {
                    id: i as u64,
                    user_id: "pool".into(),
                    query: format!("pool {i}"),
                    feature: FeatureVector(Vec::new()),
                    context: utc_ctx(i as i64),
                    label: LabelVector::one_hot(&fns[*p].id),
                    chosen: fns[*p].id.clone(),
                    chat: false,
                    timestamp: utc_ctx(i as i64).utc(),
                    origin: Origin::Live,
                })
                .collect();
            let plan = BootstrapPlan::new(&fns, &pool, 10).unwrap();
            prop_assert_eq!(plan.total(), 10 * fns.len());
            for (action, q) in &plan.per_action {
                let members: Vec<&str> = fns.iter().filter(|f| &f.action == action).map(|f| f.id.as_str()).collect();
                prop_assert_eq!(*q, 10 * members.len());
                let split: usize = plan
                    .per_function
                    .iter()
                    .filter(|(id, _)| members.contains(&id.as_str()))
                    .map(|(_, n)| n)
                    .sum();
                prop_assert_eq!(split, *q);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("(8,3,1) -> (80,30,10); 200 random collections total 10 x functions".into())
}

fn comparable(p: &PredictionList) -> String {
    let entries: Vec<String> = p
        .entries
        .iter()
        .map(|e| format!("{}:{}:{:016x}", e.rank, e.function_id, e.score.to_bits()))
        .collect();
    format!(
        "{}|{:?}|{:016x}|{}|{}|{:?}|{}|{:?}",
        p.request_id,
        p.provenance,
        p.confidence.to_bits(),
        p.chat,
        p.llm_called,
        p.ranking,
        entries.join(","),
        p.llm_model_ms.map(f64::to_bits)
    )
}

fn c10_persistence() -> Outcome {
    let stream = synth_stream(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = Config::default();
    cfg.portal.data_dir = Some(dir.path().to_path_buf());
    let stub = StubSettings::default();
    let user = &stream.users[0];
    let mut first = PortalSystem::new("full", cfg.clone(), &stub, stream.pool_records()).map_err(|e| e.to_string())?;
    first.provision(user, stream.start())?;
    let mine: Vec<_> = stream.items.iter().filter(|i| i.user_id == user.user_id).collect();
    let (train, probes) = mine.split_at(mine.len() - 20);
    let mut day = 0;
    for item in train {
        if item.day > day {
            first.end_of_day(day)?;
            day = item.day;
        }
        let served = first.predict(item)?;
        first.feedback(item, &served)?;
    }
    first.portal().save_all().map_err(|e| e.to_string())?;

    let second = PortalSystem::new("full", cfg, &stub, stream.pool_records()).map_err(|e| e.to_string())?;
    let loaded = second.portal().load_saved().map_err(|e| e.to_string())?;
    check(loaded == vec![user.user_id.clone()], format!("loaded {loaded:?}"))?;
    let mut local = 0;
    for item in probes {
        let mut outs = Vec::new();
        for sys in [&first, &second] {
            sys.stub().script(&item.query, &item.truth);
            let p = sys
                .portal()
                .predict(PredictRequest {
                    user_id: item.user_id.clone(),
                    text: item.query.clone(),
                    context: item.context.clone(),
                    request_id: None,
                })
                .map_err(|e| e.to_string())?;
            outs.push(comparable(&p));
            local += (p.provenance == Provenance::Local) as usize;
        }
        check(outs[0] == outs[1], format!("probe {:?} differs after reload", item.query))?;
    }

    let run = |path: &std::path::Path| -> Result<Vec<u8>, String> {
        let mut sys = Variant::Full
            .system(&Config::default(), &stub, stream.pool_records())
            .map_err(|e| e.to_string())?;
        let out = replay(&stream, sys.as_mut()).map_err(|e| e.to_string())?;
        write_trials_jsonl(path, &out.trials).map_err(|e| e.to_string())?;
        std::fs::read(path).map_err(|e| e.to_string())
    };
    let a = run(&dir.path().join("a.jsonl"))?;
    let b = run(&dir.path().join("b.jsonl"))?;
    check(!a.is_empty() && a == b, "replay trial logs differ")?;
    Ok(format!(
        "20 probes identical after reload ({} local of 40 served); two replays give identical {} byte logs",
        local,
        a.len()
    ))
}

fn c11_calibration() -> Outcome {
    let cfg = SynthConfig {
        seed: 11,
        users: 10,
        days: 10,
        queries_per_day: 100,
        ..SynthConfig::default()
    };
    let stream = synth_stream(&cfg).map_err(|e| e.to_string())?;
    let items = &stream.items[..10_000.min(stream.items.len())];
    check(items.len() == 10_000, format!("only {} contexts", items.len()))?;
    let hits = items.iter().filter(|i| i.target_within(60.0)).count();
    let rate = hits as f64 / items.len() as f64;
    check((rate - 0.3362).abs() <= 0.02, format!("rate {rate:.4}"))?;
    Ok(format!("{hits} of 10000 contexts, rate {rate:.4}"))
}

fn main() {
    let start = Instant::now();
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail})"),
            Err(why) => {
                println!("criterion {n:>2} {name}: FAIL ({why})");
                failed.push(n);
            }
        }
    };
    report(1, "integrator oracle", c1_integrator());
    report(2, "confidence gate", c2_confidence());
    report(3, "gradient checks", c3_gradients());
    report(4, "metrics", c4_metrics());
    match reference_ablation() {
        Ok((outputs, secs)) => {
            report(5, "learning curve", c5_learning_curve(&outputs, secs));
            report(6, "baseline ordering", c6_baselines(&outputs));
        }
        Err(e) => {
            report(5, "learning curve", Err(e.clone()));
            report(6, "baseline ordering", Err(e));
        }
    }
    report(7, "prompt and parse", c7_prompt_and_parse());
    report(8, "label fusion", c8_fusion());
    report(9, "bootstrap quotas", c9_bootstrap());
    report(10, "persistence and determinism", c10_persistence());
    report(11, "stream calibration", c11_calibration());
    println!(
        "acceptance: {} of 11 passed in {:.1} s",
        11 - failed.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
