//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.
//!
//! Randomized criteria draw from `ChaCha8Rng` seeded with [`SEED`].
//! Set `TRACE_UPDATE_GOLDEN=1` to rewrite the golden prompt files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant as Clock;

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trace_core::align::{build_bundles, project_event_predictions, Timeline};
use trace_core::context::load_prior;
use trace_core::eval::{
    confusion_matrix, emd_histograms, interval_f1, time_accuracy, F1Scheme, LabelMap, LabeledTimeline,
};
use trace_core::inference::{run_pipeline, HomeInputs, PipelineConfig, PipelineOutput};
use trace_core::ingest::{
    parse_event_log, parse_ground_truth, parse_predictions, ParseOptions, PredictionRecord, PredictionSource,
    SensorMetadataSet,
};
use trace_core::labels::LabelSet;
use trace_core::reasoner::{
    find_residual_placeholders, render_crossref_prompt, render_refine_prompt, CrossrefInput, MinutePrediction,
    Reasoner, RefineInput, RuleBackend,
};
use trace_core::summarize::{dedup_keep_last, summarize_series, DEFAULT_OUT_OF_HOME_HORIZON, OUT_OF_HOME};
use trace_core::time::{parse_instant, Instant, Span};
use trace_core::timeline::{SegmentStore, VersionedSegment};

const SEED: u64 = 20_240_101;
/// Absolute tolerance for EMD against brute-force transport.
const EMD_TOL: f64 = 1e-9;
const NOISE_RATE: f64 = 0.05;

struct Outcome {
    ok: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome {
        ok: true,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        ok: false,
        detail: detail.into(),
    }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn t0() -> Instant {
    parse_instant("2024-01-01T00:00:00").unwrap()
}

fn minute(m: i64) -> Instant {
    t0() + Duration::minutes(m)
}

fn timed(budget_secs: f64, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Clock::now();
    let mut out = f();
    let secs = start.elapsed().as_secs_f64();
    if out.ok && secs >= budget_secs {
        out = fail(format!("{}; took {secs:.2} s, budget {budget_secs} s", out.detail));
    } else {
        out.detail = format!("{}; {secs:.2} s of {budget_secs} s", out.detail);
    }
    out
}

// ---- 1. metrics vs brute-force oracles -------------------------------------

fn random_timeline(rng: &mut ChaCha8Rng, len: usize, labels: &[String], unlabeled: f64) -> LabeledTimeline {
    let mut out = Vec::with_capacity(len);
    let mut cur = None;
    for _ in 0..len {
        if cur.is_none() || rng.random_bool(0.25) {
            cur = if rng.random_bool(unlabeled) {
                None
            } else {
                Some(labels[rng.random_range(0..labels.len())].clone())
            };
        }
        out.push(cur.clone());
    }
    LabeledTimeline {
        origin: t0(),
        unit: Duration::minutes(1),
        labels: out,
    }
}

fn permutation_min_cost(a: &[usize], b: &[usize]) -> usize {
    fn go(i: usize, a: &[usize], b: &[usize], used: &mut Vec<bool>, acc: usize, best: &mut usize) {
        if i == a.len() {
            *best = (*best).min(acc);
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, a, b, used, acc + a[i].abs_diff(b[j]), best);
                used[j] = false;
            }
        }
    }
    let mut best = usize::MAX;
    go(0, a, b, &mut vec![false; b.len()], 0, &mut best);
    best
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for case in 0..200 {
        let n_labels = rng.random_range(1..=6);
        let labels: Vec<String> = (0..n_labels).map(|i| format!("L{i}")).collect();
        let len = rng.random_range(1..=200);
        let gt = random_timeline(&mut rng, len, &labels, 0.1);
        let pred = random_timeline(&mut rng, len, &labels, 0.05);

        let pairs: Vec<(Option<&str>, &str)> = pred
            .labels
            .iter()
            .zip(&gt.labels)
            .filter_map(|(p, g)| g.as_deref().map(|g| (p.as_deref(), g)))
            .collect();
        let acc = time_accuracy(&pred, &gt);
        if pairs.is_empty() {
            if acc.is_ok() {
                return fail(format!("case {case}: accuracy on unlabeled ground truth should fail"));
            }
            continue;
        }
        let correct = pairs.iter().filter(|(p, g)| *p == Some(*g)).count();
        if acc.unwrap() != correct as f64 / pairs.len() as f64 {
            return fail(format!("case {case}: accuracy differs"));
        }

        let classes: BTreeSet<&str> = pairs.iter().flat_map(|(p, g)| p.iter().copied().chain([*g])).collect();
        let report = interval_f1(&pred, &gt, F1Scheme::Macro, None).unwrap();
        if report.classes.len() != classes.len() {
            return fail(format!("case {case}: class set differs"));
        }
        let mut f1_sum = 0.0;
        for (c, got) in classes.iter().zip(&report.classes) {
            let tp = pairs.iter().filter(|(p, g)| *p == Some(*c) && g == c).count();
            let fp = pairs.iter().filter(|(p, g)| *p == Some(*c) && g != c).count();
            let fneg = pairs.iter().filter(|(p, g)| *p != Some(*c) && g == c).count();
            let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let (prec, rec) = (div(tp, tp + fp), div(tp, tp + fneg));
            let f1 = if prec + rec > 0.0 {
                2.0 * prec * rec / (prec + rec)
            } else {
                0.0
            };
            f1_sum += f1;
            if got.label != *c || got.precision != prec || got.recall != rec || got.f1 != f1 || got.support != tp + fneg
            {
                return fail(format!("case {case}: class {c} differs"));
            }
        }
        if report.score != f1_sum / classes.len() as f64 {
            return fail(format!("case {case}: macro F1 differs"));
        }

        let cm = confusion_matrix(&pred, &gt, &[]).unwrap();
        let order: Vec<&str> = classes.iter().copied().collect();
        if cm.labels != order {
            return fail(format!("case {case}: confusion labels differ"));
        }
        for (r, g) in order.iter().enumerate() {
            for (c, p) in order.iter().enumerate() {
                let n = pairs.iter().filter(|(pp, gg)| gg == g && *pp == Some(*p)).count() as u64;
                if cm.counts[r][c] != n {
                    return fail(format!("case {case}: confusion cell ({g}, {p}) differs"));
                }
            }
        }

        let buckets = rng.random_range(1..=5);
        let mass = rng.random_range(1..=7);
        let hist = |rng: &mut ChaCha8Rng| {
            let mut h = vec![0usize; buckets];
            for _ in 0..mass {
                h[rng.random_range(0..buckets)] += 1;
            }
            h
        };
        let (hp, hq) = (hist(&mut rng), hist(&mut rng));
        let expand = |h: &[usize]| {
            h.iter()
                .enumerate()
                .flat_map(|(i, &k)| std::iter::repeat_n(i, k))
                .collect::<Vec<_>>()
        };
        let brute = permutation_min_cost(&expand(&hp), &expand(&hq)) as f64 / mass as f64;
        let as_f = |h: &[usize]| h.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let emd = emd_histograms(&as_f(&hp), &as_f(&hq)).unwrap();
        if (emd - brute).abs() > EMD_TOL {
            return fail(format!("case {case}: EMD {emd} vs transport {brute}"));
        }
    }
    pass("200 timelines: accuracy, per-class F1 and confusion exact; EMD within 1e-9")
}

// ---- 2. versioned store vs per-minute oracle --------------------------------

fn criterion_2() -> Outcome {
    const SPAN: i64 = 120;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let labels = ["A", "B", "C"];
    let mut conflicts = 0;
    for case in 0..500 {
        let mut store = SegmentStore::new("h");
        let mut cells: Vec<Option<(u32, &str)>> = vec![None; SPAN as usize];
        let mut remaining = rng.random_range(1..=50);
        while remaining > 0 {
            let k = rng.random_range(1..=remaining.min(5));
            remaining -= k;
            let mut cuts: BTreeSet<i64> = BTreeSet::new();
            while cuts.len() < 2 * k {
                cuts.insert(rng.random_range(0..=SPAN));
            }
            let cuts: Vec<i64> = cuts.into_iter().collect();
            let batch: Vec<VersionedSegment> = cuts
                .chunks(2)
                .map(|c| VersionedSegment {
                    start: minute(c[0]),
                    end: minute(c[1]),
                    label: labels[rng.random_range(0..3)].to_string(),
                    version: rng.random_range(0..=10),
                    home_id: "h".into(),
                })
                .collect();
            let conflict = batch.iter().any(|s| {
                let (a, b) = ((s.start - t0()).num_minutes(), (s.end - t0()).num_minutes());
                (a..b).any(|m| matches!(cells[m as usize], Some((v, l)) if v == s.version && l != s.label))
            });
            let result = store.insert(&batch);
            if conflict {
                conflicts += 1;
                if result.is_ok() {
                    return fail(format!("case {case}: conflicting insert accepted"));
                }
                continue;
            }
            if let Err(e) = result {
                return fail(format!("case {case}: insert failed: {e}"));
            }
            for s in &batch {
                let (a, b) = ((s.start - t0()).num_minutes(), (s.end - t0()).num_minutes());
                let label = labels.iter().find(|l| **l == s.label).unwrap();
                for m in a..b {
                    let cell = &mut cells[m as usize];
                    if cell.is_none_or(|(v, _)| s.version > v) {
                        *cell = Some((s.version, label));
                    }
                }
            }
        }
        let view = store.materialize(&Span::new(minute(0), minute(SPAN)));
        let mut got: Vec<Option<&str>> = vec![None; SPAN as usize];
        for w in view.windows(2) {
            if w[0].label == w[1].label && w[0].end == w[1].start {
                return fail(format!("case {case}: materialize left adjacent equal labels"));
            }
        }
        for iv in &view {
            let (a, b) = ((iv.start - t0()).num_minutes(), (iv.end - t0()).num_minutes());
            for m in a..b {
                got[m as usize] = iv.label.as_deref();
            }
        }
        let expect: Vec<Option<&str>> = cells.iter().map(|c| c.map(|(_, l)| l)).collect();
        if got != expect {
            return fail(format!("case {case}: materialized labels differ from oracle"));
        }
        let mut versions: Vec<Option<u32>> = vec![None; SPAN as usize];
        for s in store.segments() {
            for m in (s.start - t0()).num_minutes()..(s.end - t0()).num_minutes() {
                versions[m as usize] = Some(s.version);
            }
        }
        if versions != cells.iter().map(|c| c.map(|(v, _)| v)).collect::<Vec<_>>() {
            return fail(format!("case {case}: stored versions differ from oracle"));
        }
    }
    pass(format!(
        "500 insert sequences match; {conflicts} conflicting batches rejected atomically"
    ))
}

// ---- 3. summarization rules ---------------------------------------------------

const SUMMARY_META: &str = r#"
[[sensor]]
sensor_id = "M001"
kind = "motion"
room = "kitchen"

[[sensor]]
sensor_id = "M002"
kind = "motion"
room = "bedroom"

[[sensor]]
sensor_id = "M003"
kind = "motion"
room = "living room"

[[sensor]]
sensor_id = "D001"
kind = "contact"
room = "foyer"
object = "front door"
is_entrance = true

[[sensor]]
sensor_id = "T001"
kind = "environmental"
room = "kitchen"
variable = "temperature"
"#;

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let meta = SensorMetadataSet::from_toml_str(SUMMARY_META).unwrap();
    let rooms = [("M001", "kitchen"), ("M002", "bedroom"), ("M003", "living room")];
    let (mut carried, mut away) = (0usize, 0usize);

    for case in 0..300 {
        let raw: Vec<String> = (0..rng.random_range(0..12))
            .map(|_| format!("r{}", rng.random_range(0..5)))
            .collect();
        let oracle: Vec<String> = {
            let mut seen = BTreeSet::new();
            let mut out: Vec<String> = raw.iter().rev().filter(|r| seen.insert(r.as_str())).cloned().collect();
            out.reverse();
            out
        };
        if dedup_keep_last(&raw) != oracle {
            return fail(format!("case {case}: dedup_keep_last differs"));
        }

        // (second offset, sensor, value); sparse enough to leave blank minutes
        let mut events: Vec<(i64, &str, String)> = Vec::new();
        let mut s = rng.random_range(0..30);
        while s < 60 * 60 {
            let roll = rng.random_range(0..10);
            let (sensor, value) = match roll {
                0..=4 => (rooms[rng.random_range(0..3)].0, "ON".to_string()),
                5 => ("D001", "OPEN".to_string()),
                6 => ("D001", "CLOSE".to_string()),
                _ => ("T001", format!("{:.1}", 18.0 + rng.random_range(0..80) as f64 / 10.0)),
            };
            events.push((s, sensor, value));
            s += rng.random_range(1..400);
        }
        let text: String = events
            .iter()
            .map(|(s, id, v)| {
                format!(
                    "{} {id} {v}\n",
                    (t0() + Duration::seconds(*s)).format("%Y-%m-%d %H:%M:%S")
                )
            })
            .collect();
        let parsed = parse_event_log(BufReader::new(text.as_bytes()), &meta, ParseOptions::default()).unwrap();
        let windows: Vec<Span> = (0..60).map(|m| Span::new(minute(m), minute(m + 1))).collect();
        let summaries = summarize_series(&parsed.events, &meta, &windows, DEFAULT_OUT_OF_HOME_HORIZON);

        let activations: Vec<&(i64, &str, String)> = events
            .iter()
            .filter(|(_, id, v)| v == "ON" || (*id == "D001" && v == "OPEN"))
            .collect();
        let mut away_since_motion = false;
        let mut last_room: Option<&str> = None;
        for (m, summary) in summaries.iter().enumerate() {
            let end = (m as i64 + 1) * 60;
            let start = m as i64 * 60;
            // out of home: last activation by window end is the entrance and
            // nothing else is triggered for three minutes afterwards
            let last = activations.iter().rev().find(|(s, _, _)| *s < end);
            let expect_away = match last {
                Some((s, id, _)) if *id == "D001" => activations
                    .iter()
                    .find(|(t, _, _)| t > s)
                    .is_none_or(|(t, _, _)| t - s >= 180),
                _ => false,
            };
            if summary.out_of_home != expect_away {
                return fail(format!("case {case}: out-of-home flag differs at minute {m}"));
            }
            if expect_away {
                away += 1;
                away_since_motion = true;
                if summary.locations != [OUT_OF_HOME] {
                    return fail(format!("case {case}: away window at minute {m} keeps a room"));
                }
            }
            let motion_here: Vec<&str> = events
                .iter()
                .filter(|(s, id, v)| *s >= start && *s < end && v == "ON" && id.starts_with('M'))
                .map(|(_, id, _)| rooms.iter().find(|r| r.0 == *id).unwrap().1)
                .collect();
            if let Some(r) = motion_here.last() {
                last_room = Some(r);
                away_since_motion = expect_away;
            } else if !expect_away && !away_since_motion && last_room.is_some() {
                carried += 1;
                if summary.current_location() != last_room || !summary.carried_location {
                    return fail(format!(
                        "case {case}: minute {m} does not retain the most recent location"
                    ));
                }
            }
            for (var, st) in &summary.environment {
                if !(st.min <= st.mean && st.mean <= st.max) {
                    return fail(format!("case {case}: {var} violates min <= mean <= max at minute {m}"));
                }
            }
        }
    }
    pass(format!(
        "300 streams: dedup, {carried} carried windows, {away} out-of-home windows, env bounds"
    ))
}

// ---- 4. majority-overlap projection ---------------------------------------------

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut ties = 0usize;
    for case in 0..500 {
        let len = rng.random_range(1..=30);
        let timeline = Timeline::new(t0(), Duration::minutes(1), len).unwrap();
        // a 30 s grid in half the layouts makes equal overlaps common
        let grid = if case % 2 == 0 { 30 } else { 1 };
        let records: Vec<PredictionRecord> = (0..rng.random_range(0..12))
            .map(|_| {
                let a = rng.random_range(0..(len as i64 * 60) / grid) * grid;
                let d = rng.random_range(1..=240 / grid) * grid;
                PredictionRecord {
                    source: PredictionSource::Env,
                    window_start: t0() + Duration::seconds(a),
                    window_end: t0() + Duration::seconds(a + d),
                    label: ["A", "B", "C"][rng.random_range(0..3)].to_string(),
                }
            })
            .collect();
        let got = project_event_predictions(&records, &timeline);
        let secs: Vec<(i64, i64, &str)> = records
            .iter()
            .map(|r| {
                (
                    (r.window_start - t0()).num_seconds(),
                    (r.window_end - t0()).num_seconds(),
                    r.label.as_str(),
                )
            })
            .collect();
        for (i, g) in got.iter().enumerate() {
            // per label: covered seconds summed over windows, earliest start
            let mut per: BTreeMap<&str, (i64, i64)> = BTreeMap::new();
            for &(a, b, label) in &secs {
                let covered = (0..60)
                    .map(|s| i as i64 * 60 + s)
                    .filter(|t| (a..b).contains(t))
                    .count() as i64;
                if covered > 0 {
                    let e = per.entry(label).or_insert((0, a));
                    e.0 += covered;
                    e.1 = e.1.min(a);
                }
            }
            let best = per.values().map(|v| v.0).max();
            let top: Vec<(&str, i64)> = per
                .iter()
                .filter(|(_, v)| Some(v.0) == best)
                .map(|(l, v)| (*l, v.1))
                .collect();
            if top.len() > 1 {
                ties += 1;
            }
            let expect = top.iter().min_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0))).map(|x| x.0);
            if g.as_deref() != expect {
                return fail(format!("case {case}: interval {i} got {g:?}, oracle {expect:?}"));
            }
        }
    }
    if ties == 0 {
        return fail("no tie cases generated");
    }
    pass(format!(
        "500 layouts agree, {ties} tied intervals resolved by the documented order"
    ))
}

// ---- 5-8. fixture pipeline ------------------------------------------------------

fn fixture_labels() -> LabelSet {
    LabelSet::new(["Sleep", "Cook", "Relax", "Other"])
}

fn day_inputs(events_text: Option<&str>) -> HomeInputs {
    let dir = fixture("day");
    let meta = SensorMetadataSet::from_toml_str(&fs::read_to_string(dir.join("metadata.toml")).unwrap()).unwrap();
    let text = match events_text {
        Some(t) => t.to_string(),
        None => fs::read_to_string(dir.join("events.txt")).unwrap(),
    };
    let events = parse_event_log(BufReader::new(text.as_bytes()), &meta, ParseOptions::default()).unwrap();
    assert!(events.issues.is_empty(), "fixture events parse cleanly");
    let env = parse_predictions(
        fs::File::open(dir.join("env_predictions.csv")).unwrap(),
        PredictionSource::Env,
    )
    .unwrap();
    let (prior, _) = load_prior(&fs::read_to_string(dir.join("prior.toml")).unwrap()).unwrap();
    HomeInputs {
        events: events.events,
        metadata: meta,
        env_predictions: Some(env),
        wear_predictions: None,
        prior,
        span: None,
    }
}

fn run_day(inputs: &HomeInputs) -> PipelineOutput {
    let config = PipelineConfig::new("day", fixture_labels());
    let reasoner = Reasoner::new(Arc::new(RuleBackend::default()));
    run_pipeline(inputs, &config, &reasoner).unwrap()
}

fn script() -> Vec<(i64, i64, String)> {
    let gt = parse_ground_truth(fs::File::open(fixture("day/ground_truth.csv")).unwrap()).unwrap();
    gt.iter()
        .map(|s| {
            (
                (s.start - t0()).num_minutes(),
                (s.end - t0()).num_minutes(),
                s.label.clone(),
            )
        })
        .collect()
}

fn per_minute(out: &PipelineOutput) -> Vec<Option<String>> {
    out.store.to_unit_labels(t0(), Duration::minutes(1), 1440)
}

fn criterion_5() -> Outcome {
    let inputs = day_inputs(None);
    let csv = |out: &PipelineOutput| {
        let mut buf = Vec::new();
        out.store.write_csv(&mut buf).unwrap();
        buf
    };
    let first = run_day(&inputs);
    let second = run_day(&inputs);
    let expected = fs::read(fixture("day/expected_timeline.csv")).unwrap();
    if csv(&first) != csv(&second) {
        return fail("two runs wrote different CSV bytes");
    }
    if csv(&first) != expected {
        return fail("timeline CSV differs from checked-in expected_timeline.csv");
    }
    let labels = per_minute(&first);
    for (a, b, l) in script() {
        if let Some(m) = (a..b).find(|m| labels[*m as usize].as_deref() != Some(l.as_str())) {
            return fail(format!("minute {m} is {:?}, scripted {l}", labels[m as usize]));
        }
    }
    pass(format!(
        "byte-identical across runs, {} bytes, every minute matches the script",
        expected.len()
    ))
}

fn short_runs(labels: &[Option<String>]) -> usize {
    let mut count = 0;
    let mut i = 0;
    while i < labels.len() {
        let j = (i..labels.len())
            .find(|&j| labels[j] != labels[i])
            .unwrap_or(labels.len());
        if j - i <= 2 {
            count += 1;
        }
        i = j;
    }
    count
}

fn event_lines(m: i64, label: &str) -> String {
    let at = |s: i64| {
        (minute(m) + Duration::seconds(s))
            .format("%Y-%m-%d %H:%M:%S")
            .to_string()
    };
    match label {
        "Sleep" => format!("{} M001 ON\n", at(5)),
        "Cook" => format!("{} M002 ON\n{} P001 ON\n", at(5), at(20)),
        _ => format!("{} M003 ON\n{} P002 ON\n", at(5), at(20)),
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let script = script();
    let mut text = String::new();
    let mut injected = 0;
    for m in 0..1440 {
        let truth = script
            .iter()
            .find(|(a, b, _)| (*a..*b).contains(&m))
            .unwrap()
            .2
            .as_str();
        let label = if rng.random_bool(NOISE_RATE) {
            injected += 1;
            // only interaction evidence overrides the environmental label
            if truth == "Cook" {
                "Relax"
            } else {
                "Cook"
            }
        } else {
            truth
        };
        text.push_str(&event_lines(m, label));
    }
    let out = run_day(&day_inputs(Some(&text)));
    let unrefined: Vec<Option<String>> = out.minute_predictions.iter().map(|p| Some(p.label.clone())).collect();
    let refined = per_minute(&out);
    let (before, after) = (short_runs(&unrefined), short_runs(&refined));
    let detail = format!("{injected} noisy minutes; segments <= 2 units: {before} unrefined, {after} refined");
    if after < before {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn golden(name: &str, rendered: &str) -> Result<(), String> {
    let path = fixture("golden").join(name);
    if std::env::var("TRACE_UPDATE_GOLDEN").is_ok_and(|v| v == "1") {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, rendered).unwrap();
    }
    let expected = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected != rendered {
        let at = expected
            .split_whitespace()
            .zip(rendered.split_whitespace())
            .position(|(a, b)| a != b)
            .unwrap_or(
                expected
                    .split_whitespace()
                    .count()
                    .min(rendered.split_whitespace().count()),
            );
        return Err(format!("{name} differs at token {at}"));
    }
    Ok(())
}

fn criterion_7() -> Outcome {
    let inputs = day_inputs(None);
    let timeline = Timeline::new(t0(), Duration::minutes(1), 1440).unwrap();
    let spans = timeline.spans();
    let summaries = summarize_series(&inputs.events, &inputs.metadata, &spans, DEFAULT_OUT_OF_HOME_HORIZON);
    let env = project_event_predictions(inputs.env_predictions.as_ref().unwrap(), &timeline);
    let bundles = build_bundles(Some(&summaries), Some(&env), None, &timeline).unwrap();
    let allowed = fixture_labels();
    let crossref = render_crossref_prompt(&CrossrefInput {
        home_id: "day",
        bundles: &bundles[415..425],
        prior: &inputs.prior,
        sources_text: &trace_core::reasoner::default_sources_text(true, false),
        allowed: &allowed,
        window_size: 10,
    })
    .unwrap();
    let predictions: Vec<MinutePrediction> = (415..425)
        .map(|m| MinutePrediction {
            timestamp: minute(m),
            label: if m < 420 { "Sleep" } else { "Cook" }.into(),
            alternative: "Relax".into(),
            reason: if m < 420 {
                "environmental prediction Sleep"
            } else {
                "interaction: turn on the stove"
            }
            .into(),
        })
        .collect();
    let history = vec![
        VersionedSegment {
            start: minute(395),
            end: minute(405),
            label: "Sleep".into(),
            version: 40,
            home_id: "day".into(),
        },
        VersionedSegment {
            start: minute(405),
            end: minute(415),
            label: "Sleep".into(),
            version: 41,
            home_id: "day".into(),
        },
    ];
    let refine = render_refine_prompt(&RefineInput {
        predictions: &predictions,
        history: &history,
        prior: &inputs.prior,
        allowed: &allowed,
    });

    let mut problems = Vec::new();
    for (name, text) in [("cross_reference.txt", &crossref), ("refinement.txt", &refine)] {
        if let Err(e) = golden(name, text) {
            problems.push(e);
        }
        let residual = find_residual_placeholders(text);
        if !residual.is_empty() {
            problems.push(format!("{name}: residual placeholders {residual:?}"));
        }
    }
    let crossref_headers = [
        "## INPUT",
        "### Sensor Sources",
        "### Sensor Data",
        "### User Context",
        "## INTERNAL REASONING PROCESS",
        "Only output \"Sleep\" if the wearable shows sleep",
        "Do not output \"Leave_Home\" if the location is home",
        "## OUTPUT FORMAT (STRICT JSON ONLY)",
        "\"minute_predictions\"",
    ];
    let refine_headers = [
        "### MINUTE-LEVEL PREDICTIONS",
        "### ACTIVITY_HISTORY",
        "### USER_CONTEXT",
        "### ALLOWED LABELS",
        "### STEP 1: Local Temporal Smoothing",
        "### STEP 2: Cross-Window Continuity",
        "### STEP 3: Context and Routine Alignment",
        "### STEP 4: Versioned Output",
        "## CRITICAL REQUIREMENTS",
        "## OUTPUT FORMAT (STRICT JSON ONLY)",
        "\"revised_activities\"",
    ];
    for h in crossref_headers {
        if !crossref.contains(h) {
            problems.push(format!("cross-reference prompt lacks {h:?}"));
        }
    }
    for h in refine_headers {
        if !refine.contains(h) {
            problems.push(format!("refinement prompt lacks {h:?}"));
        }
    }
    if problems.is_empty() {
        pass(format!(
            "both prompts match golden files; {} section markers present",
            crossref_headers.len() + refine_headers.len()
        ))
    } else {
        fail(problems.join("; "))
    }
}

/// Offline stand-in for the live recipe: the same accuracy comparison on
/// the fixture, with a third of the environmental windows relabeled.
fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
    let mut inputs = day_inputs(None);
    let env = inputs.env_predictions.as_mut().unwrap();
    for r in env.iter_mut() {
        if rng.random_bool(1.0 / 3.0) {
            r.label = if r.label == "Relax" { "Sleep" } else { "Relax" }.into();
        }
    }
    let out = run_day(&inputs);
    let timeline = Timeline::new(t0(), Duration::minutes(1), 1440).unwrap();
    let baseline = project_event_predictions(inputs.env_predictions.as_ref().unwrap(), &timeline);
    let script = script();
    let truth: Vec<&str> = (0..1440)
        .map(|m| {
            script
                .iter()
                .find(|(a, b, _)| (*a..*b).contains(&m))
                .unwrap()
                .2
                .as_str()
        })
        .collect();
    let score = |labels: &[Option<String>]| {
        labels
            .iter()
            .zip(&truth)
            .filter(|(p, t)| p.as_deref() == Some(**t))
            .count() as f64
            / 1440.0
    };
    let (trace_acc, base_acc) = (score(&per_minute(&out)), score(&baseline));
    let detail = format!(
        "offline analogue: accuracy {:.1}% vs projected env {:.1}%; live recipe: \
         cargo test -p trace-core --test live_recipe -- --ignored",
        trace_acc * 100.0,
        base_acc * 100.0
    );
    if trace_acc > base_acc {
        pass(detail)
    } else {
        fail(detail)
    }
}

// ---- 9. label maps ------------------------------------------------------------

fn criterion_9() -> Outcome {
    let table: [(&str, &[(&str, &str)]); 3] = [
        (
            "aruba",
            &[
                ("Relax", "Relax"),
                ("Meal Preparation", "Cook"),
                ("Enter Home", "Enter Home"),
                ("Leave Home", "Leave Home"),
                ("Sleeping", "Sleep"),
                ("Eating", "Eat"),
                ("Work", "Work"),
                ("Bed to Toilet", "Bed to Toilet"),
                ("Wash Dishes", "Work"),
                ("Housekeeping", "Work"),
                ("Resperate", "Other"),
                ("Other", "Other"),
            ],
        ),
        (
            "milan",
            &[
                ("Kitchen Activity", "Cook"),
                ("Guest Bathroom", "Use Bathroom"),
                ("Read", "Relax"),
                ("Master Bathroom", "Use Bathroom"),
                ("Leave Home", "Leave Home"),
                ("Master Bedroom Activity", "Other"),
                ("Watch TV", "Relax"),
                ("Sleep", "Sleep"),
                ("Bed to Toilet", "Bed to Toilet"),
                ("Desk Activity", "Work"),
                ("Morning Meds", "Take Medicine"),
                ("Chores", "Work"),
                ("Dining Room Activity", "Eat"),
                ("Evening Meds", "Take Medicine"),
                ("Meditate", "Other"),
                ("Other", "Other"),
            ],
        ),
        (
            "kyoto7",
            &[
                ("Meal Preparation", "Cook"),
                ("R1 Work", "Work"),
                ("R1 Personal Hygiene", "Personal Hygiene"),
                ("R2 Work", "Work"),
                ("R2 Bed to Toilet", "Bed to Toilet"),
                ("R2 Personal Hygiene", "Personal Hygiene"),
                ("R1 Sleep", "Sleep"),
                ("R2 Sleep", "Sleep"),
                ("R1 Bed to Toilet", "Bed to Toilet"),
                ("Watch TV", "Relax"),
                ("Study", "Other"),
                ("Clean", "Work"),
                ("Wash Bathtub", "Other"),
                ("Other", "Other"),
            ],
        ),
    ];
    let mut summary = Vec::new();
    for (name, rows) in table {
        let map = LabelMap::builtin(name).unwrap();
        let mut produced = BTreeSet::new();
        for (orig, shared) in rows {
            // raw logs write labels with underscores
            for spelling in [orig.to_string(), orig.replace(' ', "_")] {
                match map.map(&spelling) {
                    Ok(got) if got == *shared => {
                        produced.insert(got.to_string());
                    }
                    Ok(got) => return fail(format!("{name}: {spelling} -> {got}, table says {shared}")),
                    Err(e) => return fail(format!("{name}: {e}")),
                }
            }
        }
        let expected: BTreeSet<String> = rows.iter().map(|(_, s)| s.to_string()).collect();
        if produced != expected {
            return fail(format!("{name}: produced {produced:?}"));
        }
        summary.push(format!("{name} {}->{}", rows.len(), expected.len()));
    }
    pass(format!("zero unmapped labels; {}", summary.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("metric-oracle equivalence", || timed(10.0, criterion_1)),
        ("versioned-store equivalence", || timed(5.0, criterion_2)),
        ("summarization rules", || timed(5.0, criterion_3)),
        ("majority-overlap alignment", || timed(5.0, criterion_4)),
        ("deterministic end-to-end", criterion_5),
        ("smoothing reduces short segments", criterion_6),
        ("prompt fidelity", criterion_7),
        ("live-backend ordinal recipe", criterion_8),
        ("label mapping", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let out = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            fail(format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !out.ok {
            failed += 1;
        }
        println!(
            "acceptance {} {name}: {} ({})",
            i + 1,
            if out.ok { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
