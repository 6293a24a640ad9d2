//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p afford-cli --test acceptance -- --nocapture`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use afford_core::backends::scripted::{ScriptedDetect, ScriptedSegment};
use afford_core::backends::{Capability, RetryPolicy};
use afford_core::eval::{EvalAccumulator, THRESHOLDS};
use afford_core::pipeline::{Pipeline, PipelineConfig};
use afford_core::prompts::{render_dreamer_prompt, render_thinker_prompt};
use afford_core::synthetic::{self, SyntheticItem};
use afford_core::{
    evaluate, parse_thinker_output, AffordanceRegion, AffordanceResult, Backends, ImageRef, Mode,
    PipelineTrace, RleMask, TaskItem,
};
use common::{afford, path_str, read_json, trace_files};
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- metrics

/// Per-pixel reference: IoU from raw counts, passes by exact integer
/// comparison `100 * I > (50 + 5k) * U`.
struct Reference {
    ious: Vec<f64>,
    inter: u64,
    union: u64,
    passes: [u64; 10],
}

impl Reference {
    fn new() -> Self {
        Self {
            ious: Vec::new(),
            inter: 0,
            union: 0,
            passes: [0; 10],
        }
    }

    fn add(&mut self, pred: &[bool], gt: &[bool]) {
        let i = pred.iter().zip(gt).filter(|(p, g)| **p && **g).count() as u64;
        let u = pred.iter().zip(gt).filter(|(p, g)| **p || **g).count() as u64;
        self.ious
            .push(if u == 0 { 1.0 } else { i as f64 / u as f64 });
        self.inter += i;
        self.union += u;
        for (k, count) in self.passes.iter_mut().enumerate() {
            let t = 50 + 5 * k as u64;
            let pass = if u == 0 { true } else { 100 * i > t * u };
            *count += u64::from(pass);
        }
    }

    fn metrics(&self) -> [f64; 4] {
        let n = self.ious.len() as f64;
        let g = self.ious.iter().sum::<f64>() / n;
        let c = if self.union == 0 {
            0.0
        } else {
            self.inter as f64 / self.union as f64
        };
        let p50 = self.passes[0] as f64 / n;
        let p50_95 = self.passes.iter().map(|&p| p as f64 / n).sum::<f64>() / 10.0;
        [g, c, p50, p50_95]
    }
}

#[derive(Debug, Clone)]
struct Pair {
    w: u32,
    h: u32,
    gt: Vec<bool>,
    pred: Vec<bool>,
}

fn pair() -> impl Strategy<Value = Pair> {
    (1..=16u32, 1..=16u32, 0..=100u8, 0..=100u8).prop_flat_map(|(w, h, density, flip)| {
        let n = (w * h) as usize;
        (vec(0..100u8, n), vec(0..100u8, n)).prop_map(move |(a, b)| {
            let gt: Vec<bool> = a.iter().map(|&x| x < density).collect();
            let pred = gt.iter().zip(&b).map(|(&g, &r)| g ^ (r < flip)).collect();
            Pair { w, h, gt, pred }
        })
    })
}

fn trace_for(id: &str, pred: &RleMask) -> PipelineTrace {
    let mut t = PipelineTrace::new(id, Mode::Full, "t");
    match pred.bounding_box() {
        Some(bbox) => {
            let region = AffordanceRegion::new(bbox, vec![], pred.clone(), 0.5);
            t.result = Some(
                AffordanceResult::from_regions(vec![region], pred.width(), pred.height()).unwrap(),
            );
        }
        // An empty prediction is scored as a failed item.
        None => {
            t.error = Some(afford_core::pipeline::TraceError {
                stage: afford_core::pipeline::Stage::Spotter,
                kind: "no_detections".into(),
                raw: None,
                message: "empty".into(),
            })
        }
    }
    t
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let placeholder = ImageRef::from_rgb("p", &image::RgbImage::new(1, 1)).unwrap();
    let mut total_pairs = 0usize;
    let counter = std::cell::Cell::new(0usize);
    let mut runner = runner(400);
    runner
        .run(&vec(pair(), 1..6), |pairs| {
            counter.set(counter.get() + pairs.len());
            let mut reference = Reference::new();
            let mut items = Vec::new();
            let mut traces = Vec::new();
            let mut halves = [EvalAccumulator::new(), EvalAccumulator::new()];
            for (k, p) in pairs.iter().enumerate() {
                let id = format!("i{k}");
                let gt = RleMask::encode(&p.gt, p.w, p.h).unwrap();
                let pred = RleMask::encode(&p.pred, p.w, p.h).unwrap();
                reference.add(&p.pred, &p.gt);
                let trace = trace_for(&id, &pred);
                let score = afford_core::eval::score_item(&trace, &gt).unwrap();
                halves[k % 2].add_score(&score).unwrap();
                items.push(TaskItem {
                    id,
                    image: placeholder.clone(),
                    task: "t".into(),
                    gt_mask: Some(gt),
                });
                traces.push(trace);
            }
            let report =
                evaluate(&items, &traces).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let got = [report.g_iou, report.c_iou, report.p50, report.p50_95];
            let want = reference.metrics();
            for (name, (g, w)) in ["gIoU", "cIoU", "P50", "P50_95"]
                .iter()
                .zip(got.iter().zip(want))
            {
                prop_assert!(close(*g, w), "{name}: evaluator {g} reference {w}");
            }
            let [a, b] = halves.clone();
            let merged = a.merge(&b).unwrap().finalize().unwrap();
            prop_assert!(close(merged.g_iou, report.g_iou) && merged.c_iou == report.c_iou);
            prop_assert_eq!(merged.p50_95, report.p50_95);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    total_pairs += counter.get();
    let elapsed = start.elapsed();
    ensure(total_pairs >= 1000, || {
        format!("only {total_pairs} pairs generated")
    })?;
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })
}

fn ciou_giou_divergence() -> Outcome {
    let mut acc = EvalAccumulator::new();
    acc.accumulate("a", 1.0 / 5.0, (1, 5)).unwrap();
    acc.accumulate("b", 1.0, (4, 4)).unwrap();
    let report = acc.finalize().map_err(|e| e.to_string())?;
    ensure(report.g_iou == 0.6, || format!("gIoU {}", report.g_iou))?;
    ensure(report.c_iou == 5.0 / 9.0, || {
        format!("cIoU {}", report.c_iou)
    })?;

    // 18 of 25 pixels: IoU 0.72 clears 0.50..=0.70 only.
    let gt = RleMask::new(5, 5, vec![0, 18, 7]).unwrap();
    let pred = RleMask::full(5, 5).unwrap();
    let iou = afford_core::iou(&pred, &gt).unwrap();
    ensure(iou == 0.72, || format!("IoU {iou}"))?;
    let mut single = EvalAccumulator::new();
    single.accumulate("x", iou, (18, 25)).unwrap();
    let report = single.finalize().map_err(|e| e.to_string())?;
    ensure(report.p50_95 == 0.5, || format!("P50_95 {}", report.p50_95))?;
    ensure(THRESHOLDS.iter().filter(|&&t| iou > t).count() == 5, || {
        "threshold count".into()
    })
}

// ---------------------------------------------------------------- RLE

/// Canonical row-major runs: background first, no zero runs except a
/// leading one.
fn reference_encode(bits: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

fn reference_decode(runs: &[u32]) -> Vec<bool> {
    runs.iter()
        .enumerate()
        .flat_map(|(i, &n)| std::iter::repeat_n(i % 2 == 1, n as usize))
        .collect()
}

/// Splits runs with zero-length runs of the opposite colour, producing an
/// equivalent non-canonical sequence.
fn scatter_zeros(runs: &[u32], cuts: &[u8]) -> Vec<u32> {
    let mut out = Vec::new();
    for (i, &n) in runs.iter().enumerate() {
        let cut = cuts.get(i).copied().unwrap_or(0) as u32;
        if n >= 2 && cut % 3 == 1 {
            let left = 1 + cut % (n - 1);
            out.extend([left, 0, n - left]);
        } else {
            out.push(n);
        }
    }
    out
}

fn rle_round_trip() -> Outcome {
    let strategy = (1..=64u32, 1..=64u32, 0..=100u8).prop_flat_map(|(w, h, d)| {
        let n = (w * h) as usize;
        (
            Just(w),
            Just(h),
            vec(0..100u8, n).prop_map(move |v| v.into_iter().map(|x| x < d).collect::<Vec<_>>()),
            vec(any::<u8>(), 0..64),
        )
    });
    runner(512)
        .run(&strategy, |(w, h, bits, cuts)| {
            let mask = RleMask::encode(&bits, w, h).unwrap();
            let canonical = reference_encode(&bits);
            prop_assert_eq!(mask.runs(), canonical.as_slice());
            prop_assert_eq!(&mask.decode(), &bits);
            prop_assert_eq!(mask.area(), bits.iter().filter(|b| **b).count() as u64);

            let loose = scatter_zeros(mask.runs(), &cuts);
            prop_assert_eq!(&reference_decode(&loose), &bits);
            let noncanonical = RleMask::new(w, h, loose).unwrap();
            let decoded = noncanonical.decode();
            prop_assert_eq!(&decoded, &bits);
            let reencoded = RleMask::encode(&decoded, w, h).unwrap();
            let normalized = noncanonical.canonical();
            prop_assert_eq!(reencoded.runs(), normalized.runs());
            prop_assert_eq!(reencoded.runs(), canonical.as_slice());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- parser

const FRAGMENTS: &[&str] = &[
    "{",
    "}",
    "[",
    "]",
    "\"",
    ":",
    ",",
    "\\",
    "```",
    "```json",
    "### Thinking",
    "### Output",
    "\n",
    "\"task\"",
    "\"object_name\"",
    "\"object_part\"",
    "the blade of the shears",
    "null",
    "1e309",
    "\u{0}",
    "é",
    "🦀",
    "\u{202e}",
    "    ",
    "{\"task\":",
    "}}}}",
    "{{{{",
];

fn parser_robustness() -> Outcome {
    let free = any::<String>().boxed();
    let shaped = vec(prop::sample::select(FRAGMENTS), 0..40)
        .prop_map(|parts| parts.concat())
        .boxed();
    for (label, strategy) in [("arbitrary", free), ("shaped", shaped)] {
        runner(6000)
            .run(&strategy, |input| {
                let outcome = catch_unwind(|| parse_thinker_output(&input));
                prop_assert!(outcome.is_ok(), "panicked on {input:?}");
                if let Ok(Ok(part)) = outcome {
                    prop_assert!(!part.object_part.trim().is_empty());
                }
                Ok(())
            })
            .map_err(|e| format!("{label}: {e}"))?;
    }

    let shears = "{\n    \"task\":\"cut the paper\",\n    \"object_name\": \"shears\",\n    \"object_part\": \"the blade of the shears\"\n}";
    let golden: Vec<(String, [&str; 3])> = vec![
        (
            format!("### Thinking\nThe blades close on the paper.\n### Output\n{shears}"),
            ["cut the paper", "shears", "the blade of the shears"],
        ),
        (
            format!("### Thinking\nthinking process\n### Output\n```json\n{shears}\n```\n"),
            ["cut the paper", "shears", "the blade of the shears"],
        ),
        (
            "### Thinking\nPull, not push.\n\n### Output\n{\"task\": \"open the refrigerator\", \"object_name\": \"refrigerator\", \"object_part\": \"the handle of the refrigerator\"}".into(),
            ["open the refrigerator", "refrigerator", "the handle of the refrigerator"],
        ),
        (
            "### Thinking\nA {draft} answer first.\n### Output\n{\"task\":\"sit down\",\"object_name\":\"chair\",\"object_part\":\"the seat of the chair\"}\n".into(),
            ["sit down", "chair", "the seat of the chair"],
        ),
    ];
    for (raw, [task, object, part]) in golden {
        let parsed = parse_thinker_output(&raw).map_err(|e| format!("{raw:?}: {e}"))?;
        ensure(
            parsed.task == task && parsed.object_name == object && parsed.object_part == part,
            || format!("{raw:?} parsed to {parsed:?}"),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------- prompts

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

fn prompt_fidelity() -> Outcome {
    let cases = [
        ("open_the_refrigerator", "open the refrigerator"),
        ("cut_paper", "cut a sheet of paper with the shears"),
        ("quoted", "hold the \"blue\" mug"),
    ];
    for (name, task) in cases {
        for (stage, rendered) in [
            ("dreamer", render_dreamer_prompt(task)),
            ("thinker", render_thinker_prompt(task)),
        ] {
            let path = golden_dir().join(format!("{stage}_{name}.txt"));
            let golden = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let text = rendered.map_err(|e| e.to_string())?.text;
            ensure(text.as_bytes() == golden.as_slice(), || {
                let at = text
                    .bytes()
                    .zip(&golden)
                    .take_while(|(a, b)| a == *b)
                    .count();
                format!("{stage}/{name} differs from golden at byte {at}")
            })?;
        }
    }
    let dreamer = render_dreamer_prompt("x").unwrap().text;
    ensure(
        dreamer.contains("Imagination-driven Image-Editing Prompt Writer"),
        || "dreamer role line missing".into(),
    )?;
    ensure(dreamer.contains("keep others unchanged"), || {
        "edit suffix missing".into()
    })
}

// ---------------------------------------------------------------- modes

fn task_item(it: &SyntheticItem) -> TaskItem {
    TaskItem {
        id: it.id.clone(),
        image: ImageRef::from_rgb(it.id.clone(), &it.render()).unwrap(),
        task: it.task.to_string(),
        gt_mask: Some(it.gt_mask()),
    }
}

fn mode_contract() -> Outcome {
    let it = synthetic::items()[3].clone();
    let item = task_item(&it);
    for mode in Mode::ALL {
        let chat = Arc::new(synthetic::scripted_chat());
        let edit = Arc::new(synthetic::scripted_edit());
        let detect: Arc<ScriptedDetect> = Arc::new(synthetic::scripted_detect());
        let segment = Arc::new(ScriptedSegment::fill_boxes());
        let backends = Backends::new()
            .with_chat(chat.clone(), RetryPolicy::none())
            .with_edit(edit.clone(), RetryPolicy::none())
            .with_detect(detect.clone(), RetryPolicy::none())
            .with_segment(segment.clone(), RetryPolicy::none());
        let mut config = PipelineConfig::new(mode);
        config.record_timings = false;
        let trace = Pipeline::new(config, backends)
            .map_err(|e| e.to_string())?
            .run_item(&item);
        ensure(trace.is_ok(), || format!("{mode}: {:?}", trace.error))?;
        let chat_images: Vec<usize> = chat.calls().iter().map(|c| c.images().len()).collect();
        use Capability::*;
        let (sequence, images): (&[Capability], &[usize]) = match mode {
            Mode::Full => (&[Chat, Edit, Chat, Detect, Segment], &[1, 2]),
            Mode::NoDreamer => (&[Chat, Detect, Segment], &[1]),
            Mode::SpotterOnly => (&[Detect, Segment], &[]),
        };
        ensure(trace.call_sequence() == sequence, || {
            format!("{mode}: {:?}", trace.call_sequence())
        })?;
        ensure(chat_images == images, || {
            format!("{mode}: chat images {chat_images:?}")
        })?;
        ensure(
            edit.calls().len() == usize::from(mode == Mode::Full),
            || format!("{mode}: edit calls"),
        )?;
        if mode == Mode::SpotterOnly {
            ensure(detect.calls() == vec![it.task.to_string()], || {
                format!("query {:?}", detect.calls())
            })?;
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = common::synth(dir.path());
    let cfg = root.join("config.json");
    let mut outputs = Vec::new();
    for p in ["1", "4"] {
        let out = dir.path().join(format!("p{p}"));
        let res = afford(&[
            "run",
            "--config",
            path_str(&cfg),
            "--parallelism",
            p,
            "--out",
            path_str(&out),
        ]);
        ensure(res.code == 0, || {
            format!("run -p {p}: {}{}", res.stdout, res.stderr)
        })?;
        outputs.push(out);
    }
    let names = trace_files(&outputs[0]);
    ensure(
        names.len() == 10 && names == trace_files(&outputs[1]),
        || format!("{names:?}"),
    )?;
    for name in names.iter().chain(
        names
            .iter()
            .map(|n| n.replace(".json", ".sim.png"))
            .collect::<Vec<_>>()
            .iter(),
    ) {
        let a = std::fs::read(outputs[0].join(name)).map_err(|e| format!("{name}: {e}"))?;
        let b = std::fs::read(outputs[1].join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(a == b, || {
            format!("{name} differs between parallelism 1 and 4")
        })?;
    }
    Ok(())
}

// ---------------------------------------------------------------- end to end

fn end_to_end_ablation() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = common::synth(dir.path());
    let res = afford(&[
        "ablate",
        "--config",
        path_str(&root.join("config.json")),
        "--keep-going",
    ]);
    ensure(res.code == 0, || {
        format!("ablate: {}{}", res.stdout, res.stderr)
    })?;

    // Hand-computed from the fixture geometry: 8x8 parts inside 16x16
    // objects, odd items misread without imagination, item 9 undetectable
    // from its raw task.
    let expected = [
        (Mode::Full, [1.0, 1.0, 1.0, 1.0]),
        (Mode::NoDreamer, [0.625, 0.4, 0.5, 0.5]),
        (Mode::SpotterOnly, [0.225, 576.0 / 2368.0, 0.0, 0.0]),
    ];
    let manifest = root.join("manifest.jsonl");
    let mut measured: Vec<Vec<f64>> = Vec::new();
    for (mode, want) in expected {
        let traces = root.join("runs").join(mode.as_str());
        let res = afford(&["eval", path_str(&traces), "--manifest", path_str(&manifest)]);
        ensure(res.code == 0, || format!("eval {mode}: {}", res.stderr))?;
        let report = read_json(&traces.join("report.json"));
        let got: Vec<f64> = ["gIoU", "cIoU", "P50", "P50_95"]
            .iter()
            .map(|k| report[k].as_f64().unwrap_or(f64::NAN))
            .collect();
        ensure(got == want, || {
            format!("{mode}: got {got:?}, want {want:?}")
        })?;
        measured.push(got);
    }
    for (metric, name) in ["gIoU", "cIoU", "P50", "P50_95"].iter().enumerate() {
        let column: Vec<f64> = measured.iter().map(|row| row[metric]).collect();
        ensure(column.windows(2).all(|w| w[0] >= w[1]), || {
            format!("{name} not ordered FULL >= NO_DREAMER >= SPOTTER_ONLY: {column:?}")
        })?;
    }
    let table = res.stdout;
    let rows: Vec<&str> = table
        .lines()
        .filter(|l| !l.contains('\t') && l.contains(char::is_numeric))
        .collect();
    ensure(
        rows.iter()
            .any(|r| r.starts_with("FULL") && r.contains("100.00")),
        || table.clone(),
    )?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 7] = [
        ("metric oracle equivalence", metric_oracle),
        ("cIoU/gIoU divergence regression", ciou_giou_divergence),
        ("RLE round-trip", rle_round_trip),
        ("parser robustness", parser_robustness),
        ("prompt fidelity", prompt_fidelity),
        ("pipeline mode contract", mode_contract),
        ("end-to-end ablation", end_to_end_ablation),
    ];
    let mut failures = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let ms = start.elapsed().as_millis();
        match outcome {
            Ok(()) => println!("PASS  {name} ({ms} ms)"),
            Err(msg) => {
                println!("FAIL  {name} ({ms} ms): {msg}");
                failures.push(name);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
