//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Everything runs on the scripted backend
//! except the live smoke check, which is skipped unless THINKTANK_LLM_URL
//! points at a reachable server.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thinktank_core::knowledge::{
    adaptive_filter, chunk_text, normalize_whitespace, reassemble, ChunkParams, ChunkRecord, KnowledgeBase,
    ScoredChunk,
};
use thinktank_core::llm::{
    BackendStatus, CapturingGateway, ChatRequest, EmbeddingVector, GatewayError, LlmGateway, OllamaConfig,
    OllamaGateway, ScriptedGateway, TurnKind,
};
use thinktank_core::model::{
    ChunkId, DocId, KnowledgeBaseId, Media, MeetingConfig, MeetingEvent, MeetingId, MeetingMinutes, MeetingStatus,
    Phase, ProjectId,
};
use thinktank_core::persistence::event_log::parse_log;
use thinktank_core::{Engine, Error, IdGenerator, SteppingClock, Store, SystemClock};

type Outcome = Result<(), String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let checks: Vec<(&str, Check)> = vec![
        ("turn-count law over N in 1..=4, R in 1..=3", turn_count_law),
        ("determinism of event logs and exported minutes", determinism),
        ("carry-over into guidance and expert prompts", carry_over),
        ("sequential chain of expert turns", sequential_chain),
        ("retrieval matches a brute-force cosine oracle", retrieval_oracle),
        ("adaptive filter contract (10^4 cases)", adaptive_filter_contract),
        ("chunker reconstruction (10^3 cases)", chunker_reconstruction),
        ("structured two-round demo with four experts", two_round_demo),
        ("crash consistency under truncation and corruption", crash_consistency),
        ("warm-up notes and later recall", warmup),
        ("service stream reconciliation and resume", stream_reconciliation),
    ];

    std::panic::set_hook(Box::new(|info| eprintln!("{info}")));
    let mut failures = 0;
    for (name, check) in checks {
        let started = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(outcome) => outcome,
            Err(panic) => Err(panic_message(&*panic)),
        };
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS  {name} ({secs:.2}s)"),
            Err(why) => {
                failures += 1;
                println!("FAIL  {name} ({secs:.2}s): {why}");
            }
        }
    }
    match live_smoke() {
        Ok(None) => println!("PASS  live end-to-end meeting against a local LLM server"),
        Ok(Some(reason)) => println!("SKIP  live end-to-end meeting against a local LLM server: {reason}"),
        Err(why) => {
            // Optional criterion: reported, but it does not fail the suite.
            println!("FAIL  live end-to-end meeting against a local LLM server (optional): {why}");
        }
    }
    println!("acceptance: {failures} required criteria failed");
    if failures > 0 {
        std::process::exit(1);
    }
}

fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    panic
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| panic.downcast_ref::<&str>().map(|s| (*s).to_owned()))
        .unwrap_or_else(|| "panicked".into())
}

// -- fixtures -----------------------------------------------------------------

type Captured = Arc<CapturingGateway<ScriptedGateway>>;

struct Rig {
    dir: tempfile::TempDir,
    engine: Engine,
    capture: Captured,
    project: ProjectId,
}

fn rig(experts: &[&str], seed: u64) -> Rig {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path()).unwrap());
    let capture: Captured = Arc::new(CapturingGateway::new(ScriptedGateway::standard()));
    let ids = Arc::new(IdGenerator::seeded(Arc::new(SteppingClock::fixed()), seed));
    let engine = Engine::new(store, capture.clone(), ids);
    let project = engine
        .create_project("Plant upgrade", "Decide how to upgrade the plant.", vec!["Lower running cost".into()])
        .unwrap()
        .id;
    for name in experts {
        engine
            .add_expert(&project, name, &format!("{name}: a practitioner with a strong opinion."))
            .unwrap();
    }
    Rig {
        dir,
        engine,
        capture,
        project,
    }
}

fn expert_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("Expert {i}")).collect()
}

impl Rig {
    fn meet(&self, agenda: &str, rounds: u32, experts: &[String]) -> Result<MeetingMinutes, Error> {
        self.engine
            .run_meeting(MeetingConfig::team(self.project.clone(), agenda, rounds, experts.to_vec()))
    }

    fn prompts(&self, kind: TurnKind, round: u32) -> Vec<(String, String)> {
        self.capture
            .requests()
            .into_iter()
            .filter(|r| r.tag.kind == kind && r.tag.round == round)
            .map(|r| (r.tag.speaker.clone(), r.full_text()))
            .collect()
    }
}

fn is_content(phase: Phase) -> bool {
    !matches!(phase, Phase::MeetingStarted | Phase::MeetingFinished | Phase::MeetingFailed)
}

fn section<'a>(prompt: &'a str, title: &str) -> Option<&'a str> {
    let header = format!("## {title}\n");
    let start = prompt.find(&header)? + header.len();
    let rest = &prompt[start..];
    Some(rest.find("\n\n## ").map_or(rest, |end| &rest[..end]))
}

// -- meeting protocol -----------------------------------------------------------

fn turn_count_law() -> Outcome {
    for n in 1..=4usize {
        for r in 1..=3u32 {
            let names = expert_names(n);
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let rig = rig(&refs, 1);
            let started = Instant::now();
            let minutes = rig.meet("Agree on a plan", r, &names).map_err(|e| e.to_string())?;
            let elapsed = started.elapsed();
            let expected = r as usize * (n + 3) + 1;
            let content = minutes.transcript.iter().filter(|e| is_content(e.phase)).count();
            ensure!(content == expected, "N={n} R={r}: {content} content events, expected {expected}");
            let logged = rig.engine.events(&minutes.meeting_id, 1).map_err(|e| e.to_string())?;
            ensure!(logged.len() == expected + 2, "N={n} R={r}: log has {} events", logged.len());
            ensure!(elapsed < Duration::from_secs(5), "N={n} R={r} took {elapsed:?}");
        }
    }
    Ok(())
}

fn scripted_run(seed: u64) -> (Vec<u8>, String) {
    let rig = rig(&["Ada", "Grace"], seed);
    rig.engine
        .ingest_document(&rig.project, "Ada", "notes.txt", &"Valves leak under pressure. ".repeat(80), Media::PlainText)
        .unwrap();
    let minutes = rig.meet("Replace the valves?", 2, &["Ada".into(), "Grace".into()]).unwrap();
    let log = fs::read(rig.engine.store().events_path(&minutes.meeting_id).unwrap()).unwrap();
    let export = rig.engine.export_minutes(&minutes.meeting_id).unwrap();
    (log, export)
}

fn determinism() -> Outcome {
    let (log_a, export_a) = scripted_run(42);
    let (log_b, export_b) = scripted_run(42);
    ensure!(!log_a.is_empty(), "empty event log");
    ensure!(log_a == log_b, "event logs differ");
    ensure!(export_a == export_b, "exported minutes differ");
    Ok(())
}

fn carry_over() -> Outcome {
    for (n, r) in [(1usize, 2u32), (3, 3), (4, 2)] {
        let names = expert_names(n);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let rig = rig(&refs, 3);
        let minutes = rig.meet("Agree on a plan", r, &names).map_err(|e| e.to_string())?;
        for round in 2..=r {
            let previous = &minutes.per_round[round as usize - 2];
            ensure!(!previous.synthesis.is_empty(), "round {} synthesis empty", round - 1);
            let guidance = rig.prompts(TurnKind::Guidance, round);
            let experts = rig.prompts(TurnKind::Expert, round);
            ensure!(guidance.len() == 1 && experts.len() == n, "missing prompts for round {round}");
            for (speaker, prompt) in guidance.iter().chain(&experts) {
                ensure!(
                    prompt.contains(&previous.synthesis),
                    "N={n} round {round}: prompt of {speaker} lacks the round {} synthesis",
                    round - 1
                );
                for q in &previous.follow_up_questions {
                    ensure!(prompt.contains(q), "N={n} round {round}: {speaker} lacks follow-up `{q}`");
                }
            }
        }
    }
    Ok(())
}

fn sequential_chain() -> Outcome {
    let names = expert_names(4);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let rig = rig(&refs, 5);
    let minutes = rig.meet("Agree on a plan", 2, &names).map_err(|e| e.to_string())?;
    for record in &minutes.per_round {
        let prompts = rig.prompts(TurnKind::Expert, record.round);
        ensure!(prompts.len() == names.len(), "round {}: {} expert prompts", record.round, prompts.len());
        for (i, (speaker, prompt)) in prompts.iter().enumerate() {
            ensure!(speaker == &names[i], "round {}: speaker {i} is {speaker}", record.round);
            for (j, turn) in record.expert_turns.iter().enumerate() {
                let present = prompt.contains(turn.content.trim());
                if j < i {
                    ensure!(present, "round {}: {speaker} does not see {}", record.round, turn.speaker);
                } else {
                    ensure!(!present, "round {}: {speaker} sees {}", record.round, turn.speaker);
                }
            }
            ensure!(!prompt.contains(record.critique.trim()), "{speaker} sees the critique of its own round");
        }
    }
    Ok(())
}

// -- retrieval ------------------------------------------------------------------

/// Independent implementation of the scripted backend's feature hashing.
fn oracle_embedding(text: &str, dim: usize) -> Vec<f32> {
    let mut tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect();
    if tokens.is_empty() {
        tokens.push(text.to_owned());
    }
    let mut v = vec![0f32; dim];
    for t in tokens {
        let h = Sha256::digest(t.as_bytes());
        let mut first = [0u8; 8];
        first.copy_from_slice(&h[..8]);
        let slot = (u64::from_le_bytes(first) % dim as u64) as usize;
        let sign = if h[8] & 1 == 0 { 1.0f32 } else { -1.0 };
        v[slot] += sign * (1.0 + h[9] as f32 / 255.0);
    }
    v
}

fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn retrieval_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(2024);
    let vocab: Vec<String> = (0..600)
        .map(|_| {
            let len = rng.gen_range(3..9);
            (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
        })
        .collect();
    let phrase = |rng: &mut StdRng, words: usize| -> String {
        (0..words).map(|_| vocab[rng.gen_range(0..vocab.len())].as_str()).collect::<Vec<_>>().join(" ")
    };

    // Stride 80: a text of 79_990 characters yields exactly 1_000 chunks.
    let params = ChunkParams::new(100, 20).map_err(|e| e.to_string())?;
    let mut text = String::new();
    while text.len() < 80_500 {
        text.push_str(&phrase(&mut rng, 10));
        text.push(' ');
    }
    text.truncate(79_990);
    if text.ends_with(' ') {
        text.pop();
        text.push('x');
    }

    let dir = tempfile::tempdir().unwrap();
    let kb = KnowledgeBase::create(dir.path(), KnowledgeBaseId("kb_oracle".into()), ProjectId("prj_oracle".into()), params)
        .map_err(|e| e.to_string())?;
    let gateway = ScriptedGateway::standard();
    let ids = IdGenerator::seeded(Arc::new(SteppingClock::fixed()), 9);
    kb.ingest_document(&gateway, &ids, "corpus.txt", &text, Media::PlainText)
        .map_err(|e| e.to_string())?;
    let chunks = kb.chunks();
    ensure!(chunks.len() == 1000, "{} chunks instead of 1000", chunks.len());
    let dim = kb.dim().ok_or("knowledge base has no dimension")?;
    let vectors: Vec<Vec<f32>> = chunks.iter().map(|c| oracle_embedding(&c.text, dim)).collect();

    for q in 0..100 {
        let words = rng.gen_range(1..7);
        let query = phrase(&mut rng, words);
        let got = kb.retrieve(&gateway, &query, 5).map_err(|e| e.to_string())?;
        let qv = oracle_embedding(&query, dim);
        let mut scan: Vec<(usize, f64)> = vectors.iter().enumerate().map(|(i, v)| (i, oracle_cosine(&qv, v))).collect();
        scan.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scan.truncate(5);
        ensure!(got.len() == scan.len(), "query {q}: {} results", got.len());
        for (rank, (hit, (i, score))) in got.iter().zip(&scan).enumerate() {
            ensure!(
                hit.chunk.chunk_id == chunks[*i].chunk_id,
                "query {q} rank {rank}: got ordinal {}, oracle {}",
                hit.chunk.ordinal,
                chunks[*i].ordinal
            );
            ensure!((hit.score - score).abs() <= 1e-6, "query {q} rank {rank}: score {} vs {score}", hit.score);
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(())
}

fn scored(i: usize, score: f64) -> ScoredChunk {
    ScoredChunk {
        chunk: ChunkRecord {
            chunk_id: ChunkId(format!("chk_{i}")),
            doc_id: DocId("doc_prop".into()),
            ordinal: i as u32,
            text: format!("chunk {i}"),
            char_span: (i, i + 1),
            embedding: EmbeddingVector::new(vec![1.0]).unwrap(),
        },
        score,
    }
}

fn run_property<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Outcome {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new(config).run(&strategy, test).map_err(|e| e.to_string())
}

fn adaptive_filter_contract() -> Outcome {
    // Retrieval hands the filter results in descending score order.
    let batches = prop::collection::vec(
        prop_oneof![-1.0f64..=1.0, Just(0.5), Just(0.0), (0u8..5).prop_map(|x| f64::from(x) / 4.0)],
        0..40,
    )
    .prop_map(|mut v| {
        v.sort_by(|a, b| b.total_cmp(a));
        v
    });
    run_property(10_000, batches, |scores| {
        let input: Vec<ScoredChunk> = scores.iter().enumerate().map(|(i, s)| scored(i, *s)).collect();
        let out = adaptive_filter(input.clone());
        if input.is_empty() {
            prop_assert!(out.is_empty());
            return Ok(());
        }
        prop_assert!(!out.is_empty());
        let ids: BTreeSet<&ChunkId> = input.iter().map(|c| &c.chunk.chunk_id).collect();
        prop_assert!(out.iter().all(|c| ids.contains(&c.chunk.chunk_id)));
        let unique: BTreeSet<&ChunkId> = out.iter().map(|c| &c.chunk.chunk_id).collect();
        prop_assert_eq!(unique.len(), out.len());
        prop_assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let min = out.iter().map(|c| c.score).fold(f64::INFINITY, f64::min);
        let above = scores.iter().filter(|s| **s >= mean - 1e-12).count();
        if above > 0 {
            prop_assert!(min >= mean - 1e-12, "min {} below mean {}", min, mean);
            prop_assert_eq!(out.len(), above);
        } else {
            prop_assert_eq!(out.len(), 1);
            prop_assert_eq!(&out[0].chunk.chunk_id, &input[0].chunk.chunk_id);
        }
        Ok(())
    })
}

fn chunker_reconstruction() -> Outcome {
    let glyphs = prop_oneof![
        8 => prop::char::range('a', 'z'),
        2 => Just(' '),
        1 => Just('\n'),
        1 => Just('\t'),
        1 => prop::char::range('\u{e0}', '\u{ff}'),
        1 => prop::char::range('\u{4e00}', '\u{4e40}'),
    ];
    let case = (prop::collection::vec(glyphs, 0..3000), 1usize..300)
        .prop_flat_map(|(chars, size)| (Just(chars), Just(size), 0..size));
    run_property(1_000, case, |(chars, size, overlap)| {
        let raw: String = chars.into_iter().collect();
        let normalized = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        prop_assert_eq!(&normalize_whitespace(&raw), &normalized);
        if normalized.is_empty() {
            prop_assert!(chunk_text(&normalized, size, overlap).is_err());
            return Ok(());
        }
        let chunks = chunk_text(&normalized, size, overlap).unwrap();
        let stride = size - overlap;
        let all: Vec<char> = normalized.chars().collect();
        // Every chunk but the last contributes its first `stride` characters.
        let mut rebuilt = String::new();
        for (i, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.start, i * stride);
            prop_assert_eq!(c.text.chars().collect::<Vec<_>>(), all[c.start..c.end].to_vec());
            if i + 1 < chunks.len() {
                rebuilt.extend(c.text.chars().take(stride));
            } else {
                rebuilt.push_str(&c.text);
            }
        }
        prop_assert_eq!(rebuilt.as_bytes(), normalized.as_bytes());
        let reassembled = reassemble(&chunks);
        prop_assert_eq!(reassembled.as_bytes(), normalized.as_bytes());
        Ok(())
    })
}

fn two_round_demo() -> Outcome {
    let experts = ["Character Artist", "Rigging Lead", "Speech Engineer", "Realtime Engine Developer"];
    let rig = rig(&experts, 11);
    let names: Vec<String> = experts.iter().map(|s| s.to_string()).collect();
    let minutes = rig
        .meet("Build a photoreal digital human that can hold a live conversation.", 2, &names)
        .map_err(|e| e.to_string())?;
    ensure!(minutes.status == MeetingStatus::Completed, "status {:?}", minutes.status);
    ensure!(minutes.per_round.len() == 2, "{} round records", minutes.per_round.len());
    for r in &minutes.per_round {
        ensure!(!r.synthesis.trim().is_empty(), "round {} synthesis empty", r.round);
        ensure!(r.expert_turns.len() == 4, "round {} has {} turns", r.round, r.expert_turns.len());
    }
    ensure!(!minutes.per_round[0].follow_up_questions.is_empty(), "no round-1 follow-up questions");
    ensure!(!minutes.final_summary.trim().is_empty(), "empty final summary");

    let critique = &minutes.per_round[0].critique;
    let topic = critique
        .split("Focus topic:")
        .nth(1)
        .map(|t| t.trim().trim_end_matches('.').trim().to_owned())
        .filter(|t| !t.is_empty())
        .ok_or_else(|| format!("round-1 critique names no focus topic: {critique}"))?;
    let guidance = rig.prompts(TurnKind::Guidance, 2);
    ensure!(guidance.len() == 1, "{} round-2 guidance prompts", guidance.len());
    let carried = section(&guidance[0].1, "Carried Context").ok_or("round-2 guidance has no carried context")?;
    ensure!(carried.contains(&topic), "round-2 guidance does not carry the focus topic `{topic}`");
    Ok(())
}

// -- persistence ----------------------------------------------------------------

fn crash_consistency() -> Outcome {
    let rig = rig(&["Ada"], 13);
    let minutes = rig.meet("Agree on a plan", 1, &["Ada".into()]).map_err(|e| e.to_string())?;
    let path = rig.engine.store().events_path(&minutes.meeting_id).map_err(|e| e.to_string())?;
    let log = fs::read(&path).unwrap();
    let (original, _) = parse_log(&path, &log).map_err(|e| e.to_string())?;
    ensure!(original.len() == 7, "unexpected log length {}", original.len());

    let check = |bytes: &[u8], what: &str| -> Outcome {
        match parse_log(&path, bytes) {
            Ok((events, _)) => {
                ensure!(events[..] == original[..events.len()], "{what}: replay is not a prefix of the log");
                Ok(())
            }
            Err(Error::Integrity { .. }) => Ok(()),
            Err(other) => Err(format!("{what}: unexpected error {other}")),
        }
    };
    for cut in 0..=log.len() {
        check(&log[..cut], &format!("truncated at {cut}"))?;
    }
    for at in 0..log.len() {
        let mut bytes = log.clone();
        bytes[at] ^= 0x01;
        check(&bytes, &format!("byte {at} flipped"))?;
    }

    // A truncated log left by a dead process is settled on the next start.
    let stale = rig_copy_with_truncated_log(&rig, &minutes.meeting_id, log.len() / 2)?;
    let store = Store::open(stale.path()).map_err(|e| e.to_string())?;
    store.fail_interrupted_meetings(IdGenerator::new(Arc::new(SystemClock)).now()).map_err(|e| e.to_string())?;
    let events = store.read_events(&minutes.meeting_id, 1).map_err(|e| e.to_string())?;
    let last = events.last().ok_or("no events after recovery")?;
    ensure!(last.phase == Phase::MeetingFailed, "recovered log ends in {:?}", last.phase);
    ensure!(events[..events.len() - 1] == original[..events.len() - 1], "recovered prefix differs");
    ensure!(!store.load_meeting(&minutes.meeting_id).unwrap().status.is_running(), "still running");
    Ok(())
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Copies the rig's data directory and makes the meeting look like it was
/// cut off mid-write by a crash.
fn rig_copy_with_truncated_log(rig: &Rig, id: &MeetingId, cut: usize) -> Result<tempfile::TempDir, String> {
    let copy = tempfile::tempdir().unwrap();
    copy_dir(rig.dir.path(), copy.path());
    let store = Store::open(copy.path()).map_err(|e| e.to_string())?;
    let events = store.events_path(id).map_err(|e| e.to_string())?;
    let bytes = fs::read(&events).unwrap();
    fs::write(&events, &bytes[..cut]).unwrap();
    let dir = events.parent().unwrap();
    let _ = fs::remove_file(dir.join("minutes.json"));
    let record_path = dir.join("meeting.json");
    let mut record: Value = serde_json::from_slice(&fs::read(&record_path).unwrap()).unwrap();
    record["status"] = serde_json::json!({"state": "running"});
    record["finished_at"] = Value::Null;
    fs::write(&record_path, serde_json::to_vec(&record).unwrap()).unwrap();
    Ok(copy)
}

// -- warm-up ----------------------------------------------------------------------

fn warmup() -> Outcome {
    let rig = rig(&["Ada", "Grace"], 17);
    // Default windows are 1000 characters with a stride of 800; 19_204
    // characters need 25 of them.
    let text = "pump ".repeat(3841);
    let ingested = rig
        .engine
        .ingest_document(&rig.project, "Ada", "pumps.txt", &text, Media::PlainText)
        .map_err(|e| e.to_string())?;
    ensure!(ingested.chunk_count == 25, "{} chunks", ingested.chunk_count);
    let batch = rig.engine.settings().warmup_batch;
    let expected_notes = ingested.chunk_count.div_ceil(batch);
    ensure!(expected_notes == 3, "batch size {batch} gives {expected_notes} batches");

    let report = rig.engine.run_warmup(&rig.project, "Ada").map_err(|e| e.to_string())?;
    ensure!(report.notes.len() == expected_notes, "{} warm-up notes", report.notes.len());
    let stored = rig
        .engine
        .store()
        .notes(&rig.project)
        .map_err(|e| e.to_string())?
        .notes_for("Ada");
    ensure!(stored.len() == expected_notes, "{} notes stored for Ada", stored.len());

    rig.capture.clear();
    rig.meet("How do we size the pumps?", 1, &["Ada".into(), "Grace".into()])
        .map_err(|e| e.to_string())?;
    let prompts = rig.prompts(TurnKind::Expert, 1);
    let ada = &prompts.iter().find(|(s, _)| s == "Ada").ok_or("no prompt for Ada")?.1;
    let recalled = section(ada, "Recalled Notes").ok_or("no recalled notes section")?;
    ensure!(
        stored.iter().any(|n| recalled.contains(n.text.trim())),
        "recalled notes do not include a warm-up note: {recalled}"
    );
    Ok(())
}

// -- service stream -----------------------------------------------------------------

/// Scripted backend slowed down so a meeting can be joined while it runs.
struct Slow(ScriptedGateway, Duration);

impl LlmGateway for Slow {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        thread::sleep(self.1);
        self.0.chat(request)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        self.0.embed(texts)
    }

    fn health_check(&self) -> BackendStatus {
        self.0.health_check()
    }
}

struct Sse {
    reader: Box<dyn BufRead>,
}

impl Sse {
    fn open(agent: &ureq::Agent, url: &str) -> Result<Self, String> {
        let resp = agent.get(url).call().map_err(|e| e.to_string())?;
        ensure!(resp.status().as_u16() == 200, "stream answered {}", resp.status());
        Ok(Self {
            reader: Box::new(BufReader::new(resp.into_body().into_reader())),
        })
    }

    /// Next `(event name, data)` pair, or `None` at end of stream.
    fn next(&mut self) -> Option<(String, String)> {
        let (mut name, mut data) = (String::new(), String::new());
        loop {
            let mut line = String::new();
            if self.reader.read_line(&mut line).ok()? == 0 {
                return None;
            }
            let line = line.trim_end_matches(['\r', '\n']);
            if line.is_empty() {
                if !data.is_empty() {
                    return Some((name, data));
                }
                continue;
            }
            if let Some(v) = line.strip_prefix("event:") {
                name = v.trim().to_owned();
            } else if let Some(v) = line.strip_prefix("data:") {
                data.push_str(v.strip_prefix(' ').unwrap_or(v));
            }
        }
    }

    fn event(&mut self) -> Result<Option<MeetingEvent>, String> {
        match self.next() {
            None => Ok(None),
            Some((name, data)) if name == "resume" => Err(format!("unexpected resume frame {data}")),
            Some((_, data)) => serde_json::from_str(&data).map(Some).map_err(|e| e.to_string()),
        }
    }

    fn until_terminal(&mut self, into: &mut Vec<MeetingEvent>) -> Outcome {
        while let Some(e) = self.event()? {
            let done = e.phase.is_terminal();
            into.push(e);
            if done {
                return Ok(());
            }
        }
        Err("stream ended before the terminal event".into())
    }
}

fn stream_reconciliation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path()).map_err(|e| e.to_string())?);
    let gateway = Arc::new(Slow(ScriptedGateway::standard(), Duration::from_millis(60)));
    let engine = Engine::new(store, gateway, Arc::new(IdGenerator::new(Arc::new(SystemClock))));
    let project = engine.create_project("Stream", "", vec![]).map_err(|e| e.to_string())?;
    for name in ["Ada", "Grace"] {
        engine.add_expert(&project.id, name, "persona").map_err(|e| e.to_string())?;
    }

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let served = engine.clone();
    thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            listener.set_nonblocking(true).unwrap();
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            thinktank_service::serve(listener, served).await.unwrap();
        });
    });
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();

    let mut resp = agent
        .post(&format!("{base}/projects/{}/meetings", project.id))
        .send_json(serde_json::json!({"agenda": "Stream it", "rounds": 2, "experts": ["Ada", "Grace"]}))
        .map_err(|e| e.to_string())?;
    ensure!(resp.status().as_u16() == 202, "start answered {}", resp.status());
    let started: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
    let id = MeetingId(started["meeting_id"].as_str().ok_or("no meeting id")?.to_owned());

    // Join once a few events are already in the log.
    let deadline = Instant::now() + Duration::from_secs(10);
    while engine.events(&id, 1).map_err(|e| e.to_string())?.len() < 3 {
        ensure!(Instant::now() < deadline, "meeting did not start");
        thread::sleep(Duration::from_millis(10));
    }
    let events_url = format!("{base}/meetings/{id}/events");
    let mut full = Sse::open(&agent, &events_url)?;
    let mut partial = Sse::open(&agent, &events_url)?;

    let mut head = Vec::new();
    for _ in 0..5 {
        head.push(partial.event()?.ok_or("stream ended early")?);
    }
    drop(partial);
    let resume_from = head.last().unwrap().seq + 1;
    let mut resumed = Sse::open(&agent, &format!("{events_url}?from_seq={resume_from}"))?;
    let live = !engine.meeting(&id).map_err(|e| e.to_string())?.status.is_running();

    let mut whole = Vec::new();
    full.until_terminal(&mut whole)?;
    let mut tail = Vec::new();
    resumed.until_terminal(&mut tail)?;

    let log = engine.events(&id, 1).map_err(|e| e.to_string())?;
    let expected = 2 + 2 * (2 + 3) + 1;
    ensure!(log.len() == expected, "log has {} events, expected {expected}", log.len());
    let seqs = |events: &[MeetingEvent]| events.iter().map(|e| e.seq).collect::<Vec<_>>();
    ensure!(seqs(&whole) == (1..=expected as u64).collect::<Vec<_>>(), "mid-meeting subscriber saw {:?}", seqs(&whole));
    ensure!(whole == log, "streamed events differ from the log");
    ensure!(tail.first().map(|e| e.seq) == Some(resume_from), "resume started at {:?}", tail.first().map(|e| e.seq));
    let mut stitched = head;
    stitched.extend(tail);
    ensure!(stitched == log, "resumed stream does not continue exactly (resumed after finish: {live})");
    Ok(())
}

// -- optional live smoke ------------------------------------------------------------

/// `Ok(Some(reason))` when skipped.
fn live_smoke() -> Result<Option<String>, String> {
    let Ok(url) = std::env::var("THINKTANK_LLM_URL") else {
        return Ok(Some("THINKTANK_LLM_URL is not set".into()));
    };
    let model = std::env::var("THINKTANK_MODEL").unwrap_or_else(|_| "llama3.1".into());
    let gateway = OllamaGateway::new(OllamaConfig::new(&url, &model));
    let status = gateway.health_check();
    if !status.reachable {
        return Ok(Some(format!("{url} is not reachable")));
    }
    if let Some(warning) = status.warning {
        return Ok(Some(warning));
    }
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path()).map_err(|e| e.to_string())?);
    let engine = Engine::new(store, Arc::new(gateway), Arc::new(IdGenerator::new(Arc::new(SystemClock))));
    let project = engine.create_project("Smoke", "", vec![]).map_err(|e| e.to_string())?;
    engine
        .add_expert(&project.id, "Engineer", "A pragmatic software engineer.")
        .map_err(|e| e.to_string())?;
    let minutes = engine
        .run_meeting(MeetingConfig::team(project.id, "Should we write more tests?", 1, vec!["Engineer".into()]))
        .map_err(|e| e.to_string())?;
    ensure!(!minutes.final_summary.trim().is_empty(), "empty final summary");
    ensure!(!engine.export_minutes(&minutes.meeting_id).map_err(|e| e.to_string())?.is_empty(), "empty export");
    Ok(None)
}
