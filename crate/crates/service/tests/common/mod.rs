#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use nes_core::dataset::editable_window;
use nes_core::diff::{join_lines, split_lines};
use nes_core::model_io::{CompletionBackend, QueueBackend, ScriptedBackend};
use nes_core::Location;
use nes_service::{CreateSession, EventRequest, ServiceConfig, SuggestionService};

pub fn fixture(name: &str) -> String {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "fixtures", name]
        .iter()
        .collect();
    std::fs::read_to_string(path).unwrap()
}

/// step0 (before the seeding edit) through step4 (all call sites updated).
pub fn scenario_states() -> Vec<String> {
    (0..=4)
        .map(|i| fixture(&format!("button_refactor/step{i}.tsx")))
        .collect()
}

/// Jump targets for the three suggestion rounds.
pub const TARGETS: [usize; 3] = [8, 11, 22];

pub fn service(backend: Arc<dyn CompletionBackend>) -> SuggestionService {
    SuggestionService::new(ServiceConfig::default(), backend.clone(), backend).unwrap()
}

/// Seeds the session with the first manual edit and returns its id.
pub fn seeded_session(service: &SuggestionService) -> String {
    let states = scenario_states();
    let info = service
        .create_session(CreateSession {
            text: Some(states[0].clone()),
            language: Some("TypeScript".into()),
            ..Default::default()
        })
        .unwrap();
    service
        .push_event(
            &info.session_id,
            EventRequest {
                pre: None,
                post: states[1].clone(),
                cursor_line: Some(5),
            },
        )
        .unwrap();
    info.session_id
}

/// Model answers that carry the scenario forward, in request order.
pub fn scripted_answers() -> (Vec<String>, Vec<String>) {
    let states = scenario_states();
    let mut locations = Vec::new();
    let mut edits = Vec::new();
    for (round, target) in TARGETS.iter().enumerate() {
        locations.push(format!("LINE {target}"));
        let (next, _) = split_lines(&states[round + 2]);
        let (start, end) = editable_window(next.len(), *target, 16, None);
        edits.push(format!(
            "```typescript\n{}\n```",
            join_lines(&next[start - 1..end], false)
        ));
    }
    (locations, edits)
}

/// One location + edit backend that answer every scenario prompt, recorded
/// by running the scenario once against queue backends.
pub fn scenario_table() -> ScriptedBackend {
    let (locations, edits) = scripted_answers();
    let location = Arc::new(QueueBackend::new("location", locations));
    let edit = Arc::new(QueueBackend::new("edit", edits));
    let shadow =
        SuggestionService::new(ServiceConfig::default(), location.clone(), edit.clone()).unwrap();
    let id = seeded_session(&shadow);
    run_rounds(&shadow, &id);
    assert_eq!(location.remaining() + edit.remaining(), 0);
    let mut entries: Vec<_> = location.recorded().entries().into_iter().cloned().collect();
    entries.extend(edit.recorded().entries().into_iter().cloned());
    ScriptedBackend::from_entries("button-refactor", entries)
}

/// Three suggest → accept rounds; returns the local processing times.
pub fn run_rounds(service: &SuggestionService, id: &str) -> Vec<f64> {
    let mut local = Vec::new();
    for target in TARGETS {
        let jump = service.suggest_location(id).unwrap();
        assert_eq!(jump.location, Some(Location::Line(target)));
        local.push(jump.local_ms);
        service.accept(id, &jump.suggestion_id).unwrap();
        let edit = service.suggest_edit(id, target).unwrap();
        assert!(!edit.unchanged);
        local.push(edit.local_ms);
        let applied = service.accept(id, &edit.suggestion_id).unwrap();
        assert!(applied.applied);
    }
    local
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}
