mod common;

use std::sync::Arc;
use std::time::Duration;

use common::*;
use nes_core::model_io::{
    BackendError, Completion, CompletionBackend, PromptBundle, ScriptedBackend,
};
use nes_core::{text_sha256, Location};
use nes_service::{CreateSession, EventRequest, ServiceConfig, ServiceError, SuggestionService};

fn fallback(answer: &str) -> Arc<ScriptedBackend> {
    let mut b = ScriptedBackend::new("fallback");
    b.set_fallback(answer);
    Arc::new(b)
}

fn numbered(n: usize) -> String {
    (1..=n).map(|i| format!("line {i}\n")).collect()
}

fn with_line(text: &str, line: usize, content: &str) -> String {
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            if i + 1 == line {
                format!("{content}\n")
            } else {
                format!("{l}\n")
            }
        })
        .collect()
}

fn session_with_text(service: &SuggestionService, text: &str) -> String {
    service
        .create_session(CreateSession {
            text: Some(text.to_owned()),
            ..Default::default()
        })
        .unwrap()
        .session_id
}

fn push(service: &SuggestionService, id: &str, post: &str) -> nes_service::HistorySummary {
    service
        .push_event(
            id,
            EventRequest {
                post: post.to_owned(),
                ..Default::default()
            },
        )
        .unwrap()
}

#[test]
fn scenario_in_process() {
    let table = Arc::new(scenario_table());
    let service = service(table);
    let id = seeded_session(&service);
    let mut local = run_rounds(&service, &id);
    let state = service.state(&id).unwrap();
    assert_eq!(state.text, scenario_states()[4]);
    assert_eq!(state.text_sha256, text_sha256(&scenario_states()[4]));
    assert_eq!(state.jumps, vec![8, 11, 22]);
    // Seed plus three accepted edits; the last one is still active.
    assert_eq!(state.history.len(), 3);
    assert!(state.active.is_some());
    assert!(median(&mut local) < 50.0);
}

#[test]
fn accepted_edits_match_direct_application() {
    let table = Arc::new(scenario_table());
    let service = service(table);
    let id = seeded_session(&service);
    run_rounds(&service, &id);
    let via_service = service.state(&id).unwrap().text;

    // Applying the scripted windows directly, without the service.
    let (_, edits) = scripted_answers();
    let mut text = scenario_states()[1].clone();
    for (edit, target) in edits.iter().zip(TARGETS) {
        let window = edit
            .trim_start_matches("```typescript\n")
            .trim_end_matches("\n```");
        let lines: Vec<&str> = text.lines().collect();
        let (start, end) = nes_core::dataset::editable_window(lines.len(), target, 16, None);
        let mut out: Vec<&str> = lines[..start - 1].to_vec();
        out.extend(window.split('\n'));
        out.extend_from_slice(&lines[end..]);
        let trailing = if text.ends_with('\n') { "\n" } else { "" };
        text = out.join("\n") + trailing;
    }
    assert_eq!(via_service, text);
}

#[test]
fn session_defaults_and_overrides() {
    let service = service(fallback("KEEP"));
    let info = service.create_session(CreateSession::default()).unwrap();
    assert_eq!(info.history_window, 3);
    assert_eq!(info.latency_budget_ms, 450);
    let info = service
        .create_session(CreateSession {
            history_window: Some(5),
            ..Default::default()
        })
        .unwrap();
    assert_eq!(service.state(&info.session_id).unwrap().history_window, 5);
    assert!(matches!(
        service.create_session(CreateSession {
            history_window: Some(0),
            ..Default::default()
        }),
        Err(ServiceError::InvalidRequest(_))
    ));
}

#[test]
fn capacity_and_eviction() {
    let cfg = ServiceConfig {
        max_sessions: 2,
        ..Default::default()
    };
    let backend = fallback("KEEP");
    let service = SuggestionService::new(cfg, backend.clone(), backend).unwrap();
    service.create_session(CreateSession::default()).unwrap();
    service.create_session(CreateSession::default()).unwrap();
    assert!(matches!(
        service.create_session(CreateSession::default()),
        Err(ServiceError::CapacityExceeded { max: 2 })
    ));
    std::thread::sleep(Duration::from_millis(20));
    assert_eq!(service.evict_idle_longer_than(Duration::from_millis(5)), 2);
    service.create_session(CreateSession::default()).unwrap();
}

#[test]
fn unknown_session() {
    let service = service(fallback("KEEP"));
    assert!(matches!(
        service.state("nope"),
        Err(ServiceError::UnknownSession(_))
    ));
    assert!(matches!(
        service.suggest_location("nope"),
        Err(ServiceError::UnknownSession(_))
    ));
}

#[test]
fn event_branches() {
    let service = service(fallback("KEEP"));
    let text = numbered(40);
    let id = session_with_text(&service, &text);
    let first = with_line(&text, 5, "changed");
    let s = push(&service, &id, &first);
    assert_eq!((s.history_len, s.active_present), (0, true));
    assert_eq!(s.outcome, "started");

    let typed = with_line(&first, 5, "changed more");
    assert_eq!(push(&service, &id, &typed).outcome, "merged");

    let far = with_line(&typed, 30, "far away");
    let s = push(&service, &id, &far);
    assert_eq!((s.history_len, s.active_present), (1, true));
    assert_eq!(s.outcome, "rotated");

    let err = service
        .push_event(
            &id,
            EventRequest {
                pre: Some("stale".into()),
                post: "x".into(),
                cursor_line: None,
            },
        )
        .unwrap_err();
    assert!(matches!(err, ServiceError::StreamDiscontinuity));
}

#[test]
fn first_event_initializes_textless_session() {
    let service = service(fallback("KEEP"));
    let id = service
        .create_session(CreateSession::default())
        .unwrap()
        .session_id;
    let s = service
        .push_event(
            &id,
            EventRequest {
                pre: Some("a\nb\n".into()),
                post: "a\nB\n".into(),
                cursor_line: None,
            },
        )
        .unwrap();
    assert!(s.active_present);
    assert_eq!(service.state(&id).unwrap().text, "a\nB\n");
}

#[test]
fn location_suggestions() {
    let text = numbered(30);
    for (answer, expected) in [
        ("LINE 24", Location::Line(24)),
        ("KEEP", Location::Keep),
        ("no idea", Location::Keep),
        ("LINE 99", Location::Keep),
    ] {
        let service = service(fallback(answer));
        // Cold start: no history at all.
        let id = session_with_text(&service, &text);
        let s = service.suggest_location(&id).unwrap();
        assert_eq!(s.location, Some(expected), "{answer}");
        assert!(s.latency_ms >= s.backend_ms);
        assert!(service.state(&id).unwrap().pending.is_some());
    }
}

#[test]
fn edit_suggestions() {
    let text = numbered(30);
    let service = service(fallback("```\nline 9\nline 10\n```"));
    let id = session_with_text(&service, &text);
    assert!(matches!(
        service.suggest_edit(&id, 1_000_000),
        Err(ServiceError::LineOutOfRange { lines: 30, .. })
    ));
    assert!(matches!(
        service.suggest_edit(&id, 0),
        Err(ServiceError::LineOutOfRange { .. })
    ));

    // The scripted window differs from the real one (lines 1-26), so the
    // suggestion deletes everything else; what matters here is the diff.
    let s = service.suggest_edit(&id, 10).unwrap();
    assert_eq!((s.window_start, s.window_end), (Some(1), Some(26)));
    assert!(!s.unchanged);

    let window: String = (1..=26)
        .map(|i| format!("line {i}"))
        .collect::<Vec<_>>()
        .join("\n");
    let same = service_with(&format!("```\n{window}\n```"));
    let id = session_with_text(&same, &text);
    let s = same.suggest_edit(&id, 10).unwrap();
    assert!(s.unchanged);
    assert_eq!(s.diff, "");

    let one = window.replace("line 10", "line ten");
    let changed = service_with(&format!("```\n{one}\n```"));
    let id = session_with_text(&changed, &text);
    let s = changed.suggest_edit(&id, 10).unwrap();
    assert_eq!(s.diff, "10-| line 10\n10+| line ten");
    let summary = changed.accept(&id, &s.suggestion_id).unwrap();
    assert!(summary.applied);
    let state = changed.state(&id).unwrap();
    assert_eq!(state.text, with_line(&text, 10, "line ten"));
    assert_eq!(state.text_sha256, summary.text_sha256);
    assert!(state.active.is_some());
}

fn service_with(answer: &str) -> SuggestionService {
    service(fallback(answer))
}

#[test]
fn stale_and_pending_rules() {
    let text = numbered(30);
    let window: String = (1..=26)
        .map(|i| format!("line {i}"))
        .collect::<Vec<_>>()
        .join("\n");
    let svc = service_with(&format!(
        "```\n{}\n```",
        window.replace("line 10", "line ten")
    ));
    let id = session_with_text(&svc, &text);

    // Intervening edit inside the window: stale.
    let s = svc.suggest_edit(&id, 10).unwrap();
    push(&svc, &id, &with_line(&text, 12, "typed"));
    assert!(matches!(
        svc.accept(&id, &s.suggestion_id),
        Err(ServiceError::StaleSuggestion)
    ));
    assert!(svc.state(&id).unwrap().pending.is_none());

    // Reject clears; accept and a second reject then find nothing.
    let s = svc.suggest_location(&id).unwrap();
    assert!(matches!(
        svc.reject(&id, "wrong"),
        Err(ServiceError::NoPending)
    ));
    svc.reject(&id, &s.suggestion_id).unwrap();
    assert!(matches!(
        svc.accept(&id, &s.suggestion_id),
        Err(ServiceError::NoPending)
    ));
    assert!(matches!(
        svc.reject(&id, &s.suggestion_id),
        Err(ServiceError::NoPending)
    ));
    assert_eq!(svc.state(&id).unwrap().rejections, 1);

    // A new suggestion replaces the pending one.
    let a = svc.suggest_location(&id).unwrap();
    let b = svc.suggest_location(&id).unwrap();
    assert!(matches!(
        svc.accept(&id, &a.suggestion_id),
        Err(ServiceError::NoPending)
    ));
    svc.reject(&id, &b.suggestion_id).unwrap();
}

#[test]
fn edit_below_pending_window_does_not_invalidate() {
    let text = numbered(60);
    let window: String = (1..=26)
        .map(|i| format!("line {i}"))
        .collect::<Vec<_>>()
        .join("\n");
    let svc = service_with(&format!(
        "```\n{}\n```",
        window.replace("line 10", "line ten")
    ));
    let id = session_with_text(&svc, &text);
    let s = svc.suggest_edit(&id, 10).unwrap();
    let edited = with_line(&text, 50, "far below");
    push(&svc, &id, &edited);
    svc.accept(&id, &s.suggestion_id).unwrap();
    assert_eq!(
        svc.state(&id).unwrap().text,
        with_line(&edited, 10, "line ten")
    );
}

#[test]
fn location_accept_records_jump() {
    let svc = service_with("LINE 7");
    let text = numbered(10);
    let id = session_with_text(&svc, &text);
    let s = svc.suggest_location(&id).unwrap();
    let summary = svc.accept(&id, &s.suggestion_id).unwrap();
    assert_eq!(summary.jump_target, Some(7));
    assert_eq!(summary.cursor_line, 7);
    let state = svc.state(&id).unwrap();
    assert_eq!(state.text, text);
    assert_eq!(state.jumps, vec![7]);
}

struct Slow;

impl CompletionBackend for Slow {
    fn id(&self) -> String {
        "slow".into()
    }

    fn complete(&self, _: &PromptBundle) -> Result<Completion, BackendError> {
        Err(BackendError::Timeout { after_ms: 10 })
    }
}

#[test]
fn backend_errors_leave_session_unchanged() {
    let svc = service(Arc::new(Slow));
    let id = session_with_text(&svc, "a\nb");
    let before = svc.state(&id).unwrap();
    let err = svc.suggest_location(&id).unwrap_err();
    assert_eq!(err.code(), "backend_timeout");
    assert_eq!(svc.state(&id).unwrap(), before);
}

#[test]
fn parallel_sessions() {
    let svc = Arc::new(service_with("KEEP"));
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let svc = svc.clone();
            std::thread::spawn(move || {
                let text = numbered(20);
                let id = session_with_text(&svc, &text);
                let mut current = text;
                for j in 0..20 {
                    current = with_line(&current, 1 + (j * 7 + i) % 20, &format!("t{i} e{j}"));
                    push(&svc, &id, &current);
                    svc.suggest_location(&id).unwrap();
                }
                assert_eq!(svc.state(&id).unwrap().text, current);
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(svc.session_count(), 8);
}
